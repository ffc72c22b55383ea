use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, grid, sample_scene, DatagenError, GenConfig};
use crate::attribution::{ground_truth_map, pattern_counts, AttributionFunction, FunctionKind};
use crate::metrics::SaliencyMap;
use crate::scene::{render_scene, Image, Scene};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INCOMPLETE_MARKER: &str = ".incomplete";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMapRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub split: Split,
    pub index: usize,
    pub image: String,
    pub image_sha256: String,
    pub scene: Scene,
    pub labels: BTreeMap<FunctionKind, f64>,
    pub gt_maps: BTreeMap<FunctionKind, GtMapRef>,
}

impl SampleRecord {
    /// Stable identifier, e.g. `val_00012`.
    pub fn sample_id(&self) -> String {
        format!("{}_{:05}", self.split.name(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub config: GenConfig,
    pub records: Vec<SampleRecord>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn encode_png(img: &Image) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(&img.pixels, img.width as u32, img.height as u32, ExtendedColorType::L8)
        .map_err(|e| e.to_string())?;
    Ok(buf)
}

pub(crate) fn decode_png(bytes: &[u8]) -> Result<Image, String> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let luma = decoded.to_luma8();
    Ok(Image { width: luma.width() as usize, height: luma.height() as usize, pixels: luma.into_raw() })
}

fn write_sample(root: &Path, config: &GenConfig, split: Split, index: usize) -> Result<SampleRecord, DatagenError> {
    let seed = derive_seed(config.master_seed, split.stream(), index as u64);
    let scene = sample_scene(config, seed)?;
    let stem = format!("{}_{index:05}", split.name());

    let image_rel = format!("images/{stem}.png");
    let png = encode_png(&render_scene(&scene))
        .map_err(|message| DatagenError::Png { path: root.join(&image_rel), message })?;
    fs::write(root.join(&image_rel), &png).map_err(|e| DatagenError::io(root.join(&image_rel), e))?;

    let counts = pattern_counts(&scene);
    let mut labels = BTreeMap::new();
    let mut gt_maps = BTreeMap::new();
    for kind in FunctionKind::ALL {
        let function = AttributionFunction::new(kind);
        labels.insert(kind, function.eval(&counts)?);
        let rel = format!("gt/{stem}_{kind}.grid");
        let text = grid::encode(&ground_truth_map(&scene, &function));
        fs::write(root.join(&rel), &text).map_err(|e| DatagenError::io(root.join(&rel), e))?;
        gt_maps.insert(kind, GtMapRef { path: rel, sha256: sha256_hex(text.as_bytes()) });
    }
    Ok(SampleRecord { split, index, image: image_rel, image_sha256: sha256_hex(&png), scene, labels, gt_maps })
}

/// Writes images, ground-truth grids and `manifest.json` under `out_dir`.
///
/// A `.incomplete` marker exists for the duration of the write and is left
/// behind if generation fails, so a half-written dataset is never loaded.
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<DatasetManifest, DatagenError> {
    config.validate()?;
    for sub in ["images", "gt"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(|e| DatagenError::io(out_dir.join(sub), e))?;
    }
    let marker = out_dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"").map_err(|e| DatagenError::io(&marker, e))?;

    let jobs: Vec<(Split, usize)> = (0..config.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..config.n_val).map(|i| (Split::Val, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(split, index)| write_sample(out_dir, config, split, index))
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = DatasetManifest { schema_version: SCHEMA_VERSION, config: config.clone(), records };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| DatagenError::io(&manifest_path, e))?;
    fs::remove_file(&marker).map_err(|e| DatagenError::io(&marker, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: Image,
    pub gt_maps: BTreeMap<FunctionKind, SaliencyMap>,
}

/// An opened dataset; records are read and verified lazily on iteration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    let root = if path.is_file() { path.parent().unwrap_or(Path::new(".")).to_path_buf() } else { path.to_path_buf() };
    if root.join(INCOMPLETE_MARKER).exists() {
        return Err(DatagenError::Incomplete(root));
    }
    let manifest_path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| DatagenError::io(&manifest_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(DatagenError::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    let manifest: DatasetManifest = serde_json::from_value(value)?;
    Ok(Dataset { root, manifest })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn load_record(&self, record: &SampleRecord) -> Result<LoadedSample, DatagenError> {
        let image_path = self.root.join(&record.image);
        let bytes = fs::read(&image_path).map_err(|e| DatagenError::io(&image_path, e))?;
        if sha256_hex(&bytes) != record.image_sha256 {
            return Err(DatagenError::Checksum { path: image_path });
        }
        let image = decode_png(&bytes).map_err(|message| DatagenError::Png { path: image_path.clone(), message })?;
        let mut gt_maps = BTreeMap::new();
        for (&kind, gt) in &record.gt_maps {
            let path = self.root.join(&gt.path);
            let text = fs::read_to_string(&path).map_err(|e| DatagenError::io(&path, e))?;
            if sha256_hex(text.as_bytes()) != gt.sha256 {
                return Err(DatagenError::Checksum { path });
            }
            let map = grid::decode(&text).map_err(|message| DatagenError::Grid { path: path.clone(), message })?;
            gt_maps.insert(kind, map);
        }
        Ok(LoadedSample { record: record.clone(), image, gt_maps })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<LoadedSample, DatagenError>> + '_ {
        self.manifest.records.iter().map(|r| self.load_record(r))
    }

    /// Validation records when the split is non-empty, otherwise everything.
    pub fn evaluation_records(&self) -> Vec<&SampleRecord> {
        let val: Vec<_> = self.manifest.records.iter().filter(|r| r.split == Split::Val).collect();
        if val.is_empty() {
            self.manifest.records.iter().collect()
        } else {
            val
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::eval_ssin;
    use crate::scene::DatasetKind;

    #[test]
    fn single_validation_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(DatasetKind::Shape).with_counts(0, 1).with_seed(3);
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].split, Split::Val);
        assert!(!dir.path().join(INCOMPLETE_MARKER).exists());
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(DatasetKind::Color).with_counts(4, 2).with_seed(11);
        generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
        assert_eq!(read(a.path(), "images/val_00001.png"), read(b.path(), "images/val_00001.png"));
    }

    #[test]
    fn load_round_trips_and_labels_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(DatasetKind::Shape).with_counts(5, 3).with_seed(5);
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let first: Vec<_> = ds.iter().map(Result::unwrap).collect();
        let second: Vec<_> = ds.iter().map(Result::unwrap).collect();
        assert_eq!(first.len(), 8);
        for ((a, b), rec) in first.iter().zip(&second).zip(&m.records) {
            assert_eq!(a.record, *rec);
            assert_eq!(a.image, b.image);
            assert_eq!(a.image, render_scene(&rec.scene));
            let counts = pattern_counts(&a.record.scene);
            assert_eq!(a.record.labels[&FunctionKind::Ssin], eval_ssin(&counts).unwrap());
            for kind in FunctionKind::ALL {
                let f = AttributionFunction::new(kind);
                assert_eq!(a.gt_maps[&kind], ground_truth_map(&rec.scene, &f));
            }
        }
        assert_eq!(ds.evaluation_records().len(), 3);
    }

    #[test]
    fn corrupted_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(DatasetKind::Shape).with_counts(2, 0).with_seed(1);
        generate_dataset(&cfg, dir.path()).unwrap();
        let victim = dir.path().join("images/train_00001.png");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 20;
        bytes[last] ^= 0xff;
        fs::write(&victim, bytes).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let results: Vec<_> = ds.iter().collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(DatagenError::Checksum { path }) => assert!(path.ends_with("images/train_00001.png")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatagenError::Io { .. })));

        let cfg = GenConfig::new(DatasetKind::Shape).with_counts(1, 0);
        generate_dataset(&cfg, dir.path()).unwrap();
        fs::remove_file(dir.path().join("gt/train_00000_class.grid")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert!(matches!(ds.iter().next().unwrap(), Err(DatagenError::Io { .. })));

        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatagenError::SchemaVersion { found: 9, .. })));

        fs::write(dir.path().join(INCOMPLETE_MARKER), b"").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatagenError::Incomplete(_))));
    }
}
