//! Randomized AIXI-Shape / AIXI-Color scene generation and dataset persistence.

pub mod grid;
mod sampler;
mod store;

pub use sampler::{derive_seed, sample_scene};
pub use store::{
    generate_dataset, load_dataset, Dataset, DatasetManifest, GtMapRef, LoadedSample, SampleRecord, Split,
    INCOMPLETE_MARKER, MANIFEST_FILE, SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::scene::{DatasetKind, ShapeKind};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("could not place objects after {0} scene resamples; sizes too large for the image")]
    Infeasible(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: image codec error: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: malformed grid file: {message}")]
    Grid { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checksum mismatch for {path}")]
    Checksum { path: PathBuf },
    #[error("manifest schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("dataset at {0} is incomplete (generation did not finish)")]
    Incomplete(PathBuf),
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
}

impl DatagenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatagenError::Io { path: path.into(), source }
    }
}

/// Inclusive size range in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRanges {
    pub circle: SizeRange,
    pub square: SizeRange,
    pub cross: SizeRange,
}

impl SizeRanges {
    pub fn get(&self, shape: ShapeKind) -> SizeRange {
        match shape {
            ShapeKind::Circle => self.circle,
            ShapeKind::Square => self.square,
            ShapeKind::Cross => self.cross,
        }
    }
}

impl Default for SizeRanges {
    fn default() -> Self {
        Self { circle: SizeRange::new(8, 16), square: SizeRange::new(8, 16), cross: SizeRange::new(10, 18) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub dataset_kind: DatasetKind,
    pub n_train: usize,
    pub n_val: usize,
    pub width: usize,
    pub height: usize,
    pub size_ranges: SizeRanges,
    pub intensity_catalog: Vec<u8>,
    pub max_place_attempts: usize,
    pub max_scene_resamples: usize,
    pub master_seed: u64,
}

pub const SHAPE_INTENSITY: u8 = 255;
pub const COLOR_CATALOG: [u8; 3] = [85, 170, 255];

impl GenConfig {
    pub fn new(dataset_kind: DatasetKind) -> Self {
        let intensity_catalog = match dataset_kind {
            DatasetKind::Shape => vec![SHAPE_INTENSITY],
            DatasetKind::Color => COLOR_CATALOG.to_vec(),
        };
        Self {
            dataset_kind,
            n_train: 1000,
            n_val: 200,
            width: 128,
            height: 128,
            size_ranges: SizeRanges::default(),
            intensity_catalog,
            max_place_attempts: 200,
            max_scene_resamples: 100,
            master_seed: 0,
        }
    }

    pub fn with_counts(mut self, n_train: usize, n_val: usize) -> Self {
        self.n_train = n_train;
        self.n_val = n_val;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive".into());
        }
        let shapes: &[ShapeKind] = match self.dataset_kind {
            DatasetKind::Shape => &ShapeKind::ALL,
            DatasetKind::Color => &[ShapeKind::Circle],
        };
        for &shape in shapes {
            let r = self.size_ranges.get(shape);
            if r.min > r.max {
                return bad(format!("{shape:?} size range is empty ({}..={})", r.min, r.max));
            }
            if 2 * r.max + 1 > self.width.min(self.height) {
                return bad(format!("{shape:?} size {} does not fit a {}x{} image", r.max, self.width, self.height));
            }
        }
        let expected = match self.dataset_kind {
            DatasetKind::Shape => 1,
            DatasetKind::Color => 3,
        };
        if self.intensity_catalog.len() != expected {
            return bad(format!("{} dataset needs {expected} intensities", self.dataset_kind));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.intensity_catalog {
            if v == 0 || !seen.insert(v) {
                return bad(format!("intensities must be distinct and in [1, 255], got {:?}", self.intensity_catalog));
            }
        }
        if self.max_place_attempts == 0 || self.max_scene_resamples == 0 {
            return bad("attempt limits must be positive".into());
        }
        Ok(())
    }
}
