//! Symbolic scenes built from geometric pattern objects, and their rasterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("object {id} footprint exceeds the {width}x{height} image bounds")]
    OutOfBounds { id: usize, width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Cross];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Shape,
    Color,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 2] = [DatasetKind::Shape, DatasetKind::Color];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Shape => "shape",
            DatasetKind::Color => "color",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "shape" | "aixi-shape" => Ok(DatasetKind::Shape),
            "color" | "aixi-color" => Ok(DatasetKind::Color),
            other => Err(format!("unknown dataset kind `{other}` (expected shape or color)")),
        }
    }
}

/// What distinguishes one pattern from another within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternDescriptor {
    Shape(ShapeKind),
    Intensity(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub shape: ShapeKind,
    /// (row, col) in pixels.
    pub center: (usize, usize),
    /// Radius for circles, half-side for squares, half-arm length for crosses.
    pub size: usize,
    pub intensity: u8,
    pub pattern_index: usize,
}

/// Inclusive pixel bounding box, signed so it can describe out-of-bounds footprints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_min: i64,
    pub row_max: i64,
    pub col_min: i64,
    pub col_max: i64,
}

impl BoundingBox {
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.row_min <= other.row_max
            && other.row_min <= self.row_max
            && self.col_min <= other.col_max
            && other.col_min <= self.col_max
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.row_min >= 0
            && self.col_min >= 0
            && self.row_max < height as i64
            && self.col_max < width as i64
    }
}

/// Bar thickness of a cross with the given half-arm length.
pub fn cross_thickness(size: usize) -> usize {
    (size / 3).max(1)
}

impl SceneObject {
    pub fn bounding_box(&self) -> BoundingBox {
        let (r, c) = (self.center.0 as i64, self.center.1 as i64);
        let s = self.size as i64;
        BoundingBox { row_min: r - s, row_max: r + s, col_min: c - s, col_max: c + s }
    }

    /// Pixel membership test in absolute image coordinates.
    pub fn contains(&self, row: i64, col: i64) -> bool {
        let dr = row - self.center.0 as i64;
        let dc = col - self.center.1 as i64;
        let s = self.size as i64;
        match self.shape {
            ShapeKind::Circle => dr * dr + dc * dc <= s * s,
            ShapeKind::Square => dr.abs() <= s && dc.abs() <= s,
            ShapeKind::Cross => {
                let t = cross_thickness(self.size) as i64;
                // bar band [-(t-1)/2, t/2] around the center line
                let lo = -(t - 1) / 2;
                let hi = t / 2;
                let in_band = |d: i64| d >= lo && d <= hi;
                (in_band(dr) && dc.abs() <= s) || (in_band(dc) && dr.abs() <= s)
            }
        }
    }

    /// Pixels covered by the object, row-major, without bounds clipping.
    pub fn footprint(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let bb = self.bounding_box();
        (bb.row_min..=bb.row_max)
            .flat_map(move |r| (bb.col_min..=bb.col_max).map(move |c| (r, c)))
            .filter(move |&(r, c)| self.contains(r, c))
    }
}

/// Dense boolean pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl Bitmask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.width + col] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Flat indices of set pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn intersects(&self, other: &Bitmask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }
}

pub fn object_mask(obj: &SceneObject, width: usize, height: usize) -> Result<Bitmask, SceneError> {
    if !obj.bounding_box().fits(width, height) {
        return Err(SceneError::OutOfBounds { id: obj.id, width, height });
    }
    let mut mask = Bitmask::empty(width, height);
    for (r, c) in obj.footprint() {
        mask.set(r as usize, c as usize);
    }
    Ok(mask)
}

/// Exact pixel-intersection test; the bounding boxes only pre-filter.
pub fn overlaps(a: &SceneObject, b: &SceneObject) -> bool {
    if !a.bounding_box().intersects(&b.bounding_box()) {
        return false;
    }
    a.footprint().any(|(r, c)| b.contains(r, c))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<SceneObject>,
    pub dataset_kind: DatasetKind,
    pub pattern_catalog: Vec<PatternDescriptor>,
    pub rng_seed: u64,
}

impl Scene {
    pub fn n_patterns(&self) -> usize {
        self.pattern_catalog.len()
    }

    pub fn masks(&self) -> Result<Vec<Bitmask>, SceneError> {
        self.objects.iter().map(|o| object_mask(o, self.width, self.height)).collect()
    }

    /// Bounds, pairwise disjointness, and non-empty footprints.
    pub fn validate(&self) -> Result<(), String> {
        for obj in &self.objects {
            if !obj.bounding_box().fits(self.width, self.height) {
                return Err(format!("object {} out of bounds", obj.id));
            }
            if obj.pattern_index >= self.pattern_catalog.len() {
                return Err(format!("object {} has pattern index {} outside the catalog", obj.id, obj.pattern_index));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if overlaps(a, b) {
                    return Err(format!("objects {} and {} overlap", a.id, b.id));
                }
            }
        }
        Ok(())
    }
}

/// Single-channel 8-bit image, row-major, background 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }
}

pub fn render_scene(scene: &Scene) -> Image {
    let mut img = Image::black(scene.width, scene.height);
    for obj in &scene.objects {
        for (r, c) in obj.footprint() {
            if r < 0 || c < 0 || r >= scene.height as i64 || c >= scene.width as i64 {
                continue;
            }
            let px = &mut img.pixels[r as usize * scene.width + c as usize];
            if *px == 0 {
                *px = obj.intensity;
            }
        }
    }
    img
}
