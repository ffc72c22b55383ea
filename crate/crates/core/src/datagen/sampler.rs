use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatagenError, GenConfig};
use crate::scene::{overlaps, DatasetKind, PatternDescriptor, Scene, SceneObject, ShapeKind};

/// Objects per pattern are drawn uniformly from `0..=MAX_PER_PATTERN`.
pub const MAX_PER_PATTERN: usize = 2;
pub const N_PATTERNS: usize = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed for item `index` of `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

pub(crate) fn catalog(config: &GenConfig) -> Vec<PatternDescriptor> {
    match config.dataset_kind {
        DatasetKind::Shape => ShapeKind::ALL.iter().map(|&s| PatternDescriptor::Shape(s)).collect(),
        DatasetKind::Color => config.intensity_catalog.iter().map(|&v| PatternDescriptor::Intensity(v)).collect(),
    }
}

fn draw_counts(rng: &mut ChaCha8Rng) -> [usize; N_PATTERNS] {
    loop {
        let counts: [usize; N_PATTERNS] = std::array::from_fn(|_| rng.random_range(0..=MAX_PER_PATTERN));
        if counts.iter().any(|&c| c > 0) {
            return counts;
        }
    }
}

/// Draws one scene: per-pattern counts, then rejection-sampled placement.
/// Deterministic in `rng_seed`.
pub fn sample_scene(config: &GenConfig, rng_seed: u64) -> Result<Scene, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let kind = config.dataset_kind;
    'scene: for _ in 0..config.max_scene_resamples {
        let counts = draw_counts(&mut rng);
        let mut objects: Vec<SceneObject> = Vec::with_capacity(counts.iter().sum());
        for (pattern_index, &count) in counts.iter().enumerate() {
            let (shape, intensity) = match kind {
                DatasetKind::Shape => (ShapeKind::ALL[pattern_index], config.intensity_catalog[0]),
                DatasetKind::Color => (ShapeKind::Circle, config.intensity_catalog[pattern_index]),
            };
            let range = config.size_ranges.get(shape);
            for _ in 0..count {
                let mut placed = false;
                for _ in 0..config.max_place_attempts {
                    let size = rng.random_range(range.min..=range.max);
                    let row = rng.random_range(size..config.height - size);
                    let col = rng.random_range(size..config.width - size);
                    let candidate =
                        SceneObject { id: objects.len(), shape, center: (row, col), size, intensity, pattern_index };
                    if objects.iter().all(|o| !overlaps(o, &candidate)) {
                        objects.push(candidate);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'scene;
                }
            }
        }
        return Ok(Scene {
            width: config.width,
            height: config.height,
            objects,
            dataset_kind: kind,
            pattern_catalog: catalog(config),
            rng_seed,
        });
    }
    Err(DatagenError::Infeasible(config.max_scene_resamples))
}
