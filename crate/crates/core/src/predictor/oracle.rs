use rayon::prelude::*;

use super::{PredictError, Predictor, PredictorMeta};
use crate::attribution::AttributionFunction;
use crate::scene::{render_scene, Image, Scene};

pub const DEFAULT_PRESENCE_THRESHOLD: f64 = 0.5;

/// The attribution function used directly as the model. It reads pixels:
/// an object counts as present when at least `presence_threshold` of its
/// footprint still carries its intensity.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    scene: Scene,
    function: AttributionFunction,
    presence_threshold: f64,
    footprints: Vec<Vec<usize>>,
    meta: PredictorMeta,
}

impl OraclePredictor {
    pub fn new(scene: Scene, function: AttributionFunction) -> Self {
        Self::with_threshold(scene, function, DEFAULT_PRESENCE_THRESHOLD)
    }

    pub fn with_threshold(scene: Scene, function: AttributionFunction, presence_threshold: f64) -> Self {
        assert!(
            presence_threshold > 0.0 && presence_threshold <= 1.0,
            "presence threshold must lie in (0, 1]"
        );
        let footprints = scene
            .objects
            .iter()
            .map(|o| {
                o.footprint()
                    .filter(|&(r, c)| r >= 0 && c >= 0 && (r as usize) < scene.height && (c as usize) < scene.width)
                    .map(|(r, c)| r as usize * scene.width + c as usize)
                    .collect()
            })
            .collect();
        let meta = PredictorMeta {
            name: format!("oracle-{}", function.kind),
            output_range: (0.0, 1.0),
            is_classifier: function.kind.is_classifier(),
            raw_logit: false,
        };
        Self { scene, function, presence_threshold, footprints, meta }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Per-object presence as read from the pixels.
    pub fn presence(&self, image: &Image) -> Result<Vec<bool>, PredictError> {
        if image.width != self.scene.width || image.height != self.scene.height {
            return Err(PredictError::DimensionMismatch {
                want_w: self.scene.width,
                want_h: self.scene.height,
                got_w: image.width,
                got_h: image.height,
            });
        }
        Ok(self
            .scene
            .objects
            .iter()
            .zip(&self.footprints)
            .map(|(obj, fp)| {
                let kept = fp.iter().filter(|&&i| image.pixels[i] == obj.intensity).count();
                kept as f64 >= self.presence_threshold * fp.len() as f64
            })
            .collect())
    }
}

impl Predictor for OraclePredictor {
    fn meta(&self) -> &PredictorMeta {
        &self.meta
    }

    fn predict(&self, image: &Image) -> Result<f64, PredictError> {
        let present = self.presence(image)?;
        let mut counts = vec![0; self.scene.n_patterns()];
        for (obj, p) in self.scene.objects.iter().zip(present) {
            if p {
                counts[obj.pattern_index] += 1;
            }
        }
        Ok(self.function.eval(&counts)?)
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<f64>, PredictError> {
        images.par_iter().map(|img| self.predict(img)).collect()
    }
}

/// Oracle over a whole set of scenes that identifies, from pixels alone,
/// which scene an image is an object-occlusion of. Lets the exact oracle sit
/// behind the bridge protocol, which carries images only.
pub struct SceneLookupOracle {
    oracles: Vec<OraclePredictor>,
    renders: Vec<Image>,
    /// Flat pixel index -> (scene, object) pairs covering it.
    index: Vec<Vec<(u32, u16)>>,
    width: usize,
    height: usize,
    last_hit: std::sync::atomic::AtomicUsize,
    meta: PredictorMeta,
}

impl SceneLookupOracle {
    pub fn new(scenes: Vec<Scene>, function: AttributionFunction) -> Result<Self, PredictError> {
        let first = scenes.first().ok_or_else(|| PredictError::Other("no scenes to serve".into()))?;
        let (width, height) = (first.width, first.height);
        let mut index = vec![Vec::new(); width * height];
        let mut oracles = Vec::with_capacity(scenes.len());
        let mut renders = Vec::with_capacity(scenes.len());
        for (si, scene) in scenes.into_iter().enumerate() {
            if scene.width != width || scene.height != height {
                return Err(PredictError::DimensionMismatch {
                    want_w: width,
                    want_h: height,
                    got_w: scene.width,
                    got_h: scene.height,
                });
            }
            renders.push(render_scene(&scene));
            let oracle = OraclePredictor::with_threshold(scene, function.clone(), 1.0);
            for (oi, fp) in oracle.footprints.iter().enumerate() {
                for &px in fp {
                    index[px].push((si as u32, oi as u16));
                }
            }
            oracles.push(oracle);
        }
        let meta = PredictorMeta {
            name: format!("scene-lookup-oracle-{}", function.kind),
            output_range: (0.0, 1.0),
            is_classifier: function.kind.is_classifier(),
            raw_logit: false,
        };
        Ok(Self { oracles, renders, index, width, height, last_hit: Default::default(), meta })
    }

    /// Whether `image` is exactly `scene` with some objects blacked out.
    fn matches(&self, si: usize, image: &Image) -> bool {
        let oracle = &self.oracles[si];
        let render = &self.renders[si];
        let mut covered = vec![false; image.pixels.len()];
        for fp in &oracle.footprints {
            let kept = fp.iter().filter(|&&i| image.pixels[i] == render.pixels[i]).count();
            if kept != 0 && kept != fp.len() {
                return false;
            }
            if kept == 0 && fp.iter().any(|&i| image.pixels[i] != 0) {
                return false;
            }
            for &i in fp {
                covered[i] = true;
            }
        }
        image.pixels.iter().zip(covered).all(|(&p, c)| c || p == 0)
    }

    fn locate(&self, image: &Image) -> Option<usize> {
        let last = self.last_hit.load(std::sync::atomic::Ordering::Relaxed);
        if last < self.oracles.len() && self.matches(last, image) {
            return Some(last);
        }
        let Some(px) = image.pixels.iter().position(|&p| p != 0) else {
            // all black: every scene agrees, the output depends on counts only
            return Some(0);
        };
        let mut candidates: Vec<u32> = self.index[px].iter().map(|&(s, _)| s).collect();
        candidates.dedup();
        let hit = candidates.into_iter().map(|s| s as usize).find(|&s| self.matches(s, image))?;
        self.last_hit.store(hit, std::sync::atomic::Ordering::Relaxed);
        Some(hit)
    }
}

impl Predictor for SceneLookupOracle {
    fn meta(&self) -> &PredictorMeta {
        &self.meta
    }

    fn predict(&self, image: &Image) -> Result<f64, PredictError> {
        if image.width != self.width || image.height != self.height {
            return Err(PredictError::DimensionMismatch {
                want_w: self.width,
                want_h: self.height,
                got_w: image.width,
                got_h: image.height,
            });
        }
        let si = self
            .locate(image)
            .ok_or_else(|| PredictError::Other("image is not an occlusion of any known scene".into()))?;
        self.oracles[si].predict(image)
    }
}
