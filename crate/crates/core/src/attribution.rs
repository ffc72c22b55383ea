//! Label-generating attribution functions over pattern counts, and the
//! ground-truth saliency maps derived from their weights.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::metrics::SaliencyMap;
use crate::scene::Scene;

/// Weights shared by `ssin` and `suum`, one per pattern in catalog order.
pub const REGRESSION_WEIGHTS: [f64; 3] = [0.55, 0.27, 0.18];
/// Weights of the first two patterns for `class`.
pub const CLASS_WEIGHTS: [f64; 2] = [1.0, 0.5];
/// Largest per-pattern count; maps counts into [0, 1].
pub const MAX_COUNT: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttributionError {
    #[error("pattern index {index} out of range for a catalog of {len}")]
    PatternOutOfRange { index: usize, len: usize },
    #[error("{function} expects {expected} counts, got {got}")]
    Arity { function: FunctionKind, expected: &'static str, got: usize },
    #[error("count {count} exceeds the per-pattern maximum of {MAX_COUNT}")]
    CountOutOfRange { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Ssin,
    Suum,
    Class,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 3] = [FunctionKind::Ssin, FunctionKind::Suum, FunctionKind::Class];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Ssin => "ssin",
            FunctionKind::Suum => "suum",
            FunctionKind::Class => "class",
        }
    }

    pub fn is_classifier(self) -> bool {
        self == FunctionKind::Class
    }
}

impl std::fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FunctionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ssin" => Ok(FunctionKind::Ssin),
            "suum" => Ok(FunctionKind::Suum),
            "class" => Ok(FunctionKind::Class),
            other => Err(format!("unknown function `{other}` (expected ssin, suum or class)")),
        }
    }
}

/// An attribution function F together with its ground-truth weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionFunction {
    pub kind: FunctionKind,
    pub weights: Vec<f64>,
    pub g_normalizer: usize,
}

impl AttributionFunction {
    pub fn new(kind: FunctionKind) -> Self {
        let weights = match kind {
            FunctionKind::Ssin | FunctionKind::Suum => REGRESSION_WEIGHTS.to_vec(),
            FunctionKind::Class => CLASS_WEIGHTS.to_vec(),
        };
        Self { kind, weights, g_normalizer: MAX_COUNT }
    }

    pub fn eval(&self, counts: &[usize]) -> Result<f64, AttributionError> {
        match self.kind {
            FunctionKind::Ssin => eval_ssin(counts),
            FunctionKind::Suum => eval_suum(counts),
            FunctionKind::Class => eval_class(counts).map(f64::from),
        }
    }

    /// Ground-truth importance of a pattern; patterns beyond the weight
    /// vector carry zero.
    pub fn pattern_weight(&self, pattern_index: usize) -> f64 {
        self.weights.get(pattern_index).map_or(0.0, |w| w.abs())
    }
}

pub fn pattern_count(scene: &Scene, pattern_index: usize) -> Result<usize, AttributionError> {
    let len = scene.pattern_catalog.len();
    if pattern_index >= len {
        return Err(AttributionError::PatternOutOfRange { index: pattern_index, len });
    }
    Ok(scene.objects.iter().filter(|o| o.pattern_index == pattern_index).count())
}

/// g(p_i, I) for every pattern of the catalog.
pub fn pattern_counts(scene: &Scene) -> Vec<usize> {
    let mut counts = vec![0; scene.pattern_catalog.len()];
    for obj in &scene.objects {
        counts[obj.pattern_index] += 1;
    }
    counts
}

fn regression_counts(function: FunctionKind, counts: &[usize]) -> Result<[f64; 3], AttributionError> {
    if counts.len() != 3 {
        return Err(AttributionError::Arity { function, expected: "3", got: counts.len() });
    }
    let mut out = [0.0; 3];
    for (slot, &c) in out.iter_mut().zip(counts) {
        if c > MAX_COUNT {
            return Err(AttributionError::CountOutOfRange { count: c });
        }
        *slot = c as f64 / MAX_COUNT as f64;
    }
    Ok(out)
}

pub fn eval_ssin(counts: &[usize]) -> Result<f64, AttributionError> {
    let x = regression_counts(FunctionKind::Ssin, counts)?;
    Ok(REGRESSION_WEIGHTS.iter().zip(x).map(|(w, xi)| w * (FRAC_PI_2 * xi).sin()).sum())
}

pub fn eval_suum(counts: &[usize]) -> Result<f64, AttributionError> {
    let x = regression_counts(FunctionKind::Suum, counts)?;
    Ok(REGRESSION_WEIGHTS.iter().zip(x).map(|(w, xi)| w * xi).sum())
}

/// Only the first two counts matter; anything after is ignored.
pub fn eval_class(counts: &[usize]) -> Result<u8, AttributionError> {
    if counts.len() < 2 {
        return Err(AttributionError::Arity { function: FunctionKind::Class, expected: ">= 2", got: counts.len() });
    }
    let score = CLASS_WEIGHTS[0] * counts[0] as f64 - CLASS_WEIGHTS[1] * counts[1] as f64;
    Ok(u8::from(score >= 0.0))
}

/// Raw (unnormalized) ground-truth map: every pixel of an object of pattern
/// `i` holds the pattern's weight, background 0.
pub fn ground_truth_map(scene: &Scene, function: &AttributionFunction) -> SaliencyMap {
    let mut map = SaliencyMap::zeros(scene.width, scene.height);
    for obj in &scene.objects {
        let w = function.pattern_weight(obj.pattern_index);
        if w == 0.0 {
            continue;
        }
        for (r, c) in obj.footprint() {
            map.set(r as usize, c as usize, w);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{DatasetKind, PatternDescriptor, SceneObject, ShapeKind};
    use proptest::prelude::*;

    fn shape_scene(objs: &[(ShapeKind, (usize, usize), usize)]) -> Scene {
        Scene {
            width: 64,
            height: 64,
            objects: objs
                .iter()
                .enumerate()
                .map(|(id, &(shape, center, size))| SceneObject {
                    id,
                    shape,
                    center,
                    size,
                    intensity: 255,
                    pattern_index: ShapeKind::ALL.iter().position(|&s| s == shape).unwrap(),
                })
                .collect(),
            dataset_kind: DatasetKind::Shape,
            pattern_catalog: ShapeKind::ALL.iter().map(|&s| PatternDescriptor::Shape(s)).collect(),
            rng_seed: 1,
        }
    }

    #[test]
    fn counts() {
        let s = shape_scene(&[
            (ShapeKind::Circle, (8, 8), 4),
            (ShapeKind::Circle, (30, 8), 4),
            (ShapeKind::Square, (8, 30), 4),
        ]);
        assert_eq!(pattern_counts(&s), vec![2, 1, 0]);
        assert_eq!(pattern_count(&s, 2).unwrap(), 0);
        assert!(pattern_count(&s, 3).is_err());
    }

    #[test]
    fn ssin_values() {
        assert_eq!(eval_ssin(&[0, 0, 0]).unwrap(), 0.0);
        assert!((eval_ssin(&[2, 2, 2]).unwrap() - 1.0).abs() < 1e-15);
        // 0.55 * sin(pi/4) + 0.18
        let expected = 0.55 * std::f64::consts::FRAC_1_SQRT_2 + 0.18;
        assert!((eval_ssin(&[1, 0, 2]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.568_909).abs() < 1e-5);
        assert!(eval_ssin(&[1, 1]).is_err());
        assert!(eval_ssin(&[3, 0, 0]).is_err());
    }

    #[test]
    fn suum_values() {
        assert_eq!(eval_suum(&[0, 0, 0]).unwrap(), 0.0);
        assert!((eval_suum(&[2, 2, 2]).unwrap() - 1.0).abs() < 1e-15);
        assert!((eval_suum(&[1, 2, 0]).unwrap() - 0.545).abs() < 1e-15);
    }

    #[test]
    fn class_values() {
        assert_eq!(eval_class(&[0, 0]).unwrap(), 1);
        assert_eq!(eval_class(&[1, 2, 2]).unwrap(), 1);
        assert_eq!(eval_class(&[0, 1, 0]).unwrap(), 0);
        assert!(eval_class(&[1]).is_err());
    }

    #[test]
    fn gt_single_circle_ssin() {
        let s = shape_scene(&[(ShapeKind::Circle, (20, 20), 5)]);
        let map = ground_truth_map(&s, &AttributionFunction::new(FunctionKind::Ssin));
        let mask = crate::scene::object_mask(&s.objects[0], 64, 64).unwrap();
        for (i, &v) in map.values().iter().enumerate() {
            if mask.as_slice()[i] {
                assert_eq!(v, 0.55);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn gt_class_ignores_third_pattern() {
        let s = shape_scene(&[(ShapeKind::Cross, (20, 20), 9), (ShapeKind::Cross, (45, 45), 9)]);
        let map = ground_truth_map(&s, &AttributionFunction::new(FunctionKind::Class));
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gt_color_plateaus() {
        let catalog = [85u8, 170, 255];
        let s = Scene {
            width: 64,
            height: 64,
            objects: (0..3)
                .map(|i| SceneObject {
                    id: i,
                    shape: ShapeKind::Circle,
                    center: (12 + 20 * i, 12 + 20 * i),
                    size: 6,
                    intensity: catalog[i],
                    pattern_index: i,
                })
                .collect(),
            dataset_kind: DatasetKind::Color,
            pattern_catalog: catalog.iter().map(|&v| PatternDescriptor::Intensity(v)).collect(),
            rng_seed: 0,
        };
        let map = ground_truth_map(&s, &AttributionFunction::new(FunctionKind::Suum));
        assert_eq!(map.get(12, 12), 0.55);
        assert_eq!(map.get(32, 32), 0.27);
        assert_eq!(map.get(52, 52), 0.18);
        assert_eq!(map.get(0, 63), 0.0);
    }

    fn counts3() -> impl Strategy<Value = [usize; 3]> {
        [0usize..=2, 0usize..=2, 0usize..=2]
    }

    proptest! {
        #[test]
        fn suum_is_additive(a in counts3(), b in counts3()) {
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            prop_assume!(sum.iter().all(|&c| c <= MAX_COUNT));
            let lhs = eval_suum(&sum).unwrap();
            let rhs = eval_suum(&a).unwrap() + eval_suum(&b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn ssin_is_monotone(a in counts3(), i in 0usize..3) {
            prop_assume!(a[i] < MAX_COUNT);
            let mut b = a;
            b[i] += 1;
            prop_assert!(eval_ssin(&b).unwrap() >= eval_ssin(&a).unwrap());
        }

        #[test]
        fn class_is_scale_consistent(c0 in 0usize..50, c1 in 0usize..50) {
            prop_assert_eq!(eval_class(&[c0, c1]).unwrap(), eval_class(&[2 * c0, 2 * c1]).unwrap());
        }

        #[test]
        fn outputs_stay_in_unit_range(a in counts3()) {
            for v in [eval_ssin(&a).unwrap(), eval_suum(&a).unwrap()] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
