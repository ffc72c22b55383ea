//! Deterministic object-level LIME: occlusion perturbations over the scene's
//! objects, an ordinary-least-squares surrogate, and a saliency map painted
//! from the surrogate coefficients.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::FunctionKind;
use crate::metrics::SaliencyMap;
use crate::predictor::{PredictError, Predictor};
use crate::scene::{Image, Scene};

pub const MAX_OBJECTS: usize = 6;
pub const RIDGE_LAMBDA: f64 = 1e-8;
pub const CONDITION_LIMIT: f64 = 1e12;
/// Coefficients below this fraction of the output scale are round-off.
pub const COEFFICIENT_SNAP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("object count {0} outside 1..={MAX_OBJECTS}")]
    ObjectCount(usize),
    #[error("sample size {size} outside {min}..={max} for {n} objects")]
    SampleSize { size: usize, min: usize, max: usize, n: usize },
    #[error("perturbation vector has {got} entries, scene has {want} objects")]
    Arity { want: usize, got: usize },
    #[error("{outputs} outputs for {vectors} perturbation vectors")]
    OutputCount { vectors: usize, outputs: usize },
    #[error("design matrix has rank {rank} of {columns} even after ridge regularization")]
    RankDeficient { rank: usize, columns: usize },
    #[error("non-finite predictor output {value} for perturbation {index}")]
    NonFiniteOutput { index: usize, value: f64 },
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Requested number of perturbations, resolved per scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SampleSize {
    /// Smallest admissible plan: `min(n + 2, 2^n)`.
    Minimal,
    Count(usize),
    /// Every subset: `2^n`.
    Full,
}

impl SampleSize {
    pub fn resolve(self, n_objects: usize) -> usize {
        let (lo, hi) = (min_sample_size(n_objects), 1usize << n_objects);
        match self {
            SampleSize::Minimal => lo,
            SampleSize::Full => hi,
            SampleSize::Count(k) => k.clamp(lo, hi),
        }
    }
}

impl std::fmt::Display for SampleSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleSize::Minimal => f.write_str("min"),
            SampleSize::Full => f.write_str("full"),
            SampleSize::Count(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for SampleSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" | "minimal" => Ok(SampleSize::Minimal),
            "full" | "all" => Ok(SampleSize::Full),
            k => k.parse().map(SampleSize::Count).map_err(|_| format!("bad sample size `{s}`")),
        }
    }
}

impl From<SampleSize> for String {
    fn from(s: SampleSize) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SampleSize {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Intercept, one slope per object, and one residual degree of freedom,
/// capped by the number of distinct subsets.
pub fn min_sample_size(n_objects: usize) -> usize {
    (n_objects + 2).min(1 << n_objects)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationPlan {
    pub n_objects: usize,
    pub sample_size: usize,
    /// `true` keeps the object.
    pub vectors: Vec<Vec<bool>>,
}

fn bits(n: usize, k: usize) -> Vec<bool> {
    (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect()
}

/// Full plans list every subset in descending binary order (all-ones first).
/// Smaller plans are prefixes of one seeded permutation that starts with the
/// all-ones vector, so plans for growing sizes are nested.
pub fn enumerate_perturbations(
    n_objects: usize,
    sample_size: usize,
    plan_seed: u64,
) -> Result<PerturbationPlan, ExplainError> {
    if n_objects == 0 || n_objects > MAX_OBJECTS {
        return Err(ExplainError::ObjectCount(n_objects));
    }
    let total = 1usize << n_objects;
    let min = min_sample_size(n_objects);
    if sample_size < min || sample_size > total {
        return Err(ExplainError::SampleSize { size: sample_size, min, max: total, n: n_objects });
    }
    let all_ones = total - 1;
    let order: Vec<usize> = if sample_size == total {
        (0..total).rev().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(plan_seed ^ (n_objects as u64).rotate_left(32));
        let mut rest: Vec<usize> = (0..all_ones).collect();
        rest.shuffle(&mut rng);
        std::iter::once(all_ones).chain(rest).take(sample_size).collect()
    };
    Ok(PerturbationPlan {
        n_objects,
        sample_size,
        vectors: order.into_iter().map(|k| bits(n_objects, k)).collect(),
    })
}

/// Blacks out the footprint of every object with `z[i] == false`.
pub fn apply_perturbation(image: &Image, scene: &Scene, z: &[bool]) -> Result<Image, ExplainError> {
    if z.len() != scene.objects.len() {
        return Err(ExplainError::Arity { want: scene.objects.len(), got: z.len() });
    }
    let mut out = image.clone();
    for (obj, &keep) in scene.objects.iter().zip(z) {
        if keep {
            continue;
        }
        for (r, c) in obj.footprint() {
            if r >= 0 && c >= 0 && (r as usize) < image.height && (c as usize) < image.width {
                out.pixels[r as usize * image.width + c as usize] = 0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_norm: f64,
    pub ridge_applied: bool,
}

fn condition(gram: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (cond, eig.eigenvalues)
}

/// Uniformly weighted least squares of `outputs` on the presence vectors with
/// an intercept, via normal equations. A ridge of [`RIDGE_LAMBDA`] on the
/// slopes is added when the Gram matrix is numerically singular.
pub fn fit_linear_surrogate(plan: &PerturbationPlan, outputs: &[f64]) -> Result<SurrogateFit, ExplainError> {
    if outputs.len() != plan.vectors.len() {
        return Err(ExplainError::OutputCount { vectors: plan.vectors.len(), outputs: outputs.len() });
    }
    if let Some((index, &value)) = outputs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ExplainError::NonFiniteOutput { index, value });
    }
    let cols = plan.n_objects + 1;
    let rows = plan.vectors.len();
    let x = DMatrix::from_fn(rows, cols, |r, c| if c == 0 { 1.0 } else { f64::from(u8::from(plan.vectors[r][c - 1])) });
    let y = DVector::from_column_slice(outputs);
    let mut gram = x.transpose() * &x;
    let rhs = x.transpose() * &y;

    let (cond, eigenvalues) = condition(&gram);
    let mut ridge_applied = false;
    if cond > CONDITION_LIMIT {
        let max = eigenvalues.max();
        let rank = eigenvalues.iter().filter(|&&e| e > max * 1e-12).count();
        for k in 1..cols {
            gram[(k, k)] += RIDGE_LAMBDA;
        }
        ridge_applied = true;
        log::debug!("singular design (rank {rank} of {cols}), applying ridge {RIDGE_LAMBDA}");
        let (cond, _) = condition(&gram);
        if cond > CONDITION_LIMIT {
            return Err(ExplainError::RankDeficient { rank, columns: cols });
        }
    }
    let beta = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| gram.clone().lu().solve(&rhs))
        .ok_or(ExplainError::RankDeficient { rank: 0, columns: cols })?;
    let residual_norm = (&y - &x * &beta).norm();
    let scale = outputs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(SurrogateFit {
        coefficients: beta
            .iter()
            .skip(1)
            .map(|&c| if c.abs() <= COEFFICIENT_SNAP * scale { 0.0 } else { c })
            .collect(),
        intercept: beta[0],
        residual_norm,
        ridge_applied,
    })
}

/// How signed coefficients become nonnegative saliency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Negative coefficients contribute nothing.
    #[default]
    Clip,
    Absolute,
}

impl RenderMode {
    /// Class weights enter the ground truth as magnitudes, so its signed
    /// coefficients are rendered the same way.
    pub fn for_function(kind: FunctionKind) -> Self {
        match kind {
            FunctionKind::Class => RenderMode::Absolute,
            FunctionKind::Ssin | FunctionKind::Suum => RenderMode::Clip,
        }
    }
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clip" => Ok(RenderMode::Clip),
            "abs" | "absolute" => Ok(RenderMode::Absolute),
            _ => Err(format!("unknown render mode `{s}` (expected clip or abs)")),
        }
    }
}

pub fn render_coefficients(scene: &Scene, coefficients: &[f64], mode: RenderMode) -> SaliencyMap {
    let mut map = SaliencyMap::zeros(scene.width, scene.height);
    for (obj, &coef) in scene.objects.iter().zip(coefficients) {
        let v = match mode {
            RenderMode::Clip => coef.max(0.0),
            RenderMode::Absolute => coef.abs(),
        };
        if v == 0.0 {
            continue;
        }
        for (r, c) in obj.footprint() {
            map.set(r as usize, c as usize, v);
        }
    }
    map
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub map: SaliencyMap,
    pub fit: SurrogateFit,
    pub plan: PerturbationPlan,
    pub outputs: Vec<f64>,
}

/// Perturb, predict, fit, render. Segmentation is the scene's own objects.
pub fn explain<P: Predictor + ?Sized>(
    image: &Image,
    scene: &Scene,
    predictor: &P,
    sample_size: SampleSize,
    plan_seed: u64,
    mode: RenderMode,
) -> Result<Explanation, ExplainError> {
    let n = scene.objects.len();
    if n == 0 || n > MAX_OBJECTS {
        return Err(ExplainError::ObjectCount(n));
    }
    let plan = enumerate_perturbations(n, sample_size.resolve(n), plan_seed)?;
    let images = plan
        .vectors
        .par_iter()
        .map(|z| apply_perturbation(image, scene, z))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = predictor.predict_batch(&images)?;
    let fit = fit_linear_surrogate(&plan, &outputs)?;
    let map = render_coefficients(scene, &fit.coefficients, mode);
    Ok(Explanation { map, fit, plan, outputs })
}
