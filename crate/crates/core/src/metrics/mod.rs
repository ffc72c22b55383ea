//! Saliency maps as probability distributions, and the two comparison
//! measures: exact Earth Mover's Distance and epsilon-regularized KL divergence.

mod simplex;

pub use simplex::{solve_transport, TransportSolution};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPS: f64 = 1e-10;
pub const DEFAULT_BIN_GRID: usize = 32;
/// Tolerated difference between signature totals in [`emd`].
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("saliency map contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("saliency map contains a negative value {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("map dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("bin grid must be at least 1")]
    BadBinGrid,
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("signature is empty")]
    EmptySignature,
    #[error("signature masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("transportation solver did not converge after {0} pivots")]
    SolverStalled(usize),
}

/// Dense 2-D importance grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        assert_eq!(values.len(), width * height, "value count must equal width * height");
        let map = Self { width, height, values };
        map.check()?;
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn check(&self) -> Result<(), MetricsError> {
        for (index, &value) in self.values.iter().enumerate() {
            if !value.is_finite() {
                return Err(MetricsError::NonFinite(index));
            }
            if value < 0.0 {
                return Err(MetricsError::Negative { index, value });
            }
        }
        Ok(())
    }

    /// Scales the map to sum 1. An all-zero map becomes uniform.
    pub fn normalize(&self) -> Result<SaliencyMap, MetricsError> {
        self.check()?;
        let total = self.sum();
        let values = if total > 0.0 {
            self.values.iter().map(|v| v / total).collect()
        } else {
            log::debug!("all-zero {}x{} saliency map, using uniform fallback", self.width, self.height);
            vec![1.0 / self.values.len() as f64; self.values.len()]
        };
        Ok(SaliencyMap { width: self.width, height: self.height, values })
    }
}

pub fn normalize(map: &SaliencyMap) -> Result<SaliencyMap, MetricsError> {
    map.normalize()
}

/// Sparse weighted point set over an image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    /// (row, col) of each support point.
    pub locations: Vec<(f64, f64)>,
    pub masses: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl Signature {
    pub fn new(width: usize, height: usize, points: Vec<((f64, f64), f64)>) -> Self {
        let (locations, masses) = points.into_iter().unzip();
        Self { locations, masses, width, height }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Image diagonal between pixel centers; normalizes ground distances to [0, 1].
    pub fn diagonal(&self) -> f64 {
        let (w, h) = ((self.width.max(2) - 1) as f64, (self.height.max(2) - 1) as f64);
        (w * w + h * h).sqrt()
    }

    pub fn translated(&self, dr: f64, dc: f64) -> Signature {
        Signature {
            locations: self.locations.iter().map(|&(r, c)| (r + dr, c + dc)).collect(),
            ..self.clone()
        }
    }
}

/// Aggregates a map into `bin_grid` x `bin_grid` bins located at bin centers.
/// Zero-mass bins are omitted; `bin_grid >= width` is pixel-exact.
pub fn to_signature(map: &SaliencyMap, bin_grid: usize) -> Result<Signature, MetricsError> {
    if bin_grid == 0 {
        return Err(MetricsError::BadBinGrid);
    }
    let bin_w = map.width.div_ceil(bin_grid).max(1);
    let bin_h = map.height.div_ceil(bin_grid).max(1);
    let cols = map.width.div_ceil(bin_w);
    let rows = map.height.div_ceil(bin_h);
    let mut mass = vec![0.0; rows * cols];
    for r in 0..map.height {
        for c in 0..map.width {
            mass[(r / bin_h) * cols + c / bin_w] += map.get(r, c);
        }
    }
    let mut points = Vec::new();
    for br in 0..rows {
        for bc in 0..cols {
            let m = mass[br * cols + bc];
            if m > 0.0 {
                let r0 = br * bin_h;
                let r1 = ((br + 1) * bin_h).min(map.height) - 1;
                let c0 = bc * bin_w;
                let c1 = ((bc + 1) * bin_w).min(map.width) - 1;
                points.push((((r0 + r1) as f64 / 2.0, (c0 + c1) as f64 / 2.0), m));
            }
        }
    }
    Ok(Signature::new(map.width, map.height, points))
}

fn ground_costs(p: &Signature, q: &Signature) -> Vec<f64> {
    let diag = p.diagonal();
    let mut cost = Vec::with_capacity(p.len() * q.len());
    for &(pr, pc) in &p.locations {
        for &(qr, qc) in &q.locations {
            let (dr, dc) = (pr - qr, pc - qc);
            cost.push((dr * dr + dc * dc).sqrt() / diag);
        }
    }
    cost
}

/// Exact EMD between equal-mass signatures with diagonal-normalized
/// Euclidean ground distance.
pub fn emd(p: &Signature, q: &Signature) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptySignature);
    }
    let (mp, mq) = (p.total_mass(), q.total_mass());
    if (mp - mq).abs() > MASS_TOLERANCE {
        return Err(MetricsError::MassMismatch(mp, mq));
    }
    if p == q {
        return Ok(0.0);
    }
    let cost = ground_costs(p, q);
    Ok(solve_transport(&p.masses, &q.masses, &cost)?.cost)
}

/// EMD with the partial-match penalty for unequal totals: the optimal cost of
/// moving `min(total)` mass plus `|total_p - total_q|` times the largest
/// ground distance.
pub fn emd_partial(p: &Signature, q: &Signature) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptySignature);
    }
    let (mp, mq) = (p.total_mass(), q.total_mass());
    let cost = ground_costs(p, q);
    let max_d = cost.iter().cloned().fold(0.0, f64::max);
    let gap = (mp - mq).abs();
    // excess mass drains to a zero-cost dummy node
    let (supply, demand, cost) = if mp > mq {
        let mut demand = q.masses.clone();
        demand.push(gap);
        let n = demand.len();
        let mut c = Vec::with_capacity(p.len() * n);
        for i in 0..p.len() {
            c.extend_from_slice(&cost[i * q.len()..(i + 1) * q.len()]);
            c.push(0.0);
        }
        debug_assert_eq!(c.len(), p.len() * n);
        (p.masses.clone(), demand, c)
    } else if mq > mp {
        let mut supply = p.masses.clone();
        supply.push(gap);
        let mut c = cost;
        c.extend(std::iter::repeat_n(0.0, q.len()));
        (supply, q.masses.clone(), c)
    } else {
        (p.masses.clone(), q.masses.clone(), cost)
    };
    let sol = solve_transport(&supply, &demand, &cost)?;
    Ok(sol.cost + gap * max_d)
}

/// `sum_x P(x) * ln(P(x) / (Q(x) + eps) + eps)`, with P the reference
/// (ground truth) and Q the explanation.
pub fn kl_div(p: &SaliencyMap, q: &SaliencyMap, eps: f64) -> Result<f64, MetricsError> {
    if !(eps > 0.0) {
        return Err(MetricsError::BadEpsilon(eps));
    }
    if p.width != q.width || p.height != q.height {
        return Err(MetricsError::DimensionMismatch(p.width, p.height, q.width, q.height));
    }
    Ok(p.values
        .iter()
        .zip(&q.values)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / (qv + eps) + eps).ln())
        .sum())
}
