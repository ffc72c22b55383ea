#![allow(dead_code)]

use rand::Rng;
use sabench::metrics::Signature;

pub const WIDTH: usize = 128;
pub const HEIGHT: usize = 128;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sabench")
}

/// Shell command line running the CLI with `args`.
pub fn bin_cmd(args: &str) -> String {
    format!("'{}' {args}", bin())
}

/// `k` random support points with positive masses summing to one.
pub fn random_signature(rng: &mut impl Rng, k: usize) -> Signature {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let points = raw
        .iter()
        .map(|m| {
            let r = rng.random_range(0..HEIGHT) as f64;
            let c = rng.random_range(0..WIDTH) as f64;
            ((r, c), m / total)
        })
        .collect();
    Signature::new(WIDTH, HEIGHT, points)
}

/// Row-major Euclidean distances over the image diagonal.
pub fn ground_cost(p: &Signature, q: &Signature) -> Vec<f64> {
    let diag = (((WIDTH - 1).pow(2) + (HEIGHT - 1).pow(2)) as f64).sqrt();
    let mut out = Vec::with_capacity(p.len() * q.len());
    for a in &p.locations {
        for b in &q.locations {
            out.push(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() / diag);
        }
    }
    out
}

fn find(uf: &[usize], mut x: usize) -> usize {
    while uf[x] != x {
        x = uf[x];
    }
    x
}

struct Search<'a> {
    m: usize,
    n: usize,
    supply: &'a [f64],
    demand: &'a [f64],
    cost: &'a [f64],
    best: f64,
    trees: usize,
}

impl Search<'_> {
    /// Flows on a spanning tree by repeatedly settling leaves; None if any
    /// flow is negative (basis not feasible).
    fn tree_cost(&self, arcs: &[usize]) -> Option<f64> {
        let nodes = self.m + self.n;
        let mut rem: Vec<f64> = self.supply.iter().chain(self.demand).copied().collect();
        let mut degree = vec![0usize; nodes];
        for &a in arcs {
            degree[a / self.n] += 1;
            degree[self.m + a % self.n] += 1;
        }
        let mut open = arcs.to_vec();
        let mut total = 0.0;
        while !open.is_empty() {
            let pos = open
                .iter()
                .position(|&a| degree[a / self.n] == 1 || degree[self.m + a % self.n] == 1)
                .expect("a tree always has a leaf");
            let a = open.swap_remove(pos);
            let (i, j) = (a / self.n, self.m + a % self.n);
            let leaf = if degree[i] == 1 { i } else { j };
            let f = rem[leaf];
            if f < -1e-12 {
                return None;
            }
            rem[i] -= f;
            rem[j] -= f;
            degree[i] -= 1;
            degree[j] -= 1;
            total += f * self.cost[a];
        }
        Some(total)
    }

    fn walk(&mut self, next: usize, chosen: &mut Vec<usize>, uf: &[usize]) {
        let need = self.m + self.n - 1;
        if chosen.len() == need {
            self.trees += 1;
            if let Some(c) = self.tree_cost(chosen) {
                self.best = self.best.min(c);
            }
            return;
        }
        let arcs = self.m * self.n;
        if arcs - next < need - chosen.len() {
            return;
        }
        let (i, j) = (next / self.n, self.m + next % self.n);
        let (ri, rj) = (find(uf, i), find(uf, j));
        if ri != rj {
            let mut uf2 = uf.to_vec();
            uf2[ri] = rj;
            chosen.push(next);
            self.walk(next + 1, chosen, &uf2);
            chosen.pop();
        }
        self.walk(next + 1, chosen, uf);
    }
}

/// Optimal transport cost by enumerating every spanning tree of the
/// bipartite graph (every basis of the LP) and keeping the cheapest feasible
/// one. Exponential; meant for a handful of supports.
pub fn lp_oracle(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let mut s = Search { m, n, supply, demand, cost, best: f64::INFINITY, trees: 0 };
    let uf: Vec<usize> = (0..m + n).collect();
    s.walk(0, &mut Vec::new(), &uf);
    s.best
}
