//! Primal network simplex for the (uncapacitated) transportation problem.
//!
//! Spanning-tree formulation with an artificial root connected to every
//! node, block-search pivoting, and the strongly-feasible leaving-arc rule
//! to avoid cycling on degenerate pivots. After each pivot only the subtree
//! cut off by the leaving arc is re-hung and has its depths and potentials
//! refreshed.

use super::MetricsError;

const REDUCED_COST_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Row-major `supply.len() x demand.len()` flow matrix.
    pub flows: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

struct Network {
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    tree_adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// pred arc points from the node towards its parent
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    root: usize,
}

impl Network {
    fn rebuild(&mut self) {
        let n = self.tree_adj.len();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::with_capacity(n);
        seen[self.root] = true;
        self.depth[self.root] = 0;
        self.pi[self.root] = 0.0;
        queue.push_back(self.root);
        while let Some(u) = queue.pop_front() {
            for &a in &self.tree_adj[u] {
                let (s, t) = (self.source[a], self.target[a]);
                let v = if s == u { t } else { s };
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                self.parent[v] = u;
                self.pred[v] = a;
                self.depth[v] = self.depth[u] + 1;
                if s == v {
                    self.up[v] = true;
                    self.pi[v] = self.pi[u] - self.cost[a];
                } else {
                    self.up[v] = false;
                    self.pi[v] = self.pi[u] + self.cost[a];
                }
                queue.push_back(v);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "tree must span every node");
    }

    /// Makes `v` a child of `u` through tree arc `a`.
    fn attach(&mut self, v: usize, u: usize, a: usize) {
        self.parent[v] = u;
        self.pred[v] = a;
        self.depth[v] = self.depth[u] + 1;
        if self.source[a] == v {
            self.up[v] = true;
            self.pi[v] = self.pi[u] - self.cost[a];
        } else {
            self.up[v] = false;
            self.pi[v] = self.pi[u] + self.cost[a];
        }
    }

    /// Hangs the subtree containing `inner` below `outer` via `entering`.
    fn rehang(&mut self, inner: usize, outer: usize, entering: usize) {
        self.attach(inner, outer, entering);
        let mut stack = vec![inner];
        while let Some(u) = stack.pop() {
            for k in 0..self.tree_adj[u].len() {
                let a = self.tree_adj[u][k];
                if a == self.pred[u] {
                    continue;
                }
                let v = if self.source[a] == u { self.target[a] } else { self.source[a] };
                self.attach(v, u, a);
                stack.push(v);
            }
        }
    }

    fn reduced_cost(&self, a: usize) -> f64 {
        self.cost[a] + self.pi[self.source[a]] - self.pi[self.target[a]]
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    fn remove_tree_arc(&mut self, a: usize) {
        for node in [self.source[a], self.target[a]] {
            let adj = &mut self.tree_adj[node];
            let pos = adj.iter().position(|&x| x == a).expect("arc in tree adjacency");
            adj.swap_remove(pos);
        }
        self.in_tree[a] = false;
    }

    fn add_tree_arc(&mut self, a: usize) {
        self.tree_adj[self.source[a]].push(a);
        self.tree_adj[self.target[a]].push(a);
        self.in_tree[a] = true;
    }

    /// Pushes flow around the cycle closed by `entering`; returns false if
    /// the cycle is unbounded.
    fn pivot(&mut self, entering: usize) -> bool {
        let first = self.source[entering];
        let second = self.target[entering];
        let join = self.join(first, second);

        let mut delta = f64::INFINITY;
        let mut leaving_node = None;
        let mut leaving_on_first = false;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    leaving_node = Some(u);
                    leaving_on_first = true;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    leaving_node = Some(u);
                    leaving_on_first = false;
                }
            }
            u = self.parent[u];
        }
        let Some(leaving_node) = leaving_node else {
            return false;
        };

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let a = self.pred[u];
                if self.up[u] {
                    self.flow[a] -= delta;
                } else {
                    self.flow[a] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let a = self.pred[u];
                if self.up[u] {
                    self.flow[a] += delta;
                } else {
                    self.flow[a] -= delta;
                }
                u = self.parent[u];
            }
        }
        let leaving = self.pred[leaving_node];
        self.flow[leaving] = 0.0;
        self.remove_tree_arc(leaving);
        self.add_tree_arc(entering);
        let (inner, outer) = if leaving_on_first { (first, second) } else { (second, first) };
        self.rehang(inner, outer, entering);
        true
    }
}

/// Minimum-cost transport of `supply` into `demand` with a dense row-major
/// cost matrix. Totals must agree up to rounding; any residue stays on the
/// artificial arcs and is excluded from the reported cost.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution, MetricsError> {
    let (m, n) = (supply.len(), demand.len());
    assert_eq!(cost.len(), m * n, "cost matrix must be supply x demand");
    if m == 0 || n == 0 {
        return Err(MetricsError::EmptySignature);
    }
    let real = m * n;
    let nodes = m + n + 1;
    let root = m + n;
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let artificial_cost = max_cost + 1.0;

    let arcs = real + m + n;
    let mut net = Network {
        source: Vec::with_capacity(arcs),
        target: Vec::with_capacity(arcs),
        cost: Vec::with_capacity(arcs),
        flow: vec![0.0; arcs],
        in_tree: vec![false; arcs],
        tree_adj: vec![Vec::new(); nodes],
        parent: vec![root; nodes],
        pred: vec![usize::MAX; nodes],
        up: vec![false; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
        root,
    };
    for i in 0..m {
        for j in 0..n {
            net.source.push(i);
            net.target.push(m + j);
            net.cost.push(cost[i * n + j]);
        }
    }
    // node supplies: sources positive, sinks negative
    let balance = supply.iter().copied().chain(demand.iter().map(|d| -d));
    for (k, b) in balance.enumerate() {
        let a = net.source.len();
        if b > 0.0 {
            net.source.push(k);
            net.target.push(root);
            net.flow[a] = b;
        } else {
            net.source.push(root);
            net.target.push(k);
            net.flow[a] = -b;
        }
        net.cost.push(artificial_cost);
        net.add_tree_arc(a);
    }
    net.rebuild();

    let block = ((arcs as f64).sqrt().ceil() as usize).max(10);
    let max_pivots = 50 * arcs + 1000;
    let mut next = 0usize;
    let mut pivots = 0usize;
    loop {
        let mut best = None;
        let mut best_rc = -REDUCED_COST_TOL;
        let mut scanned = 0;
        let mut in_block = 0;
        while scanned < arcs {
            let a = next;
            next = if next + 1 == arcs { 0 } else { next + 1 };
            scanned += 1;
            in_block += 1;
            if !net.in_tree[a] {
                let rc = net.reduced_cost(a);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(a);
                }
            }
            if in_block == block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        let Some(entering) = best else { break };
        if !net.pivot(entering) || pivots >= max_pivots {
            return Err(MetricsError::SolverStalled(pivots));
        }
        pivots += 1;
    }

    let flows = net.flow[..real].to_vec();
    let total = flows.iter().zip(cost).map(|(f, c)| f * c).sum();
    Ok(TransportSolution { flows, cost: total, pivots })
}
