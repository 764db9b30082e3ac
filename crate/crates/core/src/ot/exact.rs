//! Transportation simplex on the bipartite graph rows × columns.
//!
//! The basis is a spanning tree with `n + m - 1` arcs. Flows and potentials are
//! recomputed from the tree after every pivot, so round-off never accumulates.
//! Entering arcs are priced with Dantzig's rule; after a run of degenerate
//! pivots the solver switches to Bland's rule until it makes progress again.

use super::{CostMatrix, Coupling};
use crate::error::{Error, Result};

const DEGENERATE_RUN_LIMIT: usize = 50;
const MASS_TOLERANCE: f64 = 1e-9;

struct Tree {
    n: usize,
    m: usize,
    /// Basic arcs as `(row, col)`.
    arcs: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, usize)>>,
    order: Vec<usize>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    flow: Vec<f64>,
}

impl Tree {
    fn new(n: usize, m: usize, arcs: Vec<(usize, usize)>) -> Self {
        let nodes = n + m;
        Tree {
            n,
            m,
            arcs,
            adjacency: vec![Vec::new(); nodes],
            order: Vec::with_capacity(nodes),
            parent: vec![usize::MAX; nodes],
            parent_arc: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
            flow: Vec::new(),
        }
    }

    fn is_row(&self, node: usize) -> bool {
        node < self.n
    }

    /// Rebuilds traversal order, potentials and flows from the current arcs.
    fn refresh(&mut self, a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
        let (n, m) = (self.n, self.m);
        for adj in &mut self.adjacency {
            adj.clear();
        }
        for (k, &(i, j)) in self.arcs.iter().enumerate() {
            self.adjacency[i].push((n + j, k));
            self.adjacency[n + j].push((i, k));
        }
        self.order.clear();
        self.parent.iter_mut().for_each(|p| *p = usize::MAX);
        self.parent[0] = 0;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        self.order.push(0);
        let mut head = 0;
        while head < self.order.len() {
            let v = self.order[head];
            head += 1;
            for idx in 0..self.adjacency[v].len() {
                let (w, k) = self.adjacency[v][idx];
                if self.parent[w] != usize::MAX {
                    continue;
                }
                self.parent[w] = v;
                self.parent_arc[w] = k;
                self.depth[w] = self.depth[v] + 1;
                let (i, j) = self.arcs[k];
                let c = cost.get(i, j);
                self.potential[w] = c - self.potential[v];
                self.order.push(w);
            }
        }
        if self.order.len() != n + m {
            return Err(Error::Solver("basis is not a spanning tree".into()));
        }
        let mut excess: Vec<f64> = a.iter().copied().chain(b.iter().map(|v| -v)).collect();
        self.flow.clear();
        self.flow.resize(self.arcs.len(), 0.0);
        for &v in self.order.iter().skip(1).rev() {
            let k = self.parent_arc[v];
            let x = if self.is_row(v) { excess[v] } else { -excess[v] };
            if x < -MASS_TOLERANCE {
                return Err(Error::Solver(format!("negative basic flow {x:e}")));
            }
            self.flow[k] = x.max(0.0);
            let p = self.parent[v];
            excess[p] += excess[v];
        }
        Ok(())
    }

    /// Basic arcs on the cycle closed by `(row, col)` with their direction signs.
    fn cycle(&self, row: usize, col: usize) -> Vec<(usize, bool)> {
        let mut up = self.n + col;
        let mut down = row;
        let mut arcs = Vec::new();
        while up != down {
            if self.depth[up] >= self.depth[down] {
                // Walking from the column side towards the root: col -> row is backward.
                arcs.push((self.parent_arc[up], self.is_row(up)));
                up = self.parent[up];
            } else {
                // The cycle enters `down` from its parent: col -> row is backward.
                arcs.push((self.parent_arc[down], !self.is_row(down)));
                down = self.parent[down];
            }
        }
        arcs
    }
}

/// Northwest-corner staircase; always a spanning tree of `n + m - 1` arcs.
fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut arcs = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        arcs.push((i, j));
        if i == n - 1 && j == m - 1 {
            break;
        }
        let x = ra.min(rb);
        ra -= x;
        rb -= x;
        if (ra <= rb && i < n - 1) || j == m - 1 {
            i += 1;
            ra = a[i];
        } else {
            j += 1;
            rb = b[j];
        }
    }
    arcs
}

fn validate(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DimensionMismatch("empty marginal".into()));
    }
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cost is {}x{} but marginals have {} and {} entries",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    for w in a.iter().chain(b) {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::InvalidMeasure(format!("bad marginal weight {w}")));
        }
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > MASS_TOLERANCE {
        return Err(Error::Solver(format!(
            "unbalanced marginals ({sa} vs {sb}); inputs must be normalized"
        )));
    }
    Ok(())
}

/// Exact optimal transport between weight vectors `a` and `b`.
///
/// Returns the optimal plan together with dual potentials certifying optimality.
pub fn transport_exact(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<Coupling> {
    validate(a, b, cost)?;
    let (n, m) = (a.len(), b.len());
    let scale = cost.max_entry();
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut tree = Tree::new(n, m, northwest_corner(a, b));
    let mut in_basis = vec![false; n * m];
    for &(i, j) in &tree.arcs {
        in_basis[i * m + j] = true;
    }
    let max_pivots = 50 * (n * m) + 10_000;
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    loop {
        tree.refresh(a, b, cost)?;
        let bland = degenerate_run >= DEGENERATE_RUN_LIMIT;
        let (u, v) = tree.potential.split_at(n);
        let mut entering = None;
        let mut best = -tol;
        'price: for i in 0..n {
            let row = &cost.entries()[i * m..(i + 1) * m];
            for j in 0..m {
                if in_basis[i * m + j] {
                    continue;
                }
                let r = row[j] - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'price;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("no convergence after {max_pivots} pivots")));
        }
        let cycle = tree.cycle(ei, ej);
        let mut leave: Option<(usize, f64)> = None;
        for &(k, forward) in &cycle {
            if forward {
                continue;
            }
            let x = tree.flow[k];
            let better = match leave {
                None => true,
                Some((lk, lx)) => {
                    if bland {
                        x < lx || (x == lx && arc_key(tree.arcs[k], m) < arc_key(tree.arcs[lk], m))
                    } else {
                        x < lx
                    }
                }
            };
            if better {
                leave = Some((k, x));
            }
        }
        let (lk, theta) =
            leave.ok_or_else(|| Error::Solver("cycle without a backward arc".into()))?;
        if theta <= MASS_TOLERANCE * 1e-3 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        let (li, lj) = tree.arcs[lk];
        in_basis[li * m + lj] = false;
        in_basis[ei * m + ej] = true;
        tree.arcs[lk] = (ei, ej);
    }
    log::debug!("exact transport {n}x{m} solved in {pivots} pivots");
    let mut plan = vec![0.0; n * m];
    for (k, &(i, j)) in tree.arcs.iter().enumerate() {
        // Round-off can leave mass on rows or columns whose weight is zero.
        if a[i] > 0.0 && b[j] > 0.0 {
            plan[i * m + j] = tree.flow[k].max(0.0);
        }
    }
    let objective = plan.iter().zip(cost.entries()).map(|(p, c)| p * c).sum();
    Ok(Coupling {
        rows: n,
        cols: m,
        plan,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
        objective,
        dual_row: Some(tree.potential[..n].to_vec()),
        dual_col: Some(tree.potential[n..].to_vec()),
        converged: true,
    })
}

fn arc_key((i, j): (usize, usize), m: usize) -> usize {
    i * m + j
}
