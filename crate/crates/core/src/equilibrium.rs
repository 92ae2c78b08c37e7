//! Symbolic oracles for the builtin systems and measure comparison metrics.
//!
//! The survivor dynamics of a Markov hole is a subshift of finite type; its
//! pressure is the log Perron root of `exp(psi)` and the equilibrium state is
//! the Parry-type Markov measure built from the Perron vectors.

use std::f64::consts::PI;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BuiltinSystem, Dim, Point};
use crate::error::{Error, Result};
use crate::ulam::GridPartition;

/// Placement of depth-`k` cylinders of a full-branch expanding map.
///
/// Symbol `a` is the branch `branches[a]` of `x -> base * x mod 1` rescaled to
/// `[lo, hi)`; in two dimensions the same digits are read forward in `x` and
/// backward in `y`, and the measure is projected as a product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderGeometry {
    pub base: u32,
    pub branches: Vec<u32>,
    pub lo: f64,
    pub hi: f64,
    pub dim: Dim,
}

impl CylinderGeometry {
    /// Interval of the cylinder with the given word.
    pub fn interval(&self, word: &[usize]) -> (f64, f64) {
        let mut left = 0.0;
        let mut width = 1.0;
        for &a in word {
            width /= self.base as f64;
            left += self.branches[a] as f64 * width;
        }
        let l = self.hi - self.lo;
        (self.lo + left * l, self.lo + (left + width) * l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub n_states: usize,
    /// `psi[a][b]`; `-inf` marks a forbidden transition.
    pub log_weights: Vec<Vec<f64>>,
    pub geometry: Option<CylinderGeometry>,
}

impl MarkovModel {
    pub fn new(log_weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = log_weights.len();
        if n == 0 {
            return Err(Error::InvalidInput("Markov model needs at least one state".into()));
        }
        for row in &log_weights {
            if row.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: row.len() });
            }
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::InvalidInput("log weights must be finite or -inf".into()));
            }
        }
        if log_weights.iter().flatten().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidInput("all transitions forbidden".into()));
        }
        Ok(Self {
            n_states: n,
            log_weights,
            geometry: None,
        })
    }

    /// Full shift on the given branches of `x -> base * x` with constant `psi`.
    pub fn full_branch(base: u32, branches: Vec<u32>, psi: f64, lo: f64, hi: f64, dim: Dim) -> Result<Self> {
        if branches.is_empty() || branches.iter().any(|&b| b >= base) {
            return Err(Error::InvalidInput("branches must be digits below the base".into()));
        }
        let n = branches.len();
        let mut model = Self::new(vec![vec![psi; n]; n])?;
        model.geometry = Some(CylinderGeometry {
            base,
            branches,
            lo,
            hi,
            dim,
        });
        Ok(model)
    }

    /// Geometric-potential model of a builtin system with a single basic set.
    pub fn for_builtin(system: BuiltinSystem) -> Result<Self> {
        match system {
            BuiltinSystem::TernaryHole => {
                Self::full_branch(3, vec![0, 2], -(3f64.ln()), 0.0, 1.0, Dim::One)
            }
            BuiltinSystem::OpenBaker => {
                Self::full_branch(3, vec![0, 2], -(3f64.ln()), 0.0, 1.0, Dim::Two)
            }
            BuiltinSystem::FiveHole => {
                Self::full_branch(5, vec![0, 1, 2], -(5f64.ln()), 0.0, 1.0, Dim::One)
            }
            other => Err(Error::InvalidInput(format!(
                "no single symbolic model for {}",
                other.label()
            ))),
        }
    }

    /// Models of the two basic sets of `two_repeller`, dominant first.
    pub fn two_repeller_components() -> Result<[Self; 2]> {
        Ok([
            Self::full_branch(3, vec![0, 2], -(3f64.ln()), 0.0, 1.0, Dim::One)?,
            Self::full_branch(5, vec![0, 1, 2], -(5f64.ln()), 2.0, 3.0, Dim::One)?,
        ])
    }

    /// Adds a constant to every allowed transition.
    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.log_weights
            .iter_mut()
            .flatten()
            .for_each(|v| *v += c);
        m
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        self.log_weights
            .iter()
            .map(|r| r.iter().map(|v| v.exp()).collect())
            .collect()
    }

    /// Strongly connected components that carry at least one transition.
    fn irreducible_blocks(&self) -> Vec<Vec<usize>> {
        let a = self.matrix();
        let mut g = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..self.n_states).map(|_| g.add_node(())).collect();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut c: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
                c.sort_unstable();
                c
            })
            .filter(|c| c.len() > 1 || a[c[0]][c[0]] > 0.0)
            .collect()
    }
}

/// Perron root and right vector of an irreducible nonnegative matrix,
/// iterating `A + cI` so that periodic blocks converge too.
fn perron(a: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let n = a.len();
    let c = a.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let mut v = vec![1.0; n];
    let mut last = f64::NAN;
    for _ in 0..1_000_000 {
        let w: Vec<f64> = (0..n)
            .map(|i| c * v[i] + (0..n).map(|j| a[i][j] * v[j]).sum::<f64>())
            .collect();
        let s = w.iter().fold(0.0f64, |m, x| m.max(*x));
        if !(s > 0.0) {
            return Err(Error::NoPositiveSpectralRadius);
        }
        let change = w
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (x, y)| m.max((x / s - y).abs()));
        v = w.into_iter().map(|x| x / s).collect();
        if change < 1e-14 && (s - last).abs() <= 1e-14 * s {
            return Ok((s - c, v));
        }
        last = s;
    }
    Err(Error::NonConvergence {
        iterations: 1_000_000,
        residual: f64::NAN,
    })
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

fn sub_matrix(a: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| idx.iter().map(|&j| a[i][j]).collect())
        .collect()
}

/// Topological pressure: log Perron root of `exp(psi)`, maximised over
/// irreducible blocks.
pub fn pressure_sft(model: &MarkovModel) -> Result<f64> {
    let a = model.matrix();
    let blocks = model.irreducible_blocks();
    if blocks.is_empty() {
        return Err(Error::NoPositiveSpectralRadius);
    }
    let mut best = f64::NEG_INFINITY;
    for b in blocks {
        let (rho, _) = perron(&sub_matrix(&a, &b))?;
        best = best.max(rho.ln());
    }
    Ok(best)
}

/// Cylinder masses of the equilibrium state at a fixed depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeasure {
    pub depth: usize,
    /// `(word, mass)` in lexicographic word order, words of length `depth`.
    pub cylinders: Vec<(Vec<usize>, f64)>,
    pub geometry: Option<CylinderGeometry>,
}

/// Parry-type Gibbs measure of an irreducible model, evaluated on cylinders.
pub fn equilibrium_cylinder_measure(model: &MarkovModel, depth: usize) -> Result<ReferenceMeasure> {
    if depth < 1 {
        return Err(Error::InvalidInput("cylinder depth must be at least 1".into()));
    }
    let blocks = model.irreducible_blocks();
    if blocks.len() != 1 || blocks[0].len() != model.n_states {
        return Err(Error::InvalidInput("equilibrium state needs an irreducible model".into()));
    }
    let a = model.matrix();
    let (lambda, r) = perron(&a)?;
    let (_, l) = perron(&transpose(&a))?;
    let lr: f64 = l.iter().zip(&r).map(|(x, y)| x * y).sum();
    let p: Vec<f64> = l.iter().zip(&r).map(|(x, y)| x * y / lr).collect();
    let n = model.n_states;
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[i][j] * r[j] / (lambda * r[i])).collect())
        .collect();

    let mut cylinders: Vec<(Vec<usize>, f64)> = (0..n).map(|i| (vec![i], p[i])).collect();
    for _ in 1..depth {
        let mut next = Vec::with_capacity(cylinders.len() * n);
        for (w, m) in &cylinders {
            let last = *w.last().unwrap();
            for (j, &t) in q[last].iter().enumerate() {
                if t > 0.0 {
                    let mut w2 = w.clone();
                    w2.push(j);
                    next.push((w2, m * t));
                }
            }
        }
        cylinders = next;
    }
    Ok(ReferenceMeasure {
        depth,
        cylinders,
        geometry: model.geometry.clone(),
    })
}

impl ReferenceMeasure {
    pub fn total_mass(&self) -> f64 {
        self.cylinders.iter().map(|(_, m)| m).sum()
    }

    pub fn mass(&self, word: &[usize]) -> f64 {
        self.cylinders
            .iter()
            .find(|(w, _)| w.as_slice() == word)
            .map_or(0.0, |(_, m)| *m)
    }

    /// Masses of the depth `k < depth` cylinders obtained by summing over extensions.
    pub fn marginal(&self, k: usize) -> Vec<(Vec<usize>, f64)> {
        let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
        for (w, m) in &self.cylinders {
            let prefix = &w[..k.min(w.len())];
            match out.last_mut() {
                Some((p, acc)) if p.as_slice() == prefix => *acc += m,
                _ => out.push((prefix.to_vec(), *m)),
            }
        }
        out
    }

    fn geometry(&self) -> Result<&CylinderGeometry> {
        self.geometry
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("reference measure has no cylinder geometry".into()))
    }

    /// Mean and variance of the 1D measure, uniform inside each cylinder.
    pub fn moments_1d(&self) -> Result<(f64, f64)> {
        let g = self.geometry()?;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (w, m) in &self.cylinders {
            let (a, b) = g.interval(w);
            m1 += m * 0.5 * (a + b);
            m2 += m * (a * a + a * b + b * b) / 3.0;
        }
        Ok((m1, m2 - m1 * m1))
    }

    /// Mass per grid cell, spreading each cylinder uniformly over its box.
    pub fn project(&self, grid: &GridPartition) -> Result<Vec<f64>> {
        let g = self.geometry()?;
        if g.dim != grid.dim {
            return Err(Error::InvalidInput("reference and grid dimensions differ".into()));
        }
        let n = grid.n_cells();
        let mut out = vec![0.0; n];
        match g.dim {
            Dim::One => {
                for (w, m) in &self.cylinders {
                    spread(grid, g.interval(w), None, *m, &mut out);
                }
            }
            Dim::Two => {
                // x reads the word forward, y the reversed word; the product is
                // exact for Bernoulli measures and a marginal-preserving
                // approximation otherwise
                let mx = self.cylinders.clone();
                for (wx, px) in &mx {
                    for (wy, py) in &self.cylinders {
                        let rev: Vec<usize> = wy.iter().rev().copied().collect();
                        let iy = g.interval(&rev);
                        spread(grid, g.interval(wx), Some(iy), px * py, &mut out);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(word, mass)` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cylinder,mass\n");
        for (w, m) in &self.cylinders {
            let word: String = w.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(".");
            s.push_str(&format!("{word},{m:.17e}\n"));
        }
        s
    }
}

fn spread(grid: &GridPartition, ix: (f64, f64), iy: Option<(f64, f64)>, mass: f64, out: &mut [f64]) {
    let area = (ix.1 - ix.0) * iy.map_or(1.0, |(a, b)| b - a);
    let axes = [Some(ix), iy];
    for (b, bx) in grid.boxes.iter().enumerate() {
        let mut ranges = [(0usize, 0usize); 2];
        for (k, iv) in axes.iter().enumerate() {
            let res = if k < grid.dim.count() { grid.resolution } else { 1 };
            ranges[k] = match iv {
                Some((a, z)) if k < grid.dim.count() => {
                    if *z <= bx.lo[k] || *a >= bx.hi[k] {
                        ranges[k] = (1, 0);
                        continue;
                    }
                    let h = grid.cell_width(b, k);
                    let m0 = ((a - bx.lo[k]) / h).floor().max(0.0) as usize;
                    let m1 = (((z - bx.lo[k]) / h).ceil() as usize).min(res);
                    (m0.min(res), m1)
                }
                _ => (0, res),
            };
        }
        for my in ranges[1].0..ranges[1].1 {
            for mx in ranges[0].0..ranges[0].1 {
                let c = grid.cell_index(b, [mx, my]);
                let cell = grid.cell(c);
                let ox = (ix.1.min(cell.hi[0]) - ix.0.max(cell.lo[0])).max(0.0);
                let oy = match iy {
                    Some((a, z)) => (z.min(cell.hi[1]) - a.max(cell.lo[1])).max(0.0),
                    None => 1.0,
                };
                out[c] += mass * ox * oy / area;
            }
        }
    }
}

/// Lipschitz Fourier test functions used for weak-* comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDictionary {
    pub k_max: usize,
    pub dim: Dim,
}

impl TestDictionary {
    pub const DEFAULT_K: usize = 8;

    pub fn new(k_max: usize, dim: Dim) -> Self {
        Self { k_max, dim }
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.k_max * self.dim.count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Member `idx` at `p`: `0` is the constant, then cos/sin pairs per
    /// coordinate and frequency.
    pub fn eval(&self, idx: usize, p: Point) -> f64 {
        if idx == 0 {
            return 1.0;
        }
        let r = idx - 1;
        let trig = r % 2;
        let r = r / 2;
        let axis = r % self.dim.count();
        let k = (r / self.dim.count() + 1) as f64;
        let t = 2.0 * PI * k * p[axis];
        let v = if trig == 0 { t.cos() } else { t.sin() };
        v / (2.0 * PI * k)
    }
}

/// `max_f |sum_i (mu_i - nu_i) f(c_i)|` over the dictionary.
pub fn weak_star_discrepancy(
    mu: &[f64],
    nu: &[f64],
    dict: &TestDictionary,
    grid: &GridPartition,
) -> Result<f64> {
    let n = grid.n_cells();
    for len in [mu.len(), nu.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    if dict.dim != grid.dim {
        return Err(Error::InvalidInput("dictionary and grid dimensions differ".into()));
    }
    let centers: Vec<Point> = (0..n).map(|i| grid.center(i)).collect();
    Ok((0..dict.len())
        .map(|f| {
            centers
                .iter()
                .zip(mu.iter().zip(nu))
                .map(|(&c, (a, b))| (a - b) * dict.eval(f, c))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

/// 1-Wasserstein distance of two cell measures on a 1D grid, through the CDF
/// difference integrated between consecutive cell centres.
pub fn w1_1d(mu: &[f64], nu: &[f64], grid: &GridPartition) -> Result<f64> {
    if grid.dim != Dim::One {
        return Err(Error::InvalidInput("w1_1d needs a one-dimensional grid".into()));
    }
    let n = grid.n_cells();
    for len in [mu.len(), nu.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| grid.center(a)[0].total_cmp(&grid.center(b)[0]));
    let mut diff = 0.0;
    let mut total = 0.0;
    for k in 0..n.saturating_sub(1) {
        let i = order[k];
        diff += mu[i] - nu[i];
        total += diff.abs() * (grid.center(order[k + 1])[0] - grid.center(i)[0]);
    }
    Ok(total)
}
