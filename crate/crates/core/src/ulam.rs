//! Ulam discretisation of the annealed weighted killed transfer operator.
//!
//! Row `i` of an [`AnnealedMatrix`] holds
//! `M[i][j] = e^{phi(c_i)} * P(T(U_i) + delta in cell_j and in Y)` with `U_i`
//! uniform on cell `i`. Each source cell is split into strata; on every stratum
//! the map is replaced by its affine linearisation at a jittered interior point
//! and the law of `T(U) + delta` (a uniform image box convolved with the uniform
//! noise kernel) is integrated over target cells in closed form. For piecewise
//! affine maps this is exact whenever the strata do not straddle a branch
//! boundary.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    region_fraction, AxisBox, BoundaryRule, Dim, MapSystem, NoiseModel, Point, RegionSpec,
    WeightField,
};
use crate::error::{Error, Result};
use crate::rng;

/// Masses below this are dropped from assembled rows (they only arise from roundoff).
const MASS_FLOOR: f64 = 1e-15;

/// Uniform grid of `resolution^d` cells on each domain box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub dim: Dim,
    pub boxes: Vec<AxisBox>,
    pub resolution: usize,
}

impl GridPartition {
    pub fn new(dim: Dim, boxes: Vec<AxisBox>, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidInput("grid resolution must be at least 1".into()));
        }
        if boxes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one box".into()));
        }
        if boxes.iter().any(AxisBox::is_degenerate) {
            return Err(Error::DegenerateBox);
        }
        Ok(Self {
            dim,
            boxes,
            resolution,
        })
    }

    /// Grid on the domain of `map`.
    pub fn for_map(map: &MapSystem, resolution: usize) -> Result<Self> {
        Self::new(map.dim, map.domain(), resolution)
    }

    fn axis_resolution(&self, axis: usize) -> usize {
        if axis < self.dim.count() {
            self.resolution
        } else {
            1
        }
    }

    pub fn cells_per_box(&self) -> usize {
        self.resolution.pow(self.dim.count() as u32)
    }

    pub fn n_cells(&self) -> usize {
        self.boxes.len() * self.cells_per_box()
    }

    pub fn cell_width(&self, b: usize, axis: usize) -> f64 {
        self.boxes[b].width(axis) / self.axis_resolution(axis) as f64
    }

    pub fn cell_index(&self, b: usize, coords: [usize; 2]) -> usize {
        b * self.cells_per_box() + coords[1] * self.resolution + coords[0]
    }

    pub fn cell_coords(&self, index: usize) -> (usize, [usize; 2]) {
        let per = self.cells_per_box();
        let b = index / per;
        let r = index % per;
        (b, [r % self.resolution, r / self.resolution])
    }

    pub fn cell(&self, index: usize) -> AxisBox {
        let (b, c) = self.cell_coords(index);
        let bx = &self.boxes[b];
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for k in 0..2 {
            let h = self.cell_width(b, k);
            lo[k] = bx.lo[k] + c[k] as f64 * h;
            hi[k] = if c[k] + 1 == self.axis_resolution(k) {
                bx.hi[k]
            } else {
                bx.lo[k] + (c[k] + 1) as f64 * h
            };
        }
        AxisBox::rect(lo, hi)
    }

    pub fn center(&self, index: usize) -> Point {
        self.cell(index).center()
    }

    pub fn volume(&self, index: usize) -> f64 {
        let (b, _) = self.cell_coords(index);
        self.boxes[b].volume() / self.cells_per_box() as f64
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|i| self.volume(i)).collect()
    }

    pub fn locate(&self, p: Point) -> Option<usize> {
        let b = self.boxes.iter().position(|bx| bx.contains(p))?;
        let bx = &self.boxes[b];
        let mut c = [0usize; 2];
        for (k, ck) in c.iter_mut().enumerate() {
            let res = self.axis_resolution(k);
            let t = ((p[k] - bx.lo[k]) / self.cell_width(b, k)).floor();
            *ck = (t.max(0.0) as usize).min(res - 1);
        }
        Some(self.cell_index(b, c))
    }

    /// Cells whose centre lies in `region`.
    pub fn cells_in(&self, region: &RegionSpec) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&i| region.contains(self.center(i)))
            .collect()
    }
}

/// `build_grid`: a grid of `resolution` cells per axis on every box.
pub fn build_grid(dim: Dim, boxes: Vec<AxisBox>, resolution: usize) -> Result<GridPartition> {
    GridPartition::new(dim, boxes, resolution)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub system: String,
    pub epsilon: f64,
    pub weight: String,
    pub region: String,
    pub resolution: usize,
    pub samples_per_cell: usize,
    pub seed: u64,
}

/// Sparse nonnegative matrix in compressed-row form with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealedMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// `e^{phi}` at the centre of each (local) cell.
    pub row_weight: Vec<f64>,
    /// Grid cell index of each local row/column.
    pub cells: Vec<usize>,
    pub meta: MatrixMeta,
}

impl AnnealedMatrix {
    /// Builds a matrix from per-row `(column, value)` lists.
    pub fn from_rows(
        rows: Vec<Vec<(usize, f64)>>,
        row_weight: Vec<f64>,
        cells: Vec<usize>,
        meta: MatrixMeta,
    ) -> Result<Self> {
        let n = rows.len();
        if row_weight.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: row_weight.len(),
            });
        }
        if cells.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: cells.len(),
            });
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if j >= n {
                    return Err(Error::InvalidInput(format!("column {j} out of range for {n} cells")));
                }
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInput(format!("entry {v} is not a finite nonnegative value")));
                }
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            row_ptr,
            cols,
            vals,
            row_weight,
            cells,
            meta,
        })
    }

    /// Dense row-major construction, mostly for tests and small examples.
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let rows = dense
            .iter()
            .map(|r| {
                if r.len() != n {
                    return Err(Error::LengthMismatch { expected: n, got: r.len() });
                }
                Ok(r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = MatrixMeta {
            system: "dense".into(),
            epsilon: 0.0,
            weight: "n/a".into(),
            region: "n/a".into(),
            resolution: n,
            samples_per_cell: 0,
            seed: 0,
        };
        Self::from_rows(rows, vec![1.0; n], (0..n).collect(), meta)
    }

    pub fn n_cells(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.iter().all(|&v| v == 0.0)
    }

    /// Iterates `(i, j, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cells()).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_cells();
        let mut d = vec![vec![0.0; n]; n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_cells() {
            return Err(Error::LengthMismatch {
                expected: self.n_cells(),
                got: len,
            });
        }
        Ok(())
    }

    /// `out_i = sum_j M[i][j] v_j` (action on observables).
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&j, &m)| m * v[j]).sum();
        });
    }

    /// `out_j = sum_i M[i][j] u_i` (action on densities).
    pub fn apply_adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &m) in cols.iter().zip(vals) {
                out[j] += m * ui;
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = vec![0.0; u.len()];
        self.apply_adjoint_into(u, &mut out);
        Ok(out)
    }

    /// Principal submatrix on the local indices in `subset` (killing outside it).
    pub fn restrict(&self, subset: &[usize]) -> Result<AnnealedMatrix> {
        let mut keep: Vec<usize> = subset.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::InvalidInput("restriction to an empty cell set".into()));
        }
        let n = self.n_cells();
        if let Some(&bad) = keep.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("cell {bad} out of range for {n} cells")));
        }
        let mut local = vec![usize::MAX; n];
        for (k, &i) in keep.iter().enumerate() {
            local[i] = k;
        }
        let rows = keep
            .iter()
            .map(|&i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .filter(|(&j, _)| local[j] != usize::MAX)
                    .map(|(&j, &v)| (local[j], v))
                    .collect()
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.region = format!("{}|restricted[{}]", meta.region, keep.len());
        AnnealedMatrix::from_rows(
            rows,
            keep.iter().map(|&i| self.row_weight[i]).collect(),
            keep.iter().map(|&i| self.cells[i]).collect(),
            meta,
        )
    }
}

pub fn restrict_operator(matrix: &AnnealedMatrix, subset: &[usize]) -> Result<AnnealedMatrix> {
    matrix.restrict(subset)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Strata per axis and per source cell.
    pub samples_per_cell: usize,
    /// Subsamples for the coverage of cells straddling the region boundary.
    pub region_subsamples: usize,
    pub seed: u64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            samples_per_cell: 4,
            region_subsamples: 256,
            seed: 0,
        }
    }
}

/// CDF `P(Y < t)` of `Y = U + V`, `U ~ Uniform[a, b]`, `V ~ Uniform[-e, e]`.
fn trapezoid_cdf(a: f64, b: f64, e: f64, t: f64) -> f64 {
    const TINY: f64 = 1e-15;
    let w = b - a;
    let f = if w <= TINY && e <= TINY {
        if t > 0.5 * (a + b) {
            1.0
        } else {
            0.0
        }
    } else if e <= TINY {
        (t - a) / w
    } else if w <= TINY {
        let m = 0.5 * (a + b);
        (t - (m - e)) / (2.0 * e)
    } else {
        let q = |s: f64| {
            let s = s.max(0.0);
            0.5 * s * s
        };
        (q(t - a + e) - q(t - b + e) - q(t - a - e) + q(t - b - e)) / (w * 2.0 * e)
    };
    f.clamp(0.0, 1.0)
}

/// Distribution of one coordinate of `T(stratum) + delta` over the cells of
/// grid box `gb` along `axis`, as `(cell coordinate, mass)` pairs.
#[allow(clippy::too_many_arguments)]
fn axis_masses(
    grid: &GridPartition,
    gb: usize,
    axis: usize,
    image: (f64, f64),
    e: f64,
    wrap: Option<(f64, f64)>,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    let (a, b) = image;
    let res = grid.axis_resolution(axis);
    let lo = grid.boxes[gb].lo[axis];
    let hi = grid.boxes[gb].hi[axis];
    let h = grid.cell_width(gb, axis);
    let (s_lo, s_hi) = (a - e, b + e);
    let shifts: Vec<f64> = match wrap {
        Some((p_lo, period)) => {
            if lo < p_lo - 1e-12 || hi > p_lo + period + 1e-12 {
                return;
            }
            let first = ((s_lo - p_lo) / period).floor() as i64;
            let last = ((s_hi - p_lo) / period).floor() as i64;
            (first..=last).map(|t| t as f64 * period).collect()
        }
        None => vec![0.0],
    };
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for shift in shifts {
        let (l, r) = (s_lo - shift, s_hi - shift);
        if r < lo || l >= hi {
            continue;
        }
        let m0 = (((l - lo) / h).floor().max(0.0) as usize).min(res - 1);
        let m1 = (((r - lo) / h).floor().max(0.0) as usize).min(res - 1);
        for m in m0..=m1 {
            let c0 = lo + m as f64 * h;
            let c1 = if m + 1 == res { hi } else { lo + (m + 1) as f64 * h };
            let mass = trapezoid_cdf(a, b, e, c1 + shift) - trapezoid_cdf(a, b, e, c0 + shift);
            if mass > MASS_FLOOR {
                *acc.entry(m).or_insert(0.0) += mass;
            }
        }
    }
    out.extend(acc);
}

/// Assembles the Ulam matrix of the annealed operator killed outside `region`.
pub fn assemble_operator(
    map: &MapSystem,
    noise: &NoiseModel,
    weight: &WeightField,
    region: &RegionSpec,
    grid: &GridPartition,
    opts: &AssemblyOptions,
) -> Result<AnnealedMatrix> {
    if opts.samples_per_cell == 0 {
        return Err(Error::InvalidInput("samples_per_cell must be at least 1".into()));
    }
    if map.dim != grid.dim || noise.dim != grid.dim {
        return Err(Error::InvalidInput("map, noise and grid dimensions differ".into()));
    }
    let n = grid.n_cells();
    let dim = grid.dim;
    let coverage: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            region_fraction(
                region,
                &grid.cell(j),
                dim,
                opts.region_subsamples.max(1),
                rng::derive(opts.seed, j as u64),
            )
        })
        .collect::<Result<_>>()?;
    if coverage.iter().all(|&c| c == 0.0) {
        return Err(Error::EmptyRegion);
    }
    let row_weight: Vec<f64> = (0..n).map(|i| weight.eval(grid.center(i))).collect();

    let strata = [
        opts.samples_per_cell,
        if dim == Dim::Two { opts.samples_per_cell } else { 1 },
    ];
    let stratum_share = 1.0 / (strata[0] * strata[1]) as f64;
    let axes = dim.count();

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if coverage[i] == 0.0 || row_weight[i] == 0.0 {
                return Vec::new();
            }
            let mut rng = rng::stream(opts.seed, i as u64);
            let cell = grid.cell(i);
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            let mut masses: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
            for sa in 0..strata[0] {
                for sb in 0..strata[1] {
                    let s = [sa, sb];
                    let mut lo = [0.0; 2];
                    let mut hi = [0.0; 2];
                    let mut u = [0.0; 2];
                    for k in 0..2 {
                        let w = cell.width(k) / strata[k] as f64;
                        lo[k] = cell.lo[k] + s[k] as f64 * w;
                        hi[k] = lo[k] + w;
                        u[k] = if k < axes {
                            lo[k] + (0.25 + 0.5 * rng.random::<f64>()) * w
                        } else {
                            cell.lo[k]
                        };
                    }
                    let Some((home, c, d)) = map.forward_linearised(u) else {
                        continue;
                    };
                    let piece = &map.pieces[home];
                    let mut image = [(0.0, 0.0); 2];
                    for k in 0..2 {
                        if k < axes {
                            let p = c[k] + d[k] * (lo[k] - u[k]);
                            let q = c[k] + d[k] * (hi[k] - u[k]);
                            image[k] = (p.min(q), p.max(q));
                        } else {
                            image[k] = (c[k], c[k]);
                        }
                    }
                    for gb in 0..grid.boxes.len() {
                        for k in 0..2 {
                            let e = if k < axes { noise.epsilon } else { 0.0 };
                            let wrap = (k < axes
                                && noise.boundary == BoundaryRule::PeriodicWrap
                                && piece.periodic[k])
                                .then(|| (piece.domain.lo[k], piece.domain.width(k)));
                            axis_masses(grid, gb, k, image[k], e, wrap, &mut masses[k]);
                        }
                        for &(mx, px) in &masses[0] {
                            for &(my, py) in &masses[1] {
                                let j = grid.cell_index(gb, [mx, my]);
                                let v = px * py * coverage[j];
                                if v > MASS_FLOOR {
                                    *acc.entry(j).or_insert(0.0) += v * stratum_share;
                                }
                            }
                        }
                    }
                }
            }
            acc.into_iter()
                .map(|(j, v)| (j, v * row_weight[i]))
                .collect()
        })
        .collect();

    let meta = MatrixMeta {
        system: map.label.clone(),
        epsilon: noise.epsilon,
        weight: weight.label(),
        region: region.label.clone(),
        resolution: grid.resolution,
        samples_per_cell: opts.samples_per_cell,
        seed: opts.seed,
    };
    AnnealedMatrix::from_rows(rows, row_weight, (0..n).collect(), meta)
}
