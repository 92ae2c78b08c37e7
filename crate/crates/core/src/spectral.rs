//! Leading eigendata of an [`AnnealedMatrix`] and the quasi-ergodic measure.
//!
//! The right eigenvector `g` is computed in sup-norm normalisation, the left
//! one as a density `m` with `sum m_i vol_i = 1`; the quasi-ergodic measure is
//! `nu_i = g_i m_i vol_i / <m, g>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::ulam::{AnnealedMatrix, GridPartition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
            seed: 0,
        }
    }
}

impl SolverOptions {
    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Power iteration for the right Perron pair. Returns `(lambda, right, residual)`
/// with `right` of unit sup-norm and `residual = |M right - lambda right|_inf`.
pub fn leading_pair(matrix: &AnnealedMatrix, opts: &SolverOptions) -> Result<(f64, Vec<f64>, f64)> {
    opts.check()?;
    let n = matrix.n_cells();
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut res = f64::INFINITY;
    for _ in 0..opts.max_iters {
        matrix.apply_into(&v, &mut w);
        let lambda = sup_norm(&w);
        if !(lambda > 0.0) {
            return Err(Error::NoPositiveSpectralRadius);
        }
        res = v
            .iter()
            .zip(&w)
            .fold(0.0, |m, (a, b)| m.max((b - lambda * a).abs()));
        if res <= opts.tol * lambda {
            return Ok((lambda, v, res));
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / lambda;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: res,
    })
}

/// Power iteration for the left Perron pair. The iterate is the mass vector
/// `mu_i = m_i vol_i` normalised in l1; the residual is `|M^T mu - lambda mu|_1`.
/// Returns `(lambda, density, residual)`.
pub fn leading_left(
    matrix: &AnnealedMatrix,
    volumes: &[f64],
    opts: &SolverOptions,
) -> Result<(f64, Vec<f64>, f64)> {
    opts.check()?;
    let n = matrix.n_cells();
    if volumes.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: volumes.len(),
        });
    }
    let total: f64 = volumes.iter().sum();
    let mut mu: Vec<f64> = volumes.iter().map(|v| v / total).collect();
    let mut w = vec![0.0; n];
    let mut res = f64::INFINITY;
    for _ in 0..opts.max_iters {
        matrix.apply_adjoint_into(&mu, &mut w);
        let lambda: f64 = w.iter().sum();
        if !(lambda > 0.0) {
            return Err(Error::NoPositiveSpectralRadius);
        }
        res = mu.iter().zip(&w).map(|(a, b)| (b - lambda * a).abs()).sum();
        if res <= opts.tol * lambda {
            let density = mu.iter().zip(volumes).map(|(m, v)| m / v).collect();
            return Ok((lambda, density, res));
        }
        for (a, b) in mu.iter_mut().zip(&w) {
            *a = b / lambda;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: res,
    })
}

/// `nu_i = right_i left_i vol_i / sum_j right_j left_j vol_j`, after clamping
/// negative roundoff to zero. Returns the measure and the pairing.
pub fn assemble_qem(right: &[f64], left: &[f64], volumes: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = right.len();
    for len in [left.len(), volumes.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    let raw: Vec<f64> = (0..n)
        .map(|i| right[i].max(0.0) * left[i].max(0.0) * volumes[i])
        .collect();
    let pairing: f64 = raw.iter().sum();
    if !(pairing > 0.0) {
        return Err(Error::DegenerateEigendata);
    }
    Ok((raw.into_iter().map(|x| x / pairing).collect(), pairing))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Estimate of `|lambda_2| / lambda_1`.
    pub ratio: f64,
    /// `false` means the deflated iteration did not settle and `ratio` should
    /// be read as an upper bound of uncertain quality.
    pub converged: bool,
}

const GAP_WINDOW: usize = 32;
const GAP_REL_TOL: f64 = 1e-4;
const GAP_MAX_ITERS: usize = 5000;

/// Growth rate of power iteration on `M` with the dominant eigendirection
/// projected out, relative to `lambda`.
pub fn gap_estimate(
    matrix: &AnnealedMatrix,
    lambda: f64,
    right: &[f64],
    left_mass: &[f64],
    seed: u64,
) -> Result<GapEstimate> {
    let n = matrix.n_cells();
    for len in [right.len(), left_mass.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    if !(lambda > 0.0) {
        return Err(Error::NoPositiveSpectralRadius);
    }
    let norm_g: f64 = left_mass.iter().zip(right).map(|(a, b)| a * b).sum();
    if !(norm_g > 0.0) {
        return Err(Error::DegenerateEigendata);
    }
    let deflate = |v: &mut [f64]| {
        let c: f64 = left_mass.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / norm_g;
        for (x, g) in v.iter_mut().zip(right) {
            *x -= c * g;
        }
    };
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut r = rng::stream(seed, 0x6a70);
    let mut v: Vec<f64> = (0..n).map(|_| 0.5 + r.random::<f64>()).collect();
    deflate(&mut v);
    let s = l2(&v);
    if s == 0.0 {
        return Ok(GapEstimate { ratio: 0.0, converged: true });
    }
    v.iter_mut().for_each(|x| *x /= s);

    let mut w = vec![0.0; n];
    let mut log_sum = 0.0;
    let mut previous: Option<f64> = None;
    let mut estimate = 1.0;
    for k in 1..=GAP_MAX_ITERS {
        matrix.apply_into(&v, &mut w);
        deflate(&mut w);
        let s = l2(&w);
        if s <= 1e-14 * lambda {
            return Ok(GapEstimate { ratio: 0.0, converged: true });
        }
        log_sum += (s / lambda).ln();
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / s;
        }
        if k % GAP_WINDOW == 0 {
            estimate = (log_sum / GAP_WINDOW as f64).exp();
            log_sum = 0.0;
            if let Some(p) = previous {
                if (estimate - p).abs() <= GAP_REL_TOL * p.max(1e-300) {
                    return Ok(GapEstimate {
                        ratio: estimate.clamp(0.0, 1.0),
                        converged: true,
                    });
                }
            }
            previous = Some(estimate);
        }
    }
    Ok(GapEstimate {
        ratio: estimate.clamp(0.0, 1.0),
        converged: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub min_mass: f64,
    /// Reference cells (grid indices) carrying less than the floor, with their mass.
    pub violations: Vec<(usize, f64)>,
}

impl SupportReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Leading eigendata and quasi-ergodic measure of one matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTriple {
    pub lambda: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub pairing: f64,
    pub qem: Vec<f64>,
    pub right_residual: f64,
    pub left_residual: f64,
    pub lambda_left: f64,
    pub gap_ratio: f64,
    pub gap_converged: bool,
    /// Grid cell of each entry.
    pub cells: Vec<usize>,
    pub volumes: Vec<f64>,
}

impl SpectralTriple {
    pub fn solve(matrix: &AnnealedMatrix, grid: &GridPartition, opts: &SolverOptions) -> Result<Self> {
        let volumes: Vec<f64> = matrix.cells.iter().map(|&c| grid.volume(c)).collect();
        Self::solve_with_volumes(matrix, volumes, opts)
    }

    pub fn solve_with_volumes(
        matrix: &AnnealedMatrix,
        volumes: Vec<f64>,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let (lambda, right, right_residual) = leading_pair(matrix, opts)?;
        let (lambda_left, left, left_residual) = leading_left(matrix, &volumes, opts)?;
        let (qem, pairing) = assemble_qem(&right, &left, &volumes)?;
        let left_mass: Vec<f64> = left.iter().zip(&volumes).map(|(a, b)| a * b).collect();
        let gap = gap_estimate(matrix, lambda, &right, &left_mass, opts.seed)?;
        Ok(Self {
            lambda,
            right,
            left,
            pairing,
            qem,
            right_residual,
            left_residual,
            lambda_left,
            gap_ratio: gap.ratio,
            gap_converged: gap.converged,
            cells: matrix.cells.clone(),
            volumes,
        })
    }

    /// Mass of the quasi-ergodic measure on a grid cell (zero if the cell is
    /// not part of this triple).
    pub fn qem_of_cell(&self, cell: usize) -> f64 {
        self.cells
            .iter()
            .position(|&c| c == cell)
            .map_or(0.0, |k| self.qem[k])
    }

    /// Quasi-ergodic measure spread onto all `n_cells` grid cells.
    pub fn qem_on_grid(&self, n_cells: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cells];
        for (&c, &q) in self.cells.iter().zip(&self.qem) {
            if c < n_cells {
                out[c] = q;
            }
        }
        out
    }

    /// Integral of `h` against the quasi-ergodic measure (evaluated at cell centres).
    pub fn qem_expectation(&self, grid: &GridPartition, h: impl Fn([f64; 2]) -> f64) -> f64 {
        self.cells
            .iter()
            .zip(&self.qem)
            .map(|(&c, &q)| q * h(grid.center(c)))
            .sum()
    }
}

/// Checks that every reference cell (grid index) carries at least `floor` mass.
pub fn support_check(triple: &SpectralTriple, reference: &[usize], floor: f64) -> SupportReport {
    let mut min_mass = f64::INFINITY;
    let mut violations = Vec::new();
    for &c in reference {
        let m = triple.qem_of_cell(c);
        min_mass = min_mass.min(m);
        if m < floor {
            violations.push((c, m));
        }
    }
    if reference.is_empty() {
        min_mass = 0.0;
    }
    SupportReport { min_mass, violations }
}
