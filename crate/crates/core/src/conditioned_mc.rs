//! Interacting particle estimates of conditioned Birkhoff averages.
//!
//! The target is
//! `E_x[e^{S_n phi} 1_{tau > n} (1/n) sum_{i<n} h(X_i)] / E_x[e^{S_n phi} 1_{tau > n}]`.
//! Particles are split into independent blocks; each block carries its own
//! random stream, resamples only internally and keeps its total mass as a log
//! scale. The pooled ratio estimator sums over blocks and the standard error is
//! a jackknife over blocks, so results do not depend on the thread count.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_random, MapSystem, NoiseModel, Point, RegionSpec, State, WeightField};
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::SpectralTriple;
use crate::ulam::GridPartition;

/// Test function `h` of the Birkhoff average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    Coordinate { axis: usize },
    Square { axis: usize },
    Cos2Pi { axis: usize },
    Sin2Pi { axis: usize },
}

impl Observable {
    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            Observable::Constant { value } => value,
            Observable::Coordinate { axis } => p[axis],
            Observable::Square { axis } => p[axis] * p[axis],
            Observable::Cos2Pi { axis } => (2.0 * PI * p[axis]).cos(),
            Observable::Sin2Pi { axis } => (2.0 * PI * p[axis]).sin(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Observable::Constant { value } => format!("const({value})"),
            Observable::Coordinate { axis } => format!("x{axis}"),
            Observable::Square { axis } => format!("x{axis}^2"),
            Observable::Cos2Pi { axis } => format!("cos(2pi x{axis})"),
            Observable::Sin2Pi { axis } => format!("sin(2pi x{axis})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    Point { x: Point },
    /// Uniform on the boxes of a region.
    Uniform { region: RegionSpec },
}

impl Start {
    fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        match self {
            Start::Point { x } => *x,
            Start::Uniform { region } => {
                let total: f64 = region.boxes.iter().map(|b| b.volume()).sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = region.boxes.last().unwrap();
                for b in &region.boxes {
                    if u < b.volume() {
                        pick = b;
                        break;
                    }
                    u -= b.volume();
                }
                [
                    pick.lo[0] + rng.random::<f64>() * pick.width(0),
                    pick.lo[1] + rng.random::<f64>() * pick.width(1),
                ]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_steps: usize,
    pub n_particles: usize,
    /// Resample when ESS / particles falls below this.
    pub resample_threshold: f64,
    pub n_blocks: usize,
    /// Fraction of steps discarded before the escape-rate windows.
    pub burn_in: f64,
    pub n_windows: usize,
    /// Lag of the occupation histogram; positions are weighted by the particle
    /// weight this many steps later.
    pub histogram_lag: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_steps: 10_000,
            n_particles: 10_000,
            resample_threshold: 0.5,
            n_blocks: 10,
            burn_in: 0.2,
            n_windows: 10,
            histogram_lag: 32,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    fn check(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidInput("need at least 2 particles".into()));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::InvalidInput("resample threshold must lie in [0, 1]".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidInput("need at least one block".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidInput("burn-in fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub observables: Vec<Observable>,
    /// One estimate per observable.
    pub conditioned_average: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Fraction of particles alive right after the last step.
    pub survival_fraction: f64,
    /// `None` when there are fewer than two windows past the burn-in.
    pub escape_rate_estimate: Option<f64>,
    /// `(time, log total mass)` at the window boundaries past the burn-in.
    pub log_mass_series: Vec<(usize, f64)>,
    pub n_steps: usize,
    pub n_particles: usize,
    pub n_blocks: usize,
    pub resample_events: usize,
    pub extinct_blocks: usize,
    /// Lagged occupation histogram on the requested grid.
    pub occupation: Option<Vec<f64>>,
}

impl EnsembleStats {
    pub fn average(&self, k: usize) -> f64 {
        self.conditioned_average[k]
    }

    pub fn error(&self, k: usize) -> f64 {
        self.standard_error[k]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialise")
    }

    pub fn mass_csv(&self) -> String {
        let mut s = String::from("time,log_mass\n");
        for (t, m) in &self.log_mass_series {
            s.push_str(&format!("{t},{m:.17e}\n"));
        }
        s
    }
}

struct Problem<'a> {
    map: &'a MapSystem,
    noise: &'a NoiseModel,
    weight: &'a WeightField,
    region: &'a RegionSpec,
    start: &'a Start,
    observables: &'a [Observable],
    cfg: &'a EnsembleConfig,
    grid: Option<&'a GridPartition>,
}

struct BlockResult {
    /// `sum_i w_i * birkhoff_i / n` per observable, with the final weights.
    numerators: Vec<f64>,
    /// `sum_i w_i` with the final weights.
    denominator: f64,
    /// Log of the factor turning the final weight sums into block masses.
    sum_log: f64,
    /// Log normalisation of the weights after each step (`-inf` once extinct).
    log_scale: Vec<f64>,
    alive: usize,
    size: usize,
    resamples: usize,
    extinct_at: Option<usize>,
    occupation: Option<Vec<f64>>,
}

const NO_CELL: u32 = u32::MAX;

fn run_block(p: &Problem, block: usize, size: usize) -> BlockResult {
    let n = p.cfg.n_steps;
    let n_obs = p.observables.len();
    let mut rng = rng::stream(p.cfg.seed, block as u64);
    let mut pos: Vec<Point> = (0..size).map(|_| p.start.sample(&mut rng)).collect();
    let mut alive: Vec<bool> = pos.iter().map(|&x| p.region.contains(x)).collect();
    let mut w: Vec<f64> = alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut birk = vec![0.0; size * n_obs];
    let mut log_scale = Vec::with_capacity(n + 1);
    let mut log_l = 0.0;
    let mut resamples = 0;

    let lag = p.cfg.histogram_lag.max(1);
    let window = (n / 4, 3 * n / 4);
    let mut ring = p.grid.map(|_| vec![NO_CELL; size * lag]);
    let mut hist = p.grid.map(|g| vec![0.0; g.n_cells()]);
    let mut hist_steps = 0usize;

    let mut scratch_pos = pos.clone();
    let mut scratch_birk = birk.clone();
    let mut scratch_ring = ring.clone();

    let extinct = |log_scale: &mut Vec<f64>, k: usize, res: usize| {
        log_scale.resize(n + 1, f64::NEG_INFINITY);
        BlockResult {
            numerators: vec![0.0; n_obs],
            denominator: 0.0,
            sum_log: f64::NEG_INFINITY,
            log_scale: std::mem::take(log_scale),
            alive: 0,
            size,
            resamples: res,
            extinct_at: Some(k),
            occupation: None,
        }
    };

    let total0: f64 = w.iter().sum();
    if total0 == 0.0 {
        return extinct(&mut log_scale, 0, 0);
    }
    let s0 = total0 / size as f64;
    log_l += s0.ln();
    w.iter_mut().for_each(|x| *x /= s0);
    log_scale.push(log_l);

    for k in 0..n {
        for i in 0..size {
            if !alive[i] {
                continue;
            }
            let x = pos[i];
            for (o, h) in p.observables.iter().enumerate() {
                birk[i * n_obs + o] += h.eval(x);
            }
            let phi = p.weight.log_eval(x);
            if phi != 0.0 {
                w[i] *= phi.exp();
            }
            if let (Some(r), Some(g)) = (ring.as_mut(), p.grid) {
                r[i * lag + k % lag] = g.locate(x).map_or(NO_CELL, |c| c as u32);
            }
            match step_random(p.map, p.noise, State::Alive(x), &mut rng) {
                State::Alive(y) if p.region.contains(y) && w[i] > 0.0 => pos[i] = y,
                _ => {
                    alive[i] = false;
                    w[i] = 0.0;
                }
            }
        }
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            return extinct(&mut log_scale, k + 1, resamples);
        }
        if k + 1 == n {
            log_scale.push(log_l + (total / size as f64).ln());
            break;
        }
        let s = total / size as f64;
        log_l += s.ln();
        w.iter_mut().for_each(|x| *x /= s);
        log_scale.push(log_l);

        if let (Some(r), Some(hst)) = (ring.as_ref(), hist.as_mut()) {
            // position recorded at step k + 1 - lag, weighted by the current weight
            if k + 1 >= lag {
                let t = k + 1 - lag;
                if t >= window.0 && t < window.1 {
                    for i in 0..size {
                        let c = r[i * lag + t % lag];
                        if w[i] > 0.0 && c != NO_CELL {
                            hst[c as usize] += w[i] / size as f64;
                        }
                    }
                    hist_steps += 1;
                }
            }
        }

        let sq: f64 = w.iter().map(|x| x * x).sum();
        let ess = (size as f64) * (size as f64) / sq;
        if ess < p.cfg.resample_threshold * size as f64 {
            resamples += 1;
            // systematic resampling; weights are normalised to mean one
            let u0: f64 = rng.random::<f64>();
            let mut cum = 0.0;
            let mut j = 0usize;
            for (m, slot) in (0..size).map(|m| (m, (m as f64 + u0))) {
                while j < size - 1 && cum + w[j] <= slot {
                    cum += w[j];
                    j += 1;
                }
                while w[j] == 0.0 {
                    // only reachable at the tail through roundoff in the cumulative sum
                    j -= 1;
                }
                scratch_pos[m] = pos[j];
                scratch_birk[m * n_obs..(m + 1) * n_obs].copy_from_slice(&birk[j * n_obs..(j + 1) * n_obs]);
                if let (Some(src), Some(dst)) = (ring.as_ref(), scratch_ring.as_mut()) {
                    dst[m * lag..(m + 1) * lag].copy_from_slice(&src[j * lag..(j + 1) * lag]);
                }
            }
            std::mem::swap(&mut pos, &mut scratch_pos);
            std::mem::swap(&mut birk, &mut scratch_birk);
            std::mem::swap(&mut ring, &mut scratch_ring);
            alive.iter_mut().for_each(|a| *a = true);
            w.iter_mut().for_each(|x| *x = 1.0);
        }
    }

    let mut numerators = vec![0.0; n_obs];
    let mut denominator = 0.0;
    for i in 0..size {
        if w[i] == 0.0 {
            continue;
        }
        denominator += w[i];
        for (o, num) in numerators.iter_mut().enumerate() {
            *num += w[i] * (birk[i * n_obs + o] / n as f64);
        }
    }
    let occupation = hist.map(|mut h| {
        if hist_steps > 0 {
            h.iter_mut().for_each(|x| *x /= hist_steps as f64);
        }
        h
    });
    BlockResult {
        numerators,
        denominator,
        sum_log: log_l - (size as f64).ln(),
        log_scale,
        alive: alive.iter().filter(|&&a| a).count(),
        size,
        resamples,
        extinct_at: None,
        occupation,
    }
}

fn ratio(blocks: &[&BlockResult], obs: usize) -> Option<f64> {
    let top = blocks.iter().map(|b| b.sum_log).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return None;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for b in blocks {
        let l = b.sum_log;
        if l == f64::NEG_INFINITY {
            continue;
        }
        let s = (l - top).exp();
        num += s * b.numerators[obs];
        den += s * b.denominator;
    }
    (den > 0.0).then(|| num / den)
}

fn log_mass_at(blocks: &[BlockResult], t: usize) -> f64 {
    let top = blocks.iter().map(|b| b.log_scale[t]).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let s: f64 = blocks.iter().map(|b| (b.log_scale[t] - top).exp()).sum();
    top + (s / blocks.len() as f64).ln()
}

fn regression_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs the weighted killed particle ensemble. With `grid`, also returns the
/// lagged occupation histogram over the middle half of the run.
#[allow(clippy::too_many_arguments)]
pub fn run_conditioned(
    map: &MapSystem,
    noise: &NoiseModel,
    weight: &WeightField,
    region: &RegionSpec,
    start: &Start,
    observables: &[Observable],
    cfg: &EnsembleConfig,
    grid: Option<&GridPartition>,
) -> Result<EnsembleStats> {
    cfg.check()?;
    if observables.is_empty() {
        return Err(Error::InvalidInput("at least one observable is required".into()));
    }
    let problem = Problem {
        map,
        noise,
        weight,
        region,
        start,
        observables,
        cfg,
        grid,
    };
    let n_blocks = cfg.n_blocks.min(cfg.n_particles);
    let sizes: Vec<usize> = (0..n_blocks)
        .map(|b| cfg.n_particles / n_blocks + usize::from(b < cfg.n_particles % n_blocks))
        .collect();
    let blocks: Vec<BlockResult> = sizes
        .par_iter()
        .enumerate()
        .map(|(b, &size)| run_block(&problem, b, size))
        .collect();

    if blocks.iter().all(|b| b.extinct_at.is_some()) {
        let time = blocks.iter().filter_map(|b| b.extinct_at).max().unwrap_or(0);
        return Err(Error::EnsembleExtinct { time });
    }

    let all: Vec<&BlockResult> = blocks.iter().collect();
    let mut conditioned_average = Vec::with_capacity(observables.len());
    let mut standard_error = Vec::with_capacity(observables.len());
    for o in 0..observables.len() {
        let full = ratio(&all, o).expect("at least one block survived");
        let loo: Vec<f64> = (0..blocks.len())
            .filter_map(|skip| {
                let rest: Vec<&BlockResult> = all
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != skip)
                    .map(|(_, r)| *r)
                    .collect();
                ratio(&rest, o)
            })
            .collect();
        let se = if loo.len() >= 2 {
            let m = loo.iter().sum::<f64>() / loo.len() as f64;
            let b = loo.len() as f64;
            ((b - 1.0) / b * loo.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
        } else {
            f64::INFINITY
        };
        conditioned_average.push(full);
        standard_error.push(se);
    }

    let n = cfg.n_steps;
    let burn = (cfg.burn_in * n as f64).floor() as usize;
    let windows = cfg.n_windows.min(n - burn);
    let log_mass_series: Vec<(usize, f64)> = if windows >= 1 {
        (0..=windows)
            .map(|j| {
                let t = burn + j * (n - burn) / windows;
                (t, log_mass_at(&blocks, t))
            })
            .collect()
    } else {
        Vec::new()
    };
    let escape_rate_estimate = escape_rate_from_series(&log_mass_series).ok();

    let occupation = grid.map(|g| {
        let mut h = vec![0.0; g.n_cells()];
        let live: Vec<&Vec<f64>> = blocks.iter().filter_map(|b| b.occupation.as_ref()).collect();
        for o in &live {
            for (a, b) in h.iter_mut().zip(o.iter()) {
                *a += b;
            }
        }
        let s: f64 = h.iter().sum();
        if s > 0.0 {
            h.iter_mut().for_each(|x| *x /= s);
        }
        h
    });

    Ok(EnsembleStats {
        observables: observables.to_vec(),
        conditioned_average,
        standard_error,
        survival_fraction: blocks.iter().map(|b| b.alive).sum::<usize>() as f64
            / blocks.iter().map(|b| b.size).sum::<usize>() as f64,
        escape_rate_estimate,
        log_mass_series,
        n_steps: n,
        n_particles: cfg.n_particles,
        n_blocks,
        resample_events: blocks.iter().map(|b| b.resamples).sum(),
        extinct_blocks: blocks.iter().filter(|b| b.extinct_at.is_some()).count(),
        occupation,
    })
}

fn escape_rate_from_series(series: &[(usize, f64)]) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::InvalidInput(
            "escape rate needs at least two windows past the burn-in".into(),
        ));
    }
    if let Some(&(t, _)) = series.iter().find(|(_, m)| !m.is_finite()) {
        return Err(Error::EnsembleExtinct { time: t });
    }
    Ok(-regression_slope(series))
}

/// `-d/dn log E[e^{S_n phi} 1_{tau > n}]` from the late-time mass windows.
pub fn escape_rate_mc(stats: &EnsembleStats) -> Result<f64> {
    escape_rate_from_series(&stats.log_mass_series)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub a: EnsembleStats,
    pub b: EnsembleStats,
    /// `|avg_a - avg_b|` per observable.
    pub difference: Vec<f64>,
    /// `3 (se_a + se_b)` per observable.
    pub bound: Vec<f64>,
}

impl IndependenceReport {
    pub fn passed(&self) -> bool {
        self.difference.iter().zip(&self.bound).all(|(d, b)| d <= b)
    }
}

/// Runs the ensemble from two start points and compares the averages. When
/// `spectral` is given both points must lie where the right eigenfunction is
/// positive.
#[allow(clippy::too_many_arguments)]
pub fn starting_point_independence(
    map: &MapSystem,
    noise: &NoiseModel,
    weight: &WeightField,
    region: &RegionSpec,
    x_a: Point,
    x_b: Point,
    observables: &[Observable],
    cfg: &EnsembleConfig,
    spectral: Option<(&SpectralTriple, &GridPartition)>,
) -> Result<IndependenceReport> {
    if let Some((triple, grid)) = spectral {
        for x in [x_a, x_b] {
            let g = grid
                .locate(x)
                .and_then(|c| triple.cells.iter().position(|&k| k == c))
                .map_or(0.0, |k| triple.right[k]);
            if !(g > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "start point {x:?} lies outside the support of the right eigenfunction"
                )));
            }
        }
    }
    let run = |x: Point| {
        run_conditioned(map, noise, weight, region, &Start::Point { x }, observables, cfg, None)
    };
    let a = run(x_a)?;
    let b = run(x_b)?;
    let difference = a
        .conditioned_average
        .iter()
        .zip(&b.conditioned_average)
        .map(|(x, y)| (x - y).abs())
        .collect();
    let bound = a
        .standard_error
        .iter()
        .zip(&b.standard_error)
        .map(|(x, y)| 3.0 * (x + y))
        .collect();
    Ok(IndependenceReport {
        a,
        b,
        difference,
        bound,
    })
}
