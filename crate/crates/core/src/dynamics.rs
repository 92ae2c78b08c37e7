//! Deterministic maps, the additive noise model, weight fields and box regions.
//!
//! Points are stored as `[f64; 2]` for both one- and two-dimensional systems. A
//! one-dimensional system carries a dummy second coordinate fixed at `0.0`, and
//! its boxes span the unit interval `[0, 1)` on that axis, so volumes and
//! memberships are computed by the same code in both cases.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    One,
    Two,
}

impl Dim {
    pub fn count(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::Two => 2,
        }
    }
}

/// Half-open axis-aligned box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl AxisBox {
    /// One-dimensional interval `[lo, hi)` (dummy axis `[0, 1)`).
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: [lo, 0.0],
            hi: [hi, 1.0],
        }
    }

    pub fn rect(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        self.width(0) * self.width(1)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width(0) > 0.0 && self.width(1) > 0.0)
            || !self.volume().is_finite()
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|k| p[k] >= self.lo[k] && p[k] < self.hi[k])
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        (0..2).all(|k| other.lo[k] >= self.lo[k] && other.hi[k] <= self.hi[k])
    }

    pub fn overlap_volume(&self, other: &AxisBox) -> f64 {
        (0..2)
            .map(|k| (self.hi[k].min(other.hi[k]) - self.lo[k].max(other.lo[k])).max(0.0))
            .product()
    }

    /// Euclidean distance from `p` to the closed box; zero inside.
    pub fn distance(&self, p: Point) -> f64 {
        (0..2)
            .map(|k| {
                let d = (self.lo[k] - p[k]).max(p[k] - self.hi[k]).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A union of half-open boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub label: String,
    pub boxes: Vec<AxisBox>,
}

impl RegionSpec {
    pub fn new(label: impl Into<String>, boxes: Vec<AxisBox>) -> Self {
        Self {
            label: label.into(),
            boxes,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.iter().all(|b| b.is_degenerate())
    }

    /// Distance from `p` to the closure of the region (infinite for an empty region).
    pub fn distance(&self, p: Point) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// `domain \ self` as a union of boxes, built on the grid of all box edges.
    pub fn complement_within(&self, domain: &[AxisBox], label: impl Into<String>) -> RegionSpec {
        let mut cuts: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for b in domain.iter().chain(self.boxes.iter()) {
            for k in 0..2 {
                cuts[k].push(b.lo[k]);
                cuts[k].push(b.hi[k]);
            }
        }
        for c in cuts.iter_mut() {
            c.sort_by(f64::total_cmp);
            c.dedup();
        }
        let mut boxes = Vec::new();
        for xs in cuts[0].windows(2) {
            for ys in cuts[1].windows(2) {
                let cell = AxisBox::rect([xs[0], ys[0]], [xs[1], ys[1]]);
                let c = cell.center();
                if domain.iter().any(|d| d.contains(c)) && !self.contains(c) {
                    boxes.push(cell);
                }
            }
        }
        RegionSpec::new(label, boxes)
    }
}

/// Fraction of `cell` covered by `region`.
///
/// Exact (`0` or `1`) when the cell lies inside one box of the region or misses
/// all of them; otherwise a jittered stratified estimate with `subsamples`
/// points.
pub fn region_fraction(
    region: &RegionSpec,
    cell: &AxisBox,
    dim: Dim,
    subsamples: usize,
    seed: u64,
) -> Result<f64> {
    if cell.is_degenerate() {
        return Err(Error::DegenerateBox);
    }
    if subsamples == 0 {
        return Err(Error::InvalidInput("subsamples must be at least 1".into()));
    }
    if region.boxes.iter().any(|b| b.contains_box(cell)) {
        return Ok(1.0);
    }
    if region.boxes.iter().all(|b| b.overlap_volume(cell) <= 0.0) {
        return Ok(0.0);
    }
    let mut rng = rng::stream(seed, 0);
    let (nx, ny) = match dim {
        Dim::One => (subsamples, 1),
        Dim::Two => {
            let k = (subsamples as f64).sqrt().ceil() as usize;
            (k, k)
        }
    };
    let mut hits = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            let u = (i as f64 + rng.random::<f64>()) / nx as f64;
            let v = match dim {
                Dim::One => 0.5,
                Dim::Two => (j as f64 + rng.random::<f64>()) / ny as f64,
            };
            let p = [
                cell.lo[0] + u * cell.width(0),
                cell.lo[1] + v * cell.width(1),
            ];
            if region.contains(p) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (nx * ny) as f64)
}

/// Dynamical law of one piece, expressed in unit coordinates of the piece box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Law {
    /// `u -> slope * u mod 1`.
    Expanding { slope: u32 },
    /// `(u, v) -> (3u mod 1, (v + floor(3u)) / 3)`.
    Baker,
    /// `u -> 3u + a sin(2 pi u) mod 1`.
    Smooth { amplitude: f64 },
}

impl Law {
    fn forward(&self, u: Point) -> Point {
        match *self {
            Law::Expanding { slope } => [frac(slope as f64 * u[0]), u[1]],
            Law::Baker => {
                let s = 3.0 * u[0];
                let digit = s.floor();
                [s - digit, (u[1] + digit) / 3.0]
            }
            Law::Smooth { amplitude } => {
                [frac(3.0 * u[0] + amplitude * (2.0 * PI * u[0]).sin()), u[1]]
            }
        }
    }

    /// Diagonal of the derivative (all builtin laws have diagonal Jacobians).
    fn derivative(&self, u: Point) -> [f64; 2] {
        match *self {
            Law::Expanding { slope } => [slope as f64, 0.0],
            Law::Baker => [3.0, 1.0 / 3.0],
            Law::Smooth { amplitude } => [3.0 + 2.0 * PI * amplitude * (2.0 * PI * u[0]).cos(), 0.0],
        }
    }

    fn jacobian_det(&self, u: Point) -> f64 {
        match *self {
            Law::Expanding { slope } => slope as f64,
            Law::Baker => 1.0,
            Law::Smooth { .. } => self.derivative(u)[0],
        }
    }

    fn unstable_log_expansion(&self, u: Point) -> f64 {
        match *self {
            Law::Expanding { slope } => (slope as f64).ln(),
            Law::Baker => 3f64.ln(),
            Law::Smooth { .. } => self.derivative(u)[0].ln(),
        }
    }

    fn on_branch_boundary(&self, u: Point) -> bool {
        const TOL: f64 = 1e-12;
        let s = match *self {
            Law::Expanding { slope } => slope as f64 * u[0],
            Law::Baker => 3.0 * u[0],
            Law::Smooth { amplitude } => 3.0 * u[0] + amplitude * (2.0 * PI * u[0]).sin(),
        };
        (s - s.round()).abs() < TOL
    }

    pub fn dim(&self) -> Dim {
        match self {
            Law::Baker => Dim::Two,
            _ => Dim::One,
        }
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// One box of the domain together with its dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub domain: AxisBox,
    pub law: Law,
    /// Axes on which the piece is a circle (torus coordinates).
    pub periodic: [bool; 2],
}

impl Piece {
    fn to_unit(&self, p: Point) -> Point {
        [
            (p[0] - self.domain.lo[0]) / self.domain.width(0),
            (p[1] - self.domain.lo[1]) / self.domain.width(1),
        ]
    }

    fn unit_to_domain(&self, u: Point) -> Point {
        [
            self.domain.lo[0] + u[0] * self.domain.width(0),
            self.domain.lo[1] + u[1] * self.domain.width(1),
        ]
    }
}

/// A deterministic map `T` on a union of boxes; each box is mapped into itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSystem {
    pub label: String,
    pub dim: Dim,
    pub pieces: Vec<Piece>,
}

impl MapSystem {
    pub fn new(label: impl Into<String>, pieces: Vec<Piece>) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::InvalidInput("a map needs at least one piece".into()))?;
        let dim = first.law.dim();
        for piece in &pieces {
            if piece.domain.is_degenerate() {
                return Err(Error::DegenerateBox);
            }
            if piece.law.dim() != dim {
                return Err(Error::InvalidInput("pieces of mixed dimension".into()));
            }
            if let Law::Expanding { slope } = piece.law {
                if slope < 2 {
                    return Err(Error::InvalidInput("expanding slope must be at least 2".into()));
                }
            }
        }
        Ok(Self {
            label: label.into(),
            dim,
            pieces,
        })
    }

    pub fn domain(&self) -> Vec<AxisBox> {
        self.pieces.iter().map(|p| p.domain).collect()
    }

    pub fn full_region(&self) -> RegionSpec {
        RegionSpec::new(format!("{}:domain", self.label), self.domain())
    }

    pub fn piece_of(&self, p: Point) -> Option<usize> {
        self.pieces.iter().position(|piece| piece.domain.contains(p))
    }

    pub fn forward(&self, p: Point) -> Option<Point> {
        let i = self.piece_of(p)?;
        let piece = &self.pieces[i];
        Some(piece.unit_to_domain(piece.law.forward(piece.to_unit(p))))
    }

    /// Image point, diagonal derivative and index of the piece containing `p`.
    pub fn forward_linearised(&self, p: Point) -> Option<(usize, Point, [f64; 2])> {
        let i = self.piece_of(p)?;
        let piece = &self.pieces[i];
        let u = piece.to_unit(p);
        Some((i, piece.unit_to_domain(piece.law.forward(u)), piece.law.derivative(u)))
    }

    pub fn jacobian_det(&self, p: Point) -> Option<f64> {
        let piece = &self.pieces[self.piece_of(p)?];
        Some(piece.law.jacobian_det(piece.to_unit(p)))
    }

    pub fn unstable_log_expansion(&self, p: Point) -> Option<f64> {
        let piece = &self.pieces[self.piece_of(p)?];
        Some(piece.law.unstable_log_expansion(piece.to_unit(p)))
    }

    pub fn on_branch_boundary(&self, p: Point) -> bool {
        match self.piece_of(p) {
            Some(i) => {
                let piece = &self.pieces[i];
                piece.law.on_branch_boundary(piece.to_unit(p))
            }
            None => false,
        }
    }

    /// Applies the boundary rule to `p` relative to piece `home`; `None` is the cemetery.
    pub fn settle(&self, home: usize, mut p: Point, rule: BoundaryRule) -> Option<Point> {
        let piece = &self.pieces[home];
        if rule == BoundaryRule::PeriodicWrap {
            for k in 0..self.dim.count() {
                if piece.periodic[k] {
                    let lo = piece.domain.lo[k];
                    let w = piece.domain.width(k);
                    let mut q = lo + frac((p[k] - lo) / w) * w;
                    if q >= piece.domain.hi[k] {
                        q = lo;
                    }
                    p[k] = q;
                }
            }
        }
        self.piece_of(p).map(|_| p)
    }
}

/// Ambient boundary behaviour of the perturbed map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Wrap the torus coordinates of each piece, absorb across the others.
    #[default]
    PeriodicWrap,
    /// Anything leaving the domain goes to the cemetery.
    Absorb,
}

/// Additive noise, uniform on `[-epsilon, epsilon]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub epsilon: f64,
    pub dim: Dim,
    pub boundary: BoundaryRule,
}

impl NoiseModel {
    pub fn new(epsilon: f64, dim: Dim) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            dim,
            boundary: BoundaryRule::PeriodicWrap,
        })
    }

    pub fn with_boundary(mut self, boundary: BoundaryRule) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        if self.epsilon == 0.0 {
            return [0.0, 0.0];
        }
        let mut d = [0.0; 2];
        for v in d.iter_mut().take(self.dim.count()) {
            *v = self.epsilon * (2.0 * rng.random::<f64>() - 1.0);
        }
        d
    }

    /// Kernel density at `offset`; only meaningful for `epsilon > 0`.
    pub fn density(&self, offset: Point) -> f64 {
        let n = self.dim.count();
        if (0..n).all(|k| offset[k].abs() <= self.epsilon) {
            (2.0 * self.epsilon).powi(n as i32).recip()
        } else {
            0.0
        }
    }
}

/// Position of the perturbed process; the cemetery absorbs forever.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum State {
    Alive(Point),
    Cemetery,
}

/// One step `T(x) + delta` of the perturbed map, with the boundary rule applied.
pub fn step_random<R: Rng + ?Sized>(
    map: &MapSystem,
    noise: &NoiseModel,
    state: State,
    rng: &mut R,
) -> State {
    let State::Alive(x) = state else {
        return State::Cemetery;
    };
    let Some(home) = map.piece_of(x) else {
        return State::Cemetery;
    };
    let piece = &map.pieces[home];
    let y = piece.unit_to_domain(piece.law.forward(piece.to_unit(x)));
    let d = noise.sample_offset(rng);
    match map.settle(home, [y[0] + d[0], y[1] + d[1]], noise.boundary) {
        Some(p) => State::Alive(p),
        None => State::Cemetery,
    }
}

/// `psi(x) = -log |det DT_x restricted to E^u|`.
pub fn geometric_potential(map: &MapSystem, x: Point) -> Result<f64> {
    if map.on_branch_boundary(x) {
        return Err(Error::BranchBoundary(x));
    }
    map.unstable_log_expansion(x)
        .map(|v| -v)
        .ok_or_else(|| Error::InvalidInput(format!("point {x:?} outside the domain")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub region: AxisBox,
    pub log_weight: f64,
}

/// The potential `phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogWeight {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// Piecewise constant; the first entry containing the point wins.
    Table {
        entries: Vec<WeightEntry>,
        default: f64,
    },
}

impl LogWeight {
    pub fn eval(&self, p: Point) -> f64 {
        match self {
            LogWeight::Zero => 0.0,
            LogWeight::Constant { value } => *value,
            LogWeight::Table { entries, default } => entries
                .iter()
                .find(|e| e.region.contains(p))
                .map_or(*default, |e| e.log_weight),
        }
    }
}

/// Taper forcing the weight to vanish on the boundary of `support` while
/// leaving it untouched on `plateau`.
///
/// The profile is the Urysohn function `d(x, K) / (d(x, K) + d(x, plateau))`
/// where `K` is the domain minus `support`: it equals `0` on `K` (hence on the
/// boundary of the support), `1` on the closure of the plateau, and is strictly
/// positive in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Cutoff {
    pub support: RegionSpec,
    pub plateau: RegionSpec,
    killed: RegionSpec,
}

impl Cutoff {
    pub fn new(support: RegionSpec, plateau: RegionSpec, domain: &[AxisBox]) -> Result<Self> {
        if support.is_empty() || plateau.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let killed = support.complement_within(domain, "cutoff:outside");
        Ok(Self {
            support,
            plateau,
            killed,
        })
    }

    pub fn profile(&self, p: Point) -> f64 {
        if !self.support.contains(p) {
            return 0.0;
        }
        let to_outside = self.killed.distance(p);
        if to_outside <= 0.0 {
            return 0.0;
        }
        let to_plateau = self.plateau.distance(p);
        if to_outside.is_infinite() {
            return 1.0;
        }
        to_outside / (to_outside + to_plateau)
    }
}

/// The multiplicative weight `e^phi`, optionally tapered.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightField {
    pub log_weight: LogWeight,
    pub cutoff: Option<Cutoff>,
}

impl WeightField {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self {
            log_weight: LogWeight::Constant { value },
            cutoff: None,
        }
    }

    pub fn with_cutoff(mut self, cutoff: Cutoff) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn label(&self) -> String {
        let base = match &self.log_weight {
            LogWeight::Zero => "zero".to_string(),
            LogWeight::Constant { value } => format!("constant({value})"),
            LogWeight::Table { entries, .. } => format!("table[{}]", entries.len()),
        };
        match &self.cutoff {
            Some(c) => format!("{base}+cutoff({})", c.support.label),
            None => base,
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        let w = self.log_weight.eval(p).exp();
        match &self.cutoff {
            Some(c) => w * c.profile(p),
            None => w,
        }
    }

    /// `log` of [`WeightField::eval`]; `-inf` where the weight vanishes.
    pub fn log_eval(&self, p: Point) -> f64 {
        let phi = self.log_weight.eval(p);
        match &self.cutoff {
            Some(c) => phi + c.profile(p).ln(),
            None => phi,
        }
    }
}

pub fn eval_weight(w: &WeightField, x: Point) -> f64 {
    w.eval(x)
}

/// Desk-scale oracle systems with Markov holes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSystem {
    TernaryHole,
    OpenBaker,
    FiveHole,
    TwoRepeller,
    SmoothPerturbed { amplitude: f64 },
}

impl BuiltinSystem {
    pub const DEFAULT_SMOOTH_AMPLITUDE: f64 = 0.03;

    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label {
            "ternary_hole" => Self::TernaryHole,
            "open_baker" => Self::OpenBaker,
            "five_hole" => Self::FiveHole,
            "two_repeller" => Self::TwoRepeller,
            "smooth_perturbed" => Self::SmoothPerturbed {
                amplitude: Self::DEFAULT_SMOOTH_AMPLITUDE,
            },
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::TernaryHole => "ternary_hole",
            Self::OpenBaker => "open_baker",
            Self::FiveHole => "five_hole",
            Self::TwoRepeller => "two_repeller",
            Self::SmoothPerturbed { .. } => "smooth_perturbed",
        }
    }

    pub fn map(&self) -> MapSystem {
        let unit = AxisBox::interval(0.0, 1.0);
        let circle = [true, false];
        let pieces = match *self {
            Self::TernaryHole => vec![Piece {
                domain: unit,
                law: Law::Expanding { slope: 3 },
                periodic: circle,
            }],
            Self::OpenBaker => vec![Piece {
                domain: AxisBox::rect([0.0, 0.0], [1.0, 1.0]),
                law: Law::Baker,
                periodic: [true, true],
            }],
            Self::FiveHole => vec![Piece {
                domain: unit,
                law: Law::Expanding { slope: 5 },
                periodic: circle,
            }],
            Self::TwoRepeller => vec![
                Piece {
                    domain: unit,
                    law: Law::Expanding { slope: 3 },
                    periodic: circle,
                },
                Piece {
                    domain: AxisBox::interval(2.0, 3.0),
                    law: Law::Expanding { slope: 5 },
                    periodic: circle,
                },
            ],
            Self::SmoothPerturbed { amplitude } => vec![Piece {
                domain: unit,
                law: Law::Smooth { amplitude },
                periodic: circle,
            }],
        };
        MapSystem::new(self.label(), pieces).expect("builtin maps are well formed")
    }

    /// Complement of the hole: the region the conditioned process must stay in.
    pub fn survivor_region(&self) -> RegionSpec {
        let third = 1.0 / 3.0;
        let two_thirds = 2.0 / 3.0;
        let boxes = match self {
            Self::TernaryHole | Self::SmoothPerturbed { .. } => vec![
                AxisBox::interval(0.0, third),
                AxisBox::interval(two_thirds, 1.0),
            ],
            Self::OpenBaker => vec![
                AxisBox::rect([0.0, 0.0], [third, 1.0]),
                AxisBox::rect([two_thirds, 0.0], [1.0, 1.0]),
            ],
            Self::FiveHole => vec![AxisBox::interval(0.0, 0.6)],
            Self::TwoRepeller => vec![
                AxisBox::interval(0.0, third),
                AxisBox::interval(two_thirds, 1.0),
                AxisBox::interval(2.0, 2.6),
            ],
        };
        RegionSpec::new(format!("{}:survivor", self.label()), boxes)
    }

    /// Analytic dominant eigenvalue of the killed operator with zero weight.
    pub fn escape_eigenvalue(&self) -> Option<f64> {
        match self {
            Self::TernaryHole | Self::OpenBaker => Some(2.0 / 3.0),
            Self::FiveHole => Some(0.6),
            Self::TwoRepeller => Some(2.0 / 3.0),
            Self::SmoothPerturbed { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::SmoothPerturbed { amplitude } = self {
            if !(amplitude.abs() < 0.05) {
                return Err(Error::InvalidInput(format!(
                    "smooth_perturbed amplitude must satisfy |a| < 0.05, got {amplitude}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn ternary_step_without_noise_is_deterministic() {
        let map = BuiltinSystem::TernaryHole.map();
        let noise = NoiseModel::new(0.0, Dim::One).unwrap();
        let mut rng = rng::stream(1, 0);
        match step_random(&map, &noise, State::Alive([0.1, 0.0]), &mut rng) {
            State::Alive(p) => assert!((p[0] - 0.3).abs() < TOL),
            State::Cemetery => panic!("unexpected absorption"),
        }
    }

    #[test]
    fn ternary_step_with_noise_stays_in_kernel_support() {
        let map = BuiltinSystem::TernaryHole.map();
        let noise = NoiseModel::new(0.01, Dim::One).unwrap();
        let mut rng = rng::stream(7, 3);
        for _ in 0..1000 {
            let State::Alive(p) = step_random(&map, &noise, State::Alive([0.1, 0.0]), &mut rng)
            else {
                panic!("unexpected absorption")
            };
            assert!((0.29..=0.31).contains(&p[0]), "{p:?}");
        }
    }

    #[test]
    fn baker_origin_is_fixed() {
        let map = BuiltinSystem::OpenBaker.map();
        let noise = NoiseModel::new(0.0, Dim::Two).unwrap();
        let mut rng = rng::stream(1, 0);
        assert_eq!(
            step_random(&map, &noise, State::Alive([0.0, 0.0]), &mut rng),
            State::Alive([0.0, 0.0])
        );
    }

    #[test]
    fn cemetery_is_absorbing_and_absorb_rule_kills_at_edge() {
        let map = BuiltinSystem::TernaryHole.map();
        let noise = NoiseModel::new(0.05, Dim::One)
            .unwrap()
            .with_boundary(BoundaryRule::Absorb);
        let mut rng = rng::stream(2, 0);
        assert_eq!(
            step_random(&map, &noise, State::Cemetery, &mut rng),
            State::Cemetery
        );
        // 0 is fixed; half of the kernel mass leaves [0, 1).
        let dead = (0..2000)
            .filter(|_| step_random(&map, &noise, State::Alive([0.0, 0.0]), &mut rng) == State::Cemetery)
            .count();
        assert!((800..1200).contains(&dead), "{dead}");
    }

    #[test]
    fn seeded_steps_are_reproducible() {
        let map = BuiltinSystem::SmoothPerturbed { amplitude: 0.03 }.map();
        let noise = NoiseModel::new(0.02, Dim::One).unwrap();
        let run = || {
            let mut rng = rng::stream(99, 5);
            let mut s = State::Alive([0.123, 0.0]);
            let mut out = Vec::new();
            for _ in 0..50 {
                s = step_random(&map, &noise, s, &mut rng);
                out.push(s);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kernel_density_integrates_to_one() {
        for dim in [Dim::One, Dim::Two] {
            let noise = NoiseModel::new(0.013, dim).unwrap();
            let n = 400;
            let half = 0.02;
            let h = 2.0 * half / n as f64;
            let mut total = 0.0;
            for i in 0..n {
                let x = -half + (i as f64 + 0.5) * h;
                match dim {
                    Dim::One => total += noise.density([x, 0.0]) * h,
                    Dim::Two => {
                        for j in 0..n {
                            let y = -half + (j as f64 + 0.5) * h;
                            total += noise.density([x, y]) * h * h;
                        }
                    }
                }
            }
            // midpoint grid chosen so kernel edges fall on cell boundaries
            assert!((total - 1.0).abs() < 1e-6, "{dim:?}: {total}");
        }
    }

    #[test]
    fn negative_epsilon_rejected() {
        assert!(NoiseModel::new(-1e-3, Dim::One).is_err());
    }

    #[test]
    fn weights() {
        let p = [0.37, 0.0];
        assert_eq!(eval_weight(&WeightField::zero(), p), 1.0);
        assert!((eval_weight(&WeightField::constant(2f64.ln()), p) - 2.0).abs() < TOL);
    }

    #[test]
    fn tapered_weight_vanishes_on_support_boundary() {
        let sys = BuiltinSystem::TernaryHole;
        let support = sys.survivor_region();
        let plateau = RegionSpec::new(
            "inner",
            vec![
                AxisBox::interval(0.0, 1.0 / 9.0),
                AxisBox::interval(2.0 / 9.0, 1.0 / 3.0),
                AxisBox::interval(2.0 / 3.0, 7.0 / 9.0),
                AxisBox::interval(8.0 / 9.0, 1.0),
            ],
        );
        let cutoff = Cutoff::new(support, plateau, &sys.map().domain()).unwrap();
        let w = WeightField::zero().with_cutoff(cutoff);
        assert_eq!(w.eval([1.0 / 3.0, 0.0]), 0.0);
        assert_eq!(w.eval([2.0 / 3.0, 0.0]), 0.0);
        assert_eq!(w.eval([0.5, 0.0]), 0.0);
        assert_eq!(w.eval([0.05, 0.0]), 1.0);
        assert_eq!(w.eval([0.9, 0.0]), 1.0);
        let mid = w.eval([1.5 / 9.0, 0.0]);
        assert!(mid > 0.0 && mid < 1.0, "{mid}");
        assert_eq!(w.log_eval([0.5, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn geometric_potential_of_builtins() {
        let t = BuiltinSystem::TernaryHole.map();
        assert!((geometric_potential(&t, [0.1, 0.0]).unwrap() + 3f64.ln()).abs() < TOL);
        let b = BuiltinSystem::OpenBaker.map();
        assert!((geometric_potential(&b, [0.1, 0.7]).unwrap() + 3f64.ln()).abs() < TOL);
        let f = BuiltinSystem::FiveHole.map();
        assert!((geometric_potential(&f, [0.77, 0.0]).unwrap() + 5f64.ln()).abs() < TOL);
        assert!(matches!(
            geometric_potential(&t, [1.0 / 3.0, 0.0]),
            Err(Error::BranchBoundary(_))
        ));
    }

    #[test]
    fn jacobians_of_builtins() {
        for (sys, det) in [
            (BuiltinSystem::TernaryHole, 3.0),
            (BuiltinSystem::FiveHole, 5.0),
            (BuiltinSystem::OpenBaker, 1.0),
        ] {
            let map = sys.map();
            for i in 0..97 {
                let x = (i as f64 + 0.5) / 97.0;
                let p = [x, 0.3 * (map.dim == Dim::Two) as u8 as f64];
                assert_eq!(map.jacobian_det(p), Some(det));
            }
        }
        let two = BuiltinSystem::TwoRepeller.map();
        assert_eq!(two.jacobian_det([0.5, 0.0]), Some(3.0));
        assert_eq!(two.jacobian_det([2.5, 0.0]), Some(5.0));
        assert_eq!(two.jacobian_det([1.5, 0.0]), None);
    }

    #[test]
    fn two_repeller_pieces_map_to_themselves() {
        let map = BuiltinSystem::TwoRepeller.map();
        let y = map.forward([2.3, 0.0]).unwrap();
        assert!((y[0] - 2.5).abs() < TOL);
        let y = map.forward([0.9, 0.0]).unwrap();
        assert!((y[0] - 0.7).abs() < TOL);
    }

    #[test]
    fn region_fraction_examples() {
        let region = BuiltinSystem::TernaryHole.survivor_region();
        let f = |lo, hi, n| region_fraction(&region, &AxisBox::interval(lo, hi), Dim::One, n, 11);
        assert_eq!(f(0.0, 1.0 / 3.0, 1).unwrap(), 1.0);
        assert_eq!(f(1.0 / 3.0, 2.0 / 3.0, 1).unwrap(), 0.0);
        let straddle = f(0.25, 0.40, 10_000).unwrap();
        assert!((straddle - 5.0 / 9.0).abs() < 0.02, "{straddle}");
        assert_eq!(f(0.3, 0.3, 10), Err(Error::DegenerateBox));
    }

    #[test]
    fn complement_within_domain() {
        let region = BuiltinSystem::TernaryHole.survivor_region();
        let hole = region.complement_within(&[AxisBox::interval(0.0, 1.0)], "hole");
        assert!(hole.contains([0.5, 0.0]));
        assert!(!hole.contains([0.1, 0.0]));
        let total: f64 = hole.boxes.iter().map(AxisBox::volume).sum();
        assert!((total - 1.0 / 3.0).abs() < TOL);
    }
}
