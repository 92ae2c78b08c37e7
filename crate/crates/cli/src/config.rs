//! Experiment configuration and its validation.

use std::collections::BTreeMap;

use qemlab::dynamics::{BuiltinSystem, LogWeight, MapSystem, RegionSpec};
use qemlab::filtration::filtration_order;
use qemlab::{ConnectionGraph, Cutoff, EnsembleConfig, Error, Observable, SolverOptions, Start, WeightField};
use serde::{Deserialize, Serialize};

use crate::diag::{Code, Diagnostic};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub weight: WeightSpec,
    /// Conditioning region; the system's survivor region when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtration: Option<FiltrationSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// A builtin label, a builtin with parameters, or a custom piecewise map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Label(String),
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
    },
    Custom {
        map: MapSystem,
        survivor: RegionSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default)]
    pub log_weight: LogWeight,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub support: RegionSpec,
    pub plateau: RegionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub resolution: usize,
    pub samples_per_cell: usize,
    pub region_subsamples: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 243,
            samples_per_cell: 4,
            region_subsamples: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    One(f64),
    List(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub epsilon: Epsilon,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::One(0.0),
        }
    }
}

impl NoiseSpec {
    pub fn values(&self) -> Vec<f64> {
        match &self.epsilon {
            Epsilon::One(e) => vec![*e],
            Epsilon::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    #[serde(alias = "n")]
    pub n_steps: usize,
    pub n_particles: usize,
    pub resample_threshold: f64,
    pub n_blocks: usize,
    pub burn_in: f64,
    pub n_windows: usize,
    pub histogram_lag: usize,
    pub observables: Vec<Observable>,
    /// Uniform on the conditioning region when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Start>,
    /// Also record the lagged occupation histogram on the grid.
    pub histogram: bool,
}

impl Default for McSpec {
    fn default() -> Self {
        let d = EnsembleConfig::default();
        Self {
            n_steps: d.n_steps,
            n_particles: d.n_particles,
            resample_threshold: d.resample_threshold,
            n_blocks: d.n_blocks,
            burn_in: d.burn_in,
            n_windows: d.n_windows,
            histogram_lag: d.histogram_lag,
            observables: vec![Observable::Coordinate { axis: 0 }],
            start: None,
            histogram: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Depth of the symbolic reference measure (builtins only).
    pub reference_depth: usize,
    /// Number of frequencies per axis in the discrepancy dictionary.
    pub dictionary: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            reference_depth: 7,
            dictionary: qemlab::equilibrium::TestDictionary::DEFAULT_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltrationSpec {
    pub graph: ConnectionGraph,
    /// Cells of each basic set, keyed by node id; triggers the stratified solve.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<u32, RegionSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatrixExport {
    Text,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
    pub format: TableFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixExport>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: "qemlab-out".into(),
            format: TableFormat::Csv,
            matrix: None,
        }
    }
}

/// Everything a command needs about the dynamics, resolved from labels.
pub struct Resolved {
    pub label: String,
    pub builtin: Option<BuiltinSystem>,
    pub map: MapSystem,
    pub region: RegionSpec,
    pub weight: WeightField,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Diagnostic> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Diagnostic::new(Code::Parse, e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks the whole config; command-specific requirements are checked by the commands.
    pub fn validate(&self) -> Result<(), Diagnostic> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Diagnostic::new(
                Code::Schema,
                format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        for e in self.noise.values() {
            if !(e >= 0.0) || !e.is_finite() {
                return Err(Diagnostic::new(Code::NegativeEpsilon, format!("epsilon must be finite and >= 0, got {e}")));
            }
        }
        if self.noise.values().is_empty() {
            return Err(Diagnostic::new(Code::EpsilonCount, "epsilon list is empty"));
        }
        if self.grid.resolution < 1 {
            return Err(Diagnostic::new(Code::Resolution, "grid resolution must be at least 1"));
        }
        if self.grid.samples_per_cell < 1 || self.grid.region_subsamples < 1 {
            return Err(Diagnostic::new(Code::Resolution, "samples_per_cell and region_subsamples must be at least 1"));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return Err(Diagnostic::new(Code::Solver, "solver tol must be positive and max_iters at least 1"));
        }
        if let Some(system) = &self.system {
            self.resolve_system(system)?;
        }
        if let Some(f) = &self.filtration {
            f.graph.validate().map_err(graph_diagnostic)?;
            filtration_order(&f.graph).map_err(graph_diagnostic)?;
            for id in f.strata.keys() {
                if !f.graph.nodes.iter().any(|n| n.id == *id) {
                    return Err(Diagnostic::new(Code::UnknownLabel, format!("stratum for unknown node {id}")));
                }
            }
        }
        self.ensemble().check_values()?;
        if self.mc.observables.is_empty() {
            return Err(Diagnostic::new(Code::Ensemble, "at least one observable is required"));
        }
        Ok(())
    }

    fn resolve_system(&self, spec: &SystemSpec) -> Result<(Option<BuiltinSystem>, MapSystem, RegionSpec), Diagnostic> {
        let unknown = |l: &str| Diagnostic::new(Code::UnknownLabel, format!("unknown system label '{l}'"));
        let builtin = match spec {
            SystemSpec::Label(l) => BuiltinSystem::from_label(l).ok_or_else(|| unknown(l))?,
            SystemSpec::Builtin { builtin, amplitude } => {
                let b = BuiltinSystem::from_label(builtin).ok_or_else(|| unknown(builtin))?;
                match (b, amplitude) {
                    (BuiltinSystem::SmoothPerturbed { .. }, Some(a)) => BuiltinSystem::SmoothPerturbed { amplitude: *a },
                    (_, Some(_)) => {
                        return Err(Diagnostic::new(Code::Invalid, format!("'{builtin}' takes no amplitude")));
                    }
                    (b, None) => b,
                }
            }
            SystemSpec::Custom { map, survivor } => {
                let map = MapSystem::new(map.label.clone(), map.pieces.clone()).map_err(|e| Diagnostic::new(Code::Invalid, e.to_string()))?;
                return Ok((None, map, survivor.clone()));
            }
        };
        builtin.validate().map_err(|e| Diagnostic::new(Code::Invalid, e.to_string()))?;
        Ok((Some(builtin), builtin.map(), builtin.survivor_region()))
    }

    pub fn resolve(&self) -> Result<Resolved, Diagnostic> {
        let spec = self
            .system
            .as_ref()
            .ok_or_else(|| Diagnostic::new(Code::Missing, "this command needs a 'system'"))?;
        let (builtin, map, survivor) = self.resolve_system(spec)?;
        let region = self.region.clone().unwrap_or(survivor);
        if region.is_empty() {
            return Err(Diagnostic::new(Code::Invalid, "conditioning region is empty"));
        }
        let mut weight = WeightField {
            log_weight: self.weight.log_weight.clone(),
            cutoff: None,
        };
        if let Some(c) = &self.weight.cutoff {
            let cutoff = Cutoff::new(c.support.clone(), c.plateau.clone(), &map.domain())
                .map_err(|e| Diagnostic::new(Code::Invalid, format!("cutoff: {e}")))?;
            weight = weight.with_cutoff(cutoff);
        }
        Ok(Resolved {
            label: map.label.clone(),
            builtin,
            map,
            region,
            weight,
        })
    }

    pub fn single_epsilon(&self) -> Result<f64, Diagnostic> {
        match self.noise.values().as_slice() {
            [e] => Ok(*e),
            v => Err(Diagnostic::new(
                Code::EpsilonCount,
                format!("this command needs a single epsilon, got {}", v.len()),
            )),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            seed: self.seed,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_steps: self.mc.n_steps,
            n_particles: self.mc.n_particles,
            resample_threshold: self.mc.resample_threshold,
            n_blocks: self.mc.n_blocks,
            burn_in: self.mc.burn_in,
            n_windows: self.mc.n_windows,
            histogram_lag: self.mc.histogram_lag,
            seed: self.seed,
        }
    }
}

trait CheckValues {
    fn check_values(&self) -> Result<(), Diagnostic>;
}

impl CheckValues for EnsembleConfig {
    fn check_values(&self) -> Result<(), Diagnostic> {
        let bad = |m: &str| Err(Diagnostic::new(Code::Ensemble, m.to_string()));
        if self.n_steps == 0 {
            return bad("mc.n_steps must be at least 1");
        }
        if self.n_particles < 2 {
            return bad("mc.n_particles must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return bad("mc.resample_threshold must lie in [0, 1]");
        }
        if self.n_blocks == 0 {
            return bad("mc.n_blocks must be at least 1");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("mc.burn_in must lie in [0, 1)");
        }
        Ok(())
    }
}

fn graph_diagnostic(e: Error) -> Diagnostic {
    match e {
        Error::PressureTie(..) => Diagnostic::new(Code::PressureTie, e.to_string()),
        Error::Cycle(ref w) => Diagnostic::new(
            Code::Cycle,
            format!("graph has a cycle: {}", w.iter().map(u32::to_string).collect::<Vec<_>>().join(" -> ")),
        ),
        Error::UnknownNode(_) => Diagnostic::new(Code::UnknownLabel, e.to_string()),
        e => Diagnostic::new(Code::Invalid, e.to_string()),
    }
}

/// Cells of `region` on the grid, used for strata.
pub fn region_cells(grid: &qemlab::GridPartition, region: &RegionSpec) -> Vec<usize> {
    (0..grid.n_cells()).filter(|&k| region.contains(grid.center(k))).collect()
}
