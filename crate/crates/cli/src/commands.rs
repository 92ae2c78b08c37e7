//! The five subcommands. Each writes its primary artifacts deterministically;
//! wall-clock times go to a separate `timings.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qemlab::equilibrium::{equilibrium_cylinder_measure, w1_1d, weak_star_discrepancy};
use qemlab::filtration::{filtration_order, stratified_qem_workflow};
use qemlab::io::{grid_vector_csv, read_qem_csv, triple_csv, write_matrix, MatrixFormat, TripleSummary};
use qemlab::ulam::{assemble_operator, AssemblyOptions};
use qemlab::{
    run_conditioned, AnnealedMatrix, Dim, GridPartition, MarkovModel, NoiseModel, SpectralTriple, Start,
    TestDictionary,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{region_cells, ExperimentConfig, MatrixExport, Resolved, TableFormat};
use crate::diag::{Code, Diagnostic};

type Outcome = Result<(), Diagnostic>;

struct Out {
    dir: PathBuf,
    format: TableFormat,
    timings: BTreeMap<String, f64>,
}

impl Out {
    fn new(cfg: &ExperimentConfig) -> Result<Self, Diagnostic> {
        let dir = PathBuf::from(&cfg.outputs.dir);
        fs::create_dir_all(&dir).map_err(|e| Diagnostic::io(&dir, e))?;
        let out = Self {
            dir,
            format: cfg.outputs.format,
            timings: BTreeMap::new(),
        };
        // the copy omits the output directory so re-runs elsewhere compare equal
        let mut copy = cfg.clone();
        copy.outputs.dir = ".".into();
        out.write("config.json", copy.to_json())?;
        Ok(out)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Outcome {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Diagnostic::io(&path, e))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Outcome {
        let mut text = serde_json::to_string_pretty(value).expect("output serialises");
        text.push('\n');
        self.write(name, text)
    }

    fn time(&mut self, key: impl Into<String>, since: Instant) {
        self.timings.insert(key.into(), since.elapsed().as_secs_f64());
    }

    fn finish(&self) -> Outcome {
        self.write_json("timings.json", &self.timings)
    }
}

fn build(cfg: &ExperimentConfig, sys: &Resolved, epsilon: f64) -> Result<(AnnealedMatrix, GridPartition), Diagnostic> {
    let grid = GridPartition::for_map(&sys.map, cfg.grid.resolution)?;
    let noise = NoiseModel::new(epsilon, sys.map.dim)?;
    let opts = AssemblyOptions {
        samples_per_cell: cfg.grid.samples_per_cell,
        region_subsamples: cfg.grid.region_subsamples,
        seed: cfg.seed,
    };
    let m = assemble_operator(&sys.map, &noise, &sys.weight, &sys.region, &grid, &opts)?;
    Ok((m, grid))
}

#[derive(Serialize)]
struct TripleColumns<'a> {
    cell_index: &'a [usize],
    right: &'a [f64],
    left: &'a [f64],
    qem: &'a [f64],
}

fn write_triple(out: &Out, stem: &str, t: &SpectralTriple, grid: &GridPartition) -> Outcome {
    match out.format {
        TableFormat::Csv => out.write(&format!("{stem}.csv"), triple_csv(t, grid)),
        TableFormat::Json => out.write_json(
            &format!("{stem}.json"),
            &TripleColumns {
                cell_index: &t.cells,
                right: &t.right,
                left: &t.left,
                qem: &t.qem,
            },
        ),
    }
}

pub fn spectrum(cfg: &ExperimentConfig) -> Outcome {
    let sys = cfg.resolve()?;
    let epsilon = cfg.single_epsilon()?;
    let mut out = Out::new(cfg)?;
    let t0 = Instant::now();
    let (m, grid) = build(cfg, &sys, epsilon)?;
    out.time("assemble", t0);
    if let Some(kind) = cfg.outputs.matrix {
        let (name, fmt) = match kind {
            MatrixExport::Text => ("matrix.txt", MatrixFormat::Text),
            MatrixExport::Binary => ("matrix.bin", MatrixFormat::Binary),
        };
        let mut buf = Vec::new();
        write_matrix(&m, fmt, &mut buf)?;
        out.write(name, buf)?;
    }
    let t0 = Instant::now();
    let t = SpectralTriple::solve(&m, &grid, &cfg.solver_options())?;
    out.time("solve", t0);
    out.write_json(
        "spectrum.json",
        &json!({
            "system": sys.label,
            "epsilon": epsilon,
            "resolution": cfg.grid.resolution,
            "n_cells": grid.n_cells(),
            "nnz": m.nnz(),
            "weight": sys.weight.label(),
            "region": sys.region.label,
            "seed": cfg.seed,
            "lambda": t.lambda,
            "summary": TripleSummary::from(&t),
        }),
    )?;
    write_triple(&out, "qem", &t, &grid)?;
    println!("lambda = {}", t.lambda);
    println!("gap ratio = {} (converged: {})", t.gap_ratio, t.gap_converged);
    out.finish()
}

pub fn mc(cfg: &ExperimentConfig) -> Outcome {
    let sys = cfg.resolve()?;
    let epsilon = cfg.single_epsilon()?;
    let mut out = Out::new(cfg)?;
    let noise = NoiseModel::new(epsilon, sys.map.dim)?;
    let start = cfg.mc.start.clone().unwrap_or(Start::Uniform {
        region: sys.region.clone(),
    });
    let grid = if cfg.mc.histogram {
        Some(GridPartition::for_map(&sys.map, cfg.grid.resolution)?)
    } else {
        None
    };
    let t0 = Instant::now();
    let stats = run_conditioned(
        &sys.map,
        &noise,
        &sys.weight,
        &sys.region,
        &start,
        &cfg.mc.observables,
        &cfg.ensemble(),
        grid.as_ref(),
    )?;
    out.time("simulate", t0);
    out.write("mc.json", format!("{}\n", stats.to_json()))?;
    out.write("mass.csv", stats.mass_csv())?;
    if let (Some(grid), Some(h)) = (&grid, &stats.occupation) {
        out.write("occupation.csv", grid_vector_csv(h, grid, "mass"))?;
    }
    for (k, o) in stats.observables.iter().enumerate() {
        println!("{}: {} +- {}", o.label(), stats.average(k), stats.error(k));
    }
    match stats.escape_rate_estimate {
        Some(r) => println!("escape rate = {r} (exp(-rate) = {})", (-r).exp()),
        None => println!("escape rate: not enough windows"),
    }
    out.finish()
}

type PointResult = Result<(SweepRow, SpectralTriple), Diagnostic>;

#[derive(Serialize)]
struct SweepRow {
    epsilon: f64,
    lambda: f64,
    gap_ratio: f64,
    discrepancy: Option<f64>,
    w1: Option<f64>,
    status: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn sweep(cfg: &ExperimentConfig) -> Outcome {
    let sys = cfg.resolve()?;
    let mut eps = cfg.noise.values();
    if eps.len() < 2 {
        return Err(Diagnostic::new(Code::EpsilonCount, "a sweep needs at least two epsilons"));
    }
    eps.sort_by(|a, b| b.total_cmp(a));
    let spec = cfg.sweep.clone().unwrap_or_default();
    let mut out = Out::new(cfg)?;
    let grid = GridPartition::for_map(&sys.map, cfg.grid.resolution)?;
    let reference = match sys.builtin.map(MarkovModel::for_builtin) {
        Some(Ok(model)) if sys.weight.cutoff.is_none() && sys.weight.label() == "zero" => {
            let t0 = Instant::now();
            let r = equilibrium_cylinder_measure(&model, spec.reference_depth)?.project(&grid)?;
            out.time("reference", t0);
            Some(r)
        }
        _ => None,
    };
    let dict = TestDictionary::new(spec.dictionary, sys.map.dim);

    let results: Vec<(PointResult, f64)> = eps
        .par_iter()
        .map(|&e| {
            let t0 = Instant::now();
            let r = (|| {
                let (m, g) = build(cfg, &sys, e)?;
                let t = SpectralTriple::solve(&m, &g, &cfg.solver_options())?;
                let q = t.qem_on_grid(g.n_cells());
                let (discrepancy, w1) = match &reference {
                    Some(r) => (
                        Some(weak_star_discrepancy(&q, r, &dict, &g)?),
                        if g.dim == Dim::One { Some(w1_1d(&q, r, &g)?) } else { None },
                    ),
                    None => (None, None),
                };
                let row = SweepRow {
                    epsilon: e,
                    lambda: t.lambda,
                    gap_ratio: t.gap_ratio,
                    discrepancy,
                    w1,
                    status: "ok".into(),
                };
                Ok::<_, Diagnostic>((row, t))
            })();
            (r, t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut rows = Vec::new();
    let mut first_error = None;
    for (i, ((r, secs), &e)) in results.into_iter().zip(&eps).enumerate() {
        out.timings.insert(format!("epsilon[{i}]={e}"), secs);
        match r {
            Ok((row, t)) => {
                write_triple(&out, &format!("qem_eps_{i}"), &t, &grid)?;
                rows.push(row);
            }
            Err(d) => {
                rows.push(SweepRow {
                    epsilon: e,
                    lambda: f64::NAN,
                    gap_ratio: f64::NAN,
                    discrepancy: None,
                    w1: None,
                    status: format!("failed {}", d.code.id()),
                });
                first_error.get_or_insert(d);
            }
        }
    }
    match out.format {
        TableFormat::Csv => {
            let mut s = String::from("epsilon,lambda,gap_ratio,discrepancy,w1,status\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.epsilon,
                    r.lambda,
                    r.gap_ratio,
                    opt(r.discrepancy),
                    opt(r.w1),
                    r.status
                ));
            }
            out.write("sweep.csv", s)?;
        }
        TableFormat::Json => {
            let rows: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        "epsilon": r.epsilon,
                        "lambda": if r.lambda.is_finite() { json!(r.lambda) } else { json!(null) },
                        "gap_ratio": if r.gap_ratio.is_finite() { json!(r.gap_ratio) } else { json!(null) },
                        "discrepancy": r.discrepancy,
                        "w1": r.w1,
                        "status": r.status,
                    })
                })
                .collect();
            out.write_json("sweep.json", &rows)?;
        }
    }
    let series = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
        rows.iter()
            .filter(|r| r.status == "ok")
            .filter_map(|r| f(r).map(|y| format!("{} {y}\n", r.epsilon)))
            .collect::<String>()
    };
    out.write("lambda_vs_epsilon.dat", series(&|r| Some(r.lambda)))?;
    if reference.is_some() {
        out.write("discrepancy_vs_epsilon.dat", series(&|r| r.discrepancy))?;
        if grid.dim == Dim::One {
            out.write("w1_vs_epsilon.dat", series(&|r| r.w1))?;
        }
    }
    out.finish()?;
    for r in &rows {
        println!(
            "epsilon = {}: lambda = {}, discrepancy = {}, {}",
            r.epsilon,
            r.lambda,
            opt(r.discrepancy),
            r.status
        );
    }
    match first_error {
        Some(d) => Err(Diagnostic::new(d.code, format!("sweep incomplete: {}", d.message))),
        None => Ok(()),
    }
}

pub fn filtration(cfg: &ExperimentConfig) -> Outcome {
    let spec = cfg
        .filtration
        .as_ref()
        .ok_or_else(|| Diagnostic::new(Code::Missing, "this command needs a 'filtration' section"))?;
    let order = filtration_order(&spec.graph)?;
    let mut out = Out::new(cfg)?;
    out.write("filtration.json", format!("{}\n", order.to_json()))?;
    out.write("sequence.txt", format!("{}\n", order.sequence_string()))?;
    println!("sequence: {}", order.sequence_string());
    println!("t = {}, indices = {:?}", order.t(), order.indices);
    if !spec.strata.is_empty() {
        let sys = cfg.resolve()?;
        let epsilon = cfg.single_epsilon()?;
        let t0 = Instant::now();
        let (m, grid) = build(cfg, &sys, epsilon)?;
        let mut strata = BTreeMap::new();
        for (id, region) in &spec.strata {
            strata.insert(order.rank(*id)?, region_cells(&grid, region));
        }
        let report = stratified_qem_workflow(&m, &grid, &order, &strata, &cfg.solver_options())?;
        out.time("stratified", t0);
        let node_of = |rank: usize| order.sequence[order.n() - rank];
        let strata_json: Vec<_> = report
            .strata
            .iter()
            .map(|s| json!({"node": node_of(s.rank), "rank": s.rank, "n_cells": s.n_cells, "lambda": s.lambda}))
            .collect();
        // tolerance of the consistency flag: a few solver tolerances
        let consistent = report.consistent(10.0 * cfg.solver.tol);
        out.write_json(
            "stratified.json",
            &json!({
                "global_lambda": report.global.lambda,
                "max_restricted_lambda": report.max_restricted_lambda,
                "discrepancy": report.discrepancy,
                "consistent": consistent,
                "strata": strata_json,
            }),
        )?;
        write_triple(&out, "qem_global", &report.global, &grid)?;
        for s in &report.strata {
            if let Some(t) = &s.triple {
                write_triple(&out, &format!("qem_node_{}", node_of(s.rank)), t, &grid)?;
            }
            println!("node {} (rank {}): lambda = {}", node_of(s.rank), s.rank, s.lambda);
        }
        println!(
            "global lambda = {}, max restricted = {}, consistent: {consistent}",
            report.global.lambda, report.max_restricted_lambda
        );
    }
    out.finish()
}

pub fn compare(cfg: &ExperimentConfig, a: &Path, b: &Path, dictionary: usize) -> Outcome {
    let sys = cfg.resolve()?;
    let grid = GridPartition::for_map(&sys.map, cfg.grid.resolution)?;
    let read = |p: &Path| -> Result<Vec<f64>, Diagnostic> {
        let text = fs::read_to_string(p).map_err(|e| Diagnostic::io(p, e))?;
        Ok(read_qem_csv(&text, grid.n_cells())?)
    };
    let (mu, nu) = (read(a)?, read(b)?);
    let dict = TestDictionary::new(dictionary, sys.map.dim);
    let d = weak_star_discrepancy(&mu, &nu, &dict, &grid)?;
    let w1 = if grid.dim == Dim::One { Some(w1_1d(&mu, &nu, &grid)?) } else { None };
    match cfg.outputs.format {
        TableFormat::Csv => {
            println!("weak_star_discrepancy,w1");
            println!("{d},{}", opt(w1));
        }
        TableFormat::Json => {
            println!("{}", json!({"weak_star_discrepancy": d, "w1": w1, "dictionary": dictionary}));
        }
    }
    Ok(())
}
