//! Experiment sweeps over (mode, ε, seed) cells, aggregation, and CSV/JSON
//! emission.
//!
//! Cells are independent and run on a bounded rayon pool; each cell is
//! sequential. Results are collected in cell-key order, so the output files
//! do not depend on scheduling. A failing cell is recorded and the sweep
//! carries on.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{
    check_loss_bound, run, BoostConfig, BoundStatus, Mode, RunLog, LossBoundReport, EDGE_TRANSFER_TOLERANCE,
    MONOTONE_TOLERANCE, RECURSION_TOLERANCE,
};
use crate::dataset::{load_csv, split_indices, Dataset, SchemaConfig, SyntheticSpec};
use crate::distributions::{ConstraintFeatures, SimplexWeights, Surrogate};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::projection::{brute_force_project, project, ProjectionConfig, FEASIBILITY_TOLERANCE};

/// Placeholder slack handed to the baselines, which never project.
const BASELINE_EPSILON: f64 = 1.0;

/// How the rounds column counts a run that stopped early.
pub const ROUNDS_CONVENTION: &str =
    "rounds = number of terms appended to the ensemble; a round that stops on eps_q >= 0.5 adds no term and is not counted";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv { path: PathBuf, schema: SchemaConfig },
    /// Regenerated from each seed, so seeds vary both data and split.
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub source: DataSource,
    pub modes: Vec<Mode>,
    /// Fairness slacks; only `fairproj` cells fan out over this grid.
    pub epsilons: Vec<f64>,
    pub surrogate: Surrogate,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    /// Where to write tables; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
    /// Dual solver settings; `epsilon` is replaced per cell.
    pub solver: ProjectionConfig,
}

impl ExperimentPlan {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            modes: vec![Mode::AdaBoost, Mode::FairProj],
            epsilons: vec![0.25],
            surrogate: Surrogate::Eopp,
            rounds: 100,
            seeds: (42..=51).collect(),
            test_fraction: 0.3,
            out_dir: None,
            jobs: 1,
            solver: ProjectionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Argument("plan has no modes".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("plan has no seeds".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Argument("plan has an empty epsilon grid".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Argument(format!("epsilon must be finite and > 0, got {e}")));
        }
        if self.rounds == 0 {
            return Err(Error::Argument("rounds must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Argument("jobs must be >= 1".into()));
        }
        Ok(())
    }

    /// Every cell, in the order results are reported.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        let mut keys = Vec::new();
        for mode in modes {
            let eps: Vec<Option<f64>> = if mode.is_fair() {
                self.epsilons.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for epsilon in eps {
                for &seed in &self.seeds {
                    keys.push(CellKey { mode, epsilon, seed });
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub mode: Mode,
    /// `None` for the baselines.
    pub epsilon: Option<f64>,
    pub seed: u64,
}

impl CellKey {
    /// Directory-safe identifier, e.g. `fairproj-eps0.15-seed42`.
    pub fn id(&self) -> String {
        match self.epsilon {
            Some(e) => format!("{}-eps{}-seed{}", self.mode, e, self.seed),
            None => format!("{}-seed{}", self.mode, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub accuracy: f64,
    pub eopp_gap: Option<f64>,
    pub dp_gap: Option<f64>,
    pub train_accuracy: f64,
    pub rounds_used: usize,
    pub mean_delta: f64,
    pub termination: String,
    pub bound: BoundStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: std::result::Result<CellMetrics, String>,
    #[serde(skip)]
    pub log: Option<RunLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation; 0 for a single sample.
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub epsilon: Option<f64>,
    pub cells: usize,
    pub failed: usize,
    pub accuracy: Option<Stat>,
    pub eopp_gap: Option<Stat>,
    pub dp_gap: Option<Stat>,
    pub rounds: Option<Stat>,
    pub mean_delta: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub surrogate: Surrogate,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    /// 0 when every cell ran, 2 when some failed, 1 when all failed.
    pub fn exit_code(&self) -> i32 {
        match self.failed() {
            0 => 0,
            f if f == self.cells.len() => 1,
            _ => 2,
        }
    }

    pub fn aggregate(&self, mode: Mode, epsilon: Option<f64>) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.mode == mode && a.epsilon == epsilon)
    }
}

/// Group cells by (mode, ε) in first-seen order and summarize each group.
pub fn aggregate(cells: &[CellResult]) -> Vec<Aggregate> {
    let mut groups: Vec<(Mode, Option<f64>, Vec<&CellResult>)> = Vec::new();
    for c in cells {
        match groups
            .iter_mut()
            .find(|(m, e, _)| *m == c.key.mode && *e == c.key.epsilon)
        {
            Some(g) => g.2.push(c),
            None => groups.push((c.key.mode, c.key.epsilon, vec![c])),
        }
    }
    groups
        .into_iter()
        .map(|(mode, epsilon, members)| {
            let ok: Vec<&CellMetrics> = members.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let col = |f: &dyn Fn(&CellMetrics) -> Option<f64>| Stat::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            Aggregate {
                mode,
                epsilon,
                cells: members.len(),
                failed: members.len() - ok.len(),
                accuracy: col(&|m| Some(m.accuracy)),
                eopp_gap: col(&|m| m.eopp_gap),
                dp_gap: col(&|m| m.dp_gap),
                rounds: col(&|m| Some(m.rounds_used as f64)),
                mean_delta: col(&|m| Some(m.mean_delta)),
            }
        })
        .collect()
}

/// A seed's train/test split, or why it could not be built.
type SplitOutcome = std::result::Result<(Dataset, Dataset), String>;

/// Load (or generate) the data for one seed and split it into train/test.
pub fn load_split(source: &DataSource, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let full = match source {
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
        DataSource::Synthetic(spec) => spec.generate(seed)?,
    };
    split(&full, test_fraction, seed)
}

fn split(full: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(full.len(), test_fraction, seed)?;
    Ok((full.subset(&train)?, full.subset(&test)?))
}

fn prepare_data(plan: &ExperimentPlan) -> Result<BTreeMap<u64, SplitOutcome>> {
    let csv = match &plan.source {
        DataSource::Csv { path, schema } => Some(load_csv(path, schema)?),
        DataSource::Synthetic(_) => None,
    };
    let mut out = BTreeMap::new();
    for &seed in &plan.seeds {
        let cell = match (&plan.source, &csv) {
            (_, Some(d)) => split(d, plan.test_fraction, seed),
            (source, None) => load_split(source, plan.test_fraction, seed),
        };
        out.insert(seed, cell.map_err(|e| e.to_string()));
    }
    Ok(out)
}

fn run_cell(plan: &ExperimentPlan, key: CellKey, data: &SplitOutcome) -> CellResult {
    let go = || -> std::result::Result<(CellMetrics, RunLog), String> {
        let (train, test) = data.as_ref().map_err(Clone::clone)?;
        let mut cfg = BoostConfig::new(
            key.mode,
            plan.rounds,
            key.epsilon.unwrap_or(BASELINE_EPSILON),
            plan.surrogate,
        );
        cfg.projection = ProjectionConfig {
            epsilon: cfg.epsilon(),
            ..plan.solver
        };
        let (ensemble, log) = run(train, &cfg).map_err(|e| e.to_string())?;
        let eval = evaluate(test, &ensemble).map_err(|e| e.to_string())?;
        let train_eval = evaluate(train, &ensemble).map_err(|e| e.to_string())?;
        let metrics = CellMetrics {
            accuracy: eval.accuracy,
            eopp_gap: eval.eopp_gap,
            dp_gap: eval.dp_gap,
            train_accuracy: train_eval.accuracy,
            rounds_used: log.rounds_used(),
            mean_delta: log.mean_delta(),
            termination: ensemble.termination.to_string(),
            bound: log.bound.status,
        };
        Ok((metrics, log))
    };
    match go() {
        Ok((m, log)) => CellResult {
            key,
            outcome: Ok(m),
            log: Some(log),
        },
        Err(e) => {
            warn!("cell {} failed: {e}", key.id());
            CellResult {
                key,
                outcome: Err(e),
                log: None,
            }
        }
    }
}

/// Run every cell of the plan and, if `out_dir` is set, write the tables.
pub fn run_plan(plan: &ExperimentPlan) -> Result<SweepResult> {
    plan.validate()?;
    let data = prepare_data(plan)?;
    let keys = plan.cells();
    info!("running {} cells on {} worker(s)", keys.len(), plan.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        keys.par_iter()
            .map(|k| run_cell(plan, *k, &data[&k.seed]))
            .collect()
    });
    let result = SweepResult {
        surrogate: plan.surrogate,
        aggregates: aggregate(&cells),
        cells,
    };
    if let Some(out) = &plan.out_dir {
        write_outputs(plan, &result, out)?;
    }
    Ok(result)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_fields(s: Option<Stat>) -> [String; 2] {
    [fmt_opt(s.map(|s| s.mean)), fmt_opt(s.map(|s| s.std))]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Aggregate table, one row per (mode, ε).
pub fn emit_results(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "mode",
        "epsilon",
        "cells",
        "failed",
        "accuracy_mean",
        "accuracy_std",
        "eopp_gap_mean",
        "eopp_gap_std",
        "dp_gap_mean",
        "dp_gap_std",
        "rounds_mean",
        "rounds_std",
        "mean_delta_mean",
        "mean_delta_std",
    ])?;
    for a in &result.aggregates {
        let mut row = vec![
            a.mode.to_string(),
            fmt_opt(a.epsilon),
            a.cells.to_string(),
            a.failed.to_string(),
        ];
        for s in [a.accuracy, a.eopp_gap, a.dp_gap, a.rounds, a.mean_delta] {
            row.extend(stat_fields(s));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-cell table, one row per (mode, ε, seed).
pub fn emit_cells(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "cell_id",
        "mode",
        "epsilon",
        "seed",
        "status",
        "accuracy",
        "eopp_gap",
        "dp_gap",
        "train_accuracy",
        "rounds",
        "mean_delta",
        "termination",
        "bound",
        "error",
    ])?;
    for c in &result.cells {
        let head = [c.key.id(), c.key.mode.to_string(), fmt_opt(c.key.epsilon), c.key.seed.to_string()];
        let tail: Vec<String> = match &c.outcome {
            Ok(m) => vec![
                "ok".into(),
                m.accuracy.to_string(),
                fmt_opt(m.eopp_gap),
                fmt_opt(m.dp_gap),
                m.train_accuracy.to_string(),
                m.rounds_used.to_string(),
                m.mean_delta.to_string(),
                m.termination.clone(),
                serde_json::to_value(m.bound)?.as_str().unwrap_or_default().to_string(),
                String::new(),
            ],
            Err(e) => {
                let mut v = vec!["failed".to_string()];
                v.extend(std::iter::repeat_n(String::new(), 8));
                v.push(e.clone());
                v
            }
        };
        w.write_record(head.iter().chain(&tail))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per appended round with every per-round diagnostic.
pub fn emit_curves(log: &RunLog, path: &Path) -> Result<()> {
    if log.rounds.is_empty() {
        return Err(Error::Argument(format!(
            "no rounds to write to {}",
            path.display()
        )));
    }
    let mut w = csv_writer(path)?;
    for r in &log.rounds {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<crate::boosting::RoundDiagnostics>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(f)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Accuracy/gap trade-off: baseline rows, then fairproj rows by ε
/// descending. The gap is EOpp for the eopp/eodds surrogates, DP for dp.
/// `gap_monotone` is set on fairproj rows: whether the mean gap never grows
/// as ε shrinks.
pub fn emit_pareto(result: &SweepResult, path: &Path) -> Result<()> {
    let use_dp = result.surrogate == Surrogate::Dp;
    let gap = |a: &Aggregate| if use_dp { a.dp_gap } else { a.eopp_gap };
    let mut baselines: Vec<&Aggregate> = result.aggregates.iter().filter(|a| !a.mode.is_fair()).collect();
    baselines.sort_by_key(|a| a.mode);
    let mut fair: Vec<&Aggregate> = result.aggregates.iter().filter(|a| a.mode.is_fair()).collect();
    fair.sort_by(|a, b| b.epsilon.partial_cmp(&a.epsilon).expect("finite epsilons"));
    if fair.is_empty() {
        warn!("no fairproj cells; {} lists baselines only", path.display());
    }
    let means: Vec<Option<f64>> = fair.iter().map(|a| gap(a).map(|s| s.mean)).collect();
    let monotone = means.iter().all(Option::is_some)
        && means.windows(2).all(|p| p[1].unwrap() <= p[0].unwrap());

    let mut w = csv_writer(path)?;
    w.write_record([
        "mode",
        "epsilon",
        "gap_metric",
        "accuracy_mean",
        "accuracy_std",
        "gap_mean",
        "gap_std",
        "gap_monotone",
    ])?;
    let metric = if use_dp { "dp" } else { "eopp" };
    for a in baselines.iter().chain(&fair) {
        let mut row = vec![a.mode.to_string(), fmt_opt(a.epsilon), metric.to_string()];
        row.extend(stat_fields(a.accuracy));
        row.extend(stat_fields(gap(a)));
        row.push(if a.mode.is_fair() { monotone.to_string() } else { String::new() });
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    crate_name: &'static str,
    version: &'static str,
    plan: &'a ExperimentPlan,
    cells: usize,
    failed: usize,
    exit_code: i32,
    rounds_convention: &'static str,
    std_convention: &'static str,
    rng: &'static str,
}

fn write_outputs(plan: &ExperimentPlan, result: &SweepResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    emit_results(result, &out.join("results.csv"))?;
    emit_cells(result, &out.join("cells.csv"))?;
    emit_pareto(result, &out.join("pareto.csv"))?;
    for c in &result.cells {
        let Some(log) = &c.log else { continue };
        let dir = out.join("runs").join(c.key.id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if log.rounds.is_empty() {
            info!("cell {} appended no rounds; skipping curves", c.key.id());
        } else {
            emit_curves(log, &dir.join("curves.csv"))?;
        }
        write_json(log, &dir.join("runlog.json"))?;
    }
    let manifest = Manifest {
        crate_name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        plan,
        cells: result.cells.len(),
        failed: result.failed(),
        exit_code: result.exit_code(),
        rounds_convention: ROUNDS_CONVENTION,
        std_convention: "population standard deviation over successful cells",
        rng: "ChaCha8 seeded per cell seed",
    };
    write_json(&manifest, &out.join("manifest.json"))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Parse `"42..51"` (inclusive), `"42"`, or a comma list of either.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Argument(format!("bad seed list `{s}`"));
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Re-check a stored run: edge transfer, the loss recursion, monotone loss,
/// and both loss bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rounds: usize,
    pub edge_transfer_failures: Vec<usize>,
    pub recursion_failures: Vec<usize>,
    pub monotone: bool,
    pub bound: LossBoundReport,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.edge_transfer_failures.is_empty()
            && self.recursion_failures.is_empty()
            && self.monotone
            && self.bound.status != BoundStatus::Violated
    }
}

pub fn audit_run_log(log: &RunLog) -> AuditReport {
    let mut edge = Vec::new();
    let mut rec = Vec::new();
    let mut monotone = true;
    let mut prev = log.initial_log_loss;
    for r in &log.rounds {
        if r.gamma_q < r.gamma_w - r.delta - EDGE_TRANSFER_TOLERANCE {
            edge.push(r.round);
        }
        let closed = 2.0 * (r.eps_q * (1.0 - r.eps_q)).sqrt();
        let predicted = prev + if r.clamped { r.loss_factor.ln() } else { closed.ln() };
        if ((r.log_exp_loss - predicted).exp() - 1.0).abs() > RECURSION_TOLERANCE {
            rec.push(r.round);
        }
        monotone &= r.log_exp_loss <= prev + MONOTONE_TOLERANCE;
        prev = r.log_exp_loss;
    }
    AuditReport {
        rounds: log.rounds.len(),
        edge_transfer_failures: edge,
        recursion_failures: rec,
        monotone,
        bound: check_loss_bound(log),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_kl_error: f64,
    pub max_violation: f64,
    pub failures: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare the dual solver with grid search on small random instances
/// (n in 2..=4, one constraint row with entries in {-1, 0, 1}).
pub fn projection_oracle_suite(instances: usize, resolution: usize, kl_tolerance: f64, seed: u64) -> Result<OracleReport> {
    const EPSILONS: [f64; 4] = [0.0, 0.05, 0.2, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        instances,
        max_kl_error: 0.0,
        max_violation: 0.0,
        failures: Vec::new(),
    };
    for i in 0..instances {
        let n = rng.random_range(2..=4);
        let q = SimplexWeights::normalize((0..n).map(|_| rng.random_range(0.05..1.0)).collect())?;
        let mut row: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-1i8..=1))).collect();
        // ε = 0 needs a row with both signs, otherwise C_ε can be empty
        if !(row.iter().any(|v| *v > 0.0) && row.iter().any(|v| *v < 0.0)) {
            row[0] = 1.0;
            row[1] = -1.0;
        }
        let g = ConstraintFeatures::new(vec![row], vec!["g".into()])?;
        let epsilon = EPSILONS[i % EPSILONS.len()];
        let cfg = ProjectionConfig::with_epsilon(epsilon);
        let solved = project(&q, &g, &cfg, None)?;
        let (_, oracle_kl) = brute_force_project(&q, &g, epsilon, resolution)?;
        let err = (solved.kl_direct - oracle_kl).abs();
        let violation = (solved.max_moment - epsilon).max(0.0);
        report.max_kl_error = report.max_kl_error.max(err);
        report.max_violation = report.max_violation.max(violation);
        if err > kl_tolerance {
            report.failures.push(format!(
                "instance {i} (n={n}, eps={epsilon}): solver KL {} vs oracle {oracle_kl}",
                solved.kl_direct
            ));
        }
        if violation > FEASIBILITY_TOLERANCE {
            report.failures.push(format!("instance {i}: violation {violation}"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(jobs: usize) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(DataSource::Synthetic(SyntheticSpec {
            n: 300,
            ..SyntheticSpec::default()
        }));
        p.modes = vec![Mode::FairProj, Mode::AdaBoost, Mode::Reweighing];
        p.epsilons = vec![0.3, 0.1];
        p.rounds = 15;
        p.seeds = vec![1, 2, 3];
        p.jobs = jobs;
        p
    }

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("42..51").unwrap(), (42..=51).collect::<Vec<_>>());
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1,3..4, 9").unwrap(), vec![1, 3, 4, 9]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn plan_validation() {
        let mut p = small_plan(1);
        assert!(p.validate().is_ok());
        p.seeds.clear();
        assert!(p.validate().is_err());
        let mut p = small_plan(1);
        p.rounds = 0;
        assert!(p.validate().is_err());
        let mut p = small_plan(1);
        p.epsilons = vec![0.0];
        assert!(p.validate().is_err());
        let mut p = small_plan(1);
        p.modes.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn cell_layout() {
        let keys = small_plan(1).cells();
        // fairproj: 2 eps x 3 seeds; two baselines x 3 seeds
        assert_eq!(keys.len(), 12);
        assert_eq!(keys[0].id(), "fairproj-eps0.3-seed1");
        assert!(keys.iter().filter(|k| !k.mode.is_fair()).all(|k| k.epsilon.is_none()));
    }

    #[test]
    fn single_sample_std_is_zero() {
        let s = Stat::of(&[0.7]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (0.7, 0.0, 1));
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn sequential_and_concurrent_agree() {
        let a = run_plan(&small_plan(1)).unwrap();
        let b = run_plan(&small_plan(4)).unwrap();
        assert_eq!(a.exit_code(), 0);
        assert_eq!(a.cells.len(), b.cells.len());
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.key, y.key);
            assert_eq!(x.outcome, y.outcome);
        }
        assert_eq!(a.aggregates, b.aggregates);
    }

    #[test]
    fn files_and_aggregate_consistency() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(2);
        plan.out_dir = Some(dir.path().to_path_buf());
        let result = run_plan(&plan).unwrap();
        for f in ["results.csv", "cells.csv", "pareto.csv", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }

        // recompute accuracy mean/std per group from cells.csv
        let mut rdr = csv::Reader::from_path(dir.path().join("cells.csv")).unwrap();
        let mut by_group: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            by_group
                .entry((rec[1].to_string(), rec[2].to_string()))
                .or_default()
                .push(rec[5].parse().unwrap());
        }
        let mut rdr = csv::Reader::from_path(dir.path().join("results.csv")).unwrap();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let s = Stat::of(&by_group[&(rec[0].to_string(), rec[1].to_string())]).unwrap();
            let mean: f64 = rec[4].parse().unwrap();
            let std: f64 = rec[5].parse().unwrap();
            assert!((s.mean - mean).abs() <= 1e-12 && (s.std - std).abs() <= 1e-12);
            rows += 1;
        }
        assert_eq!(rows, result.aggregates.len());

        // pareto: baselines first, then eps descending
        let mut rdr = csv::Reader::from_path(dir.path().join("pareto.csv")).unwrap();
        let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 4);
        assert_eq!(&recs[0][0], "adaboost");
        assert_eq!(&recs[1][0], "reweighing");
        assert_eq!((&recs[2][1], &recs[3][1]), ("0.3", "0.1"));

        // curves round trip and satisfy edge transfer row-wise
        for c in &result.cells {
            let path = dir.path().join("runs").join(c.key.id()).join("curves.csv");
            let log = c.log.as_ref().unwrap();
            if log.rounds.is_empty() {
                continue;
            }
            let back = read_curves(&path).unwrap();
            assert_eq!(back.len(), log.rounds.len());
            for r in &back {
                assert!(r.gamma_q >= r.gamma_w - r.delta - 1e-9);
                if !c.key.mode.is_fair() {
                    assert_eq!(r.delta, 0.0);
                }
            }
            let stored = read_run_log(&path.with_file_name("runlog.json")).unwrap();
            assert!(audit_run_log(&stored).passed());
        }
    }

    #[test]
    fn curves_header_and_rows() {
        let d = SyntheticSpec { n: 200, ..SyntheticSpec::default() }.generate(3).unwrap();
        let cfg = BoostConfig::new(Mode::FairProj, 10, 0.4, Surrogate::Eopp);
        let (_, log) = run(&d, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        emit_curves(&log, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "round,gamma_w,gamma_q,delta,eps_q,alpha,exp_loss,log_exp_loss,loss_factor,kl,max_violation,dual_iters,dual_converged,clamped"
        );
        assert_eq!(text.lines().count(), log.rounds.len() + 1);
    }

    #[test]
    fn failures_are_isolated() {
        let mut plan = small_plan(2);
        plan.modes = vec![Mode::Reweighing];
        // no group 1 at all: reweighing has an empty cell on every seed
        plan.source = DataSource::Synthetic(SyntheticSpec {
            n: 200,
            group_imbalance: 0.0,
            ..SyntheticSpec::default()
        });
        let r = run_plan(&plan).unwrap();
        assert_eq!(r.exit_code(), 1);
        plan.modes = vec![Mode::Reweighing, Mode::AdaBoost];
        let r = run_plan(&plan).unwrap();
        assert_eq!(r.exit_code(), 2);
        let agg = r.aggregate(Mode::Reweighing, None).unwrap();
        assert_eq!((agg.cells, agg.failed), (3, 3));
        assert!(agg.accuracy.is_none());
    }

    #[test]
    fn pareto_without_fair_cells() {
        let mut plan = small_plan(1);
        plan.modes = vec![Mode::AdaBoost];
        let r = run_plan(&plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pareto.csv");
        emit_pareto(&r, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn oracle_suite_small() {
        let r = projection_oracle_suite(8, 400, 1e-2, 5).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }
}
