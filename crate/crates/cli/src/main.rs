use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fairproj::boosting::{run, BoostConfig, Mode};
use fairproj::dataset::{SchemaConfig, SyntheticSpec};
use fairproj::distributions::Surrogate;
use fairproj::harness::{
    audit_run_log, emit_curves, load_split, parse_seeds, projection_oracle_suite, read_run_log,
    run_plan, write_json, DataSource, ExperimentPlan, Stat, ROUNDS_CONVENTION,
};
use fairproj::metrics::evaluate;

#[derive(Parser)]
#[command(name = "fairproj", version, about = "Fair boosting by KL projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its per-round curves.
    Train(TrainArgs),
    /// Run a (mode, epsilon, seed) sweep and write the result tables.
    Sweep(SweepArgs),
    /// Compare the dual projection solver with grid search on small instances.
    ProjectCheck(ProjectCheckArgs),
    /// Re-check a stored runlog.json: edge transfer, loss recursion, bounds.
    Verify {
        runlog: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV file; needs --schema.
    #[arg(long, requires = "schema", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// TOML schema describing the label and protected columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Synthetic data, optionally `n=2000,imbalance=0.5,gap=0.6,noise=1.0`.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    synthetic: Option<String>,
    #[arg(long, default_value = "eopp")]
    surrogate: Surrogate,
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl DataArgs {
    fn source(&self) -> anyhow::Result<DataSource> {
        match (&self.data, &self.synthetic) {
            (Some(path), _) => {
                let schema_path = self.schema.as_ref().context("--data needs --schema")?;
                Ok(DataSource::Csv {
                    path: path.clone(),
                    schema: SchemaConfig::from_toml_file(schema_path)?,
                })
            }
            (None, Some(spec)) => Ok(DataSource::Synthetic(parse_synthetic(spec)?)),
            (None, None) => bail!("give either --data/--schema or --synthetic"),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "fairproj")]
    mode: Mode,
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
    /// Seed for data generation and the split.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Modes to run; repeatable.
    #[arg(long = "mode", default_values = ["adaboost", "fairproj"])]
    modes: Vec<Mode>,
    /// Fairness slacks for fairproj; repeatable.
    #[arg(long = "epsilon", default_values_t = [0.4, 0.25, 0.15])]
    epsilons: Vec<f64>,
    /// Seed list such as `42..51` (inclusive) or `1,2,5`.
    #[arg(long, default_value = "42..51")]
    seeds: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ProjectCheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1000)]
    resolution: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse_synthetic(s: &str) -> anyhow::Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    for kv in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = kv.split_once('=').with_context(|| format!("expected key=value, got `{kv}`"))?;
        match k.trim() {
            "n" => spec.n = v.trim().parse()?,
            "imbalance" => spec.group_imbalance = v.trim().parse()?,
            "gap" => spec.base_rate_gap = v.trim().parse()?,
            "noise" => spec.noise = v.trim().parse()?,
            other => bail!("unknown synthetic key `{other}` (n, imbalance, gap, noise)"),
        }
    }
    Ok(spec)
}

fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let (train, test) = load_split(&args.data.source()?, args.data.test_fraction, args.seed)?;
    let cfg = BoostConfig::new(args.mode, args.data.rounds, args.epsilon, args.data.surrogate);
    let (ensemble, log) = run(&train, &cfg)?;
    let eval = evaluate(&test, &ensemble)?;

    let out = &args.data.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if log.rounds.is_empty() {
        log::warn!("no round added a term; curves.csv not written");
    } else {
        emit_curves(&log, &out.join("curves.csv"))?;
    }
    write_json(&log, &out.join("runlog.json"))?;

    let summary = serde_json::json!({
        "mode": args.mode.to_string(),
        "epsilon": args.mode.is_fair().then_some(args.epsilon),
        "seed": args.seed,
        "test": eval,
        "rounds": log.rounds_used(),
        "termination": ensemble.termination.to_string(),
        "mean_delta": log.mean_delta(),
        "bound": log.bound.status,
        "rounds_convention": ROUNDS_CONVENTION,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let mut plan = ExperimentPlan::new(args.data.source()?);
    plan.modes = args.modes;
    plan.epsilons = args.epsilons;
    plan.surrogate = args.data.surrogate;
    plan.rounds = args.data.rounds;
    plan.seeds = parse_seeds(&args.seeds)?;
    plan.test_fraction = args.data.test_fraction;
    plan.out_dir = Some(args.data.out.clone());
    plan.jobs = args.jobs;

    let result = run_plan(&plan)?;
    println!("mode        epsilon  accuracy         eopp gap         rounds   mean delta  failed");
    for a in &result.aggregates {
        let pm = |s: Option<Stat>| match s {
            Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
            None => "n/a".to_string(),
        };
        println!(
            "{:<11} {:<8} {:<16} {:<16} {:<8} {:<11} {}/{}",
            a.mode.to_string(),
            a.epsilon.map_or("-".to_string(), |e| e.to_string()),
            pm(a.accuracy),
            pm(a.eopp_gap),
            a.rounds.map_or("n/a".into(), |s| format!("{:.1}", s.mean)),
            a.mean_delta.map_or("n/a".into(), |s| format!("{:.4}", s.mean)),
            a.failed,
            a.cells,
        );
    }
    println!("wrote {}", args.data.out.display());
    Ok(ExitCode::from(result.exit_code() as u8))
}

fn project_check(args: ProjectCheckArgs) -> anyhow::Result<ExitCode> {
    let r = projection_oracle_suite(args.instances, args.resolution, args.tolerance, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn verify(path: PathBuf) -> anyhow::Result<ExitCode> {
    let log = read_run_log(&path)?;
    let report = audit_run_log(&log);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::ProjectCheck(a) => project_check(a),
        Command::Verify { runlog } => verify(runlog),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
