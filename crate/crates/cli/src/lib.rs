//! `cepflow` command-line driver: single runs, strategy/penalty sweeps and
//! the exact solver's scaling benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cepflow_core::cost::{CostParams, StatsWindow, StepStats, WorkerProfile};
use cepflow_core::flow::build::layered;
use cepflow_core::flow::FlowGraph;
use cepflow_core::metrics::{compare_strategies, Comparison, MetricsReport};
use cepflow_core::scenario::{parse_scenario, render_scenario};
use cepflow_core::sim::{run_simulation, write_event_log, ScenarioConfig, SimError};
use cepflow_core::solvers::{solve_exact, SolveError, SolveRequest, SolveStatus, Strategy};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Config(_) | SimError::Flow(_) => EXIT_CONFIG,
            SimError::Solve {
                source: SolveError::Infeasible(_),
                ..
            } => EXIT_INFEASIBLE,
            _ => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::internal(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "cepflow", version, about = "Simulate and compare CEP step placement strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its scenario, event log and report.
    Run(RunArgs),
    /// Run strategies x seeds x penalties x cpu factors and tabulate them.
    Sweep(SweepArgs),
    /// Time the exact solver on growing fully connected layered flows.
    Scale(ScaleArgs),
}

/// Scenario overrides shared by `run` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Evaluation period in ms.
    #[arg(long)]
    pub eval_period: Option<f64>,
    /// Virtual run length in ms.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub time_limit_ms: Option<u64>,
}

impl Overrides {
    fn load(&self) -> Result<ScenarioConfig, CliError> {
        let text = fs::read_to_string(&self.scenario)
            .map_err(|e| CliError::config(format!("{}: {e}", self.scenario.display())))?;
        let mut cfg =
            parse_scenario(&text).map_err(|e| CliError::config(format!("{}: {e}", self.scenario.display())))?;
        if let Some(v) = self.eval_period {
            cfg.eval_period_ms = v;
        }
        if let Some(v) = self.duration {
            cfg.run_duration_ms = v;
        }
        if let Some(v) = self.time_limit_ms {
            cfg.params.solver_time_limit_ms = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Device-change penalty (CP only).
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Multiplier applied to every worker's cpu_factor.
    #[arg(long)]
    pub cpu_factor: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long = "strategy", value_delimiter = ',', default_values_t = Strategy::ALL.to_vec())]
    pub strategies: Vec<Strategy>,
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 25)]
    pub seeds: u64,
    #[arg(long = "penalty", value_delimiter = ',', default_values_t = vec![1.0, 1.25, 1.5, 1.75, 2.0])]
    pub penalties: Vec<f64>,
    #[arg(long = "cpu-factor", value_delimiter = ',', default_values_t = vec![1.0, 0.5])]
    pub cpu_factors: Vec<f64>,
    /// CP penalty used for the cross-strategy tables.
    #[arg(long, default_value_t = 1.25)]
    pub reference_penalty: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also keep each run's event log.
    #[arg(long)]
    pub write_logs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScaleArgs {
    #[arg(long, default_value_t = 25)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 25)]
    pub max_workers: usize,
    #[arg(long, default_value_t = 60_000)]
    pub time_limit_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|r| {
            println!(
                "{} (alpha {}, beta {}): {:.2} sink executions/min",
                r.label,
                r.alpha.unwrap_or(f64::NAN),
                r.beta.unwrap_or(f64::NAN),
                r.last_event_throughput
            )
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|c| println!("{} configurations compared", c.rows.len())),
        Command::Scale(a) => cmd_scale(a).map(|rows| println!("{} instance sizes timed", rows.len())),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| CliError::internal(e.to_string()))
}

/// Writes `scenario.toml`, `report.json` and optionally `events.jsonl`, plus
/// the solver wall times in `timings.json`.
fn write_run(dir: &Path, cfg: &ScenarioConfig, with_log: bool) -> Result<MetricsReport, CliError> {
    let out = run_simulation(cfg)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let toml = render_scenario(cfg).map_err(|e| CliError::config(e.to_string()))?;
    let path = dir.join("scenario.toml");
    fs::write(&path, toml).map_err(io_err(&path))?;
    if with_log {
        let path = dir.join("events.jsonl");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_event_log(&out.log, BufWriter::new(file)).map_err(io_err(&path))?;
    }
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(&dir.join("timings.json"), &out.solver_wall_ms)?;
    Ok(out.report)
}

pub fn cmd_run(args: &RunArgs) -> Result<MetricsReport, CliError> {
    let mut cfg = args.common.load()?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.penalty {
        cfg.params.device_change_penalty = p;
    }
    if let Some(f) = args.cpu_factor {
        if !(f > 0.0 && f.is_finite()) {
            return Err(CliError::config("--cpu-factor must be positive"));
        }
        cfg.scale_cpu(f);
    }
    write_run(&args.out, &cfg, true)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| CliError::internal(e.to_string()))
}

/// Row label of a sweep configuration, e.g. `CP_1_25@cpu0.5`.
pub fn sweep_label(strategy: Strategy, penalty: f64, cpu_factor: f64) -> String {
    format!("{}@cpu{cpu_factor:?}", strategy.label(penalty))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Comparison, CliError> {
    let base = args.common.load()?;
    if args.seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    if args.cpu_factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(CliError::config("--cpu-factor values must be positive"));
    }
    let mut jobs = Vec::new();
    for &strategy in &args.strategies {
        let penalties = if strategy == Strategy::Cp {
            args.penalties.clone()
        } else {
            vec![1.0]
        };
        for &penalty in &penalties {
            for &cpu in &args.cpu_factors {
                for seed in 0..args.seeds {
                    let mut cfg = base.clone();
                    cfg.strategy = strategy;
                    cfg.params.device_change_penalty = penalty;
                    cfg.seed = seed;
                    cfg.scale_cpu(cpu);
                    let label = sweep_label(strategy, penalty, cpu);
                    jobs.push((label, seed, cfg));
                }
            }
        }
    }
    let runs_dir = args.out.join("runs");
    let reports: Vec<(String, MetricsReport)> = pool(args.jobs)?.install(|| {
        jobs.par_iter()
            .map(|(label, seed, cfg)| {
                let dir = runs_dir.join(format!("{label}_seed{seed}"));
                write_run(&dir, cfg, args.write_logs).map(|r| (label.clone(), r))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut grouped: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (label, report) in reports {
        grouped.entry(label).or_default().push(report);
    }
    let comparison = compare_strategies(&grouped);
    write_comparison(&args.out.join("comparison"), &comparison)?;

    let first_cpu = args.cpu_factors[0];
    let reference: Vec<String> = args
        .strategies
        .iter()
        .map(|&s| s.label(if s == Strategy::Cp { args.reference_penalty } else { 1.0 }))
        .collect();
    let subset = |keep: &dyn Fn(&str) -> bool| Comparison {
        rows: comparison.rows.iter().filter(|r| keep(&r.label)).cloned().collect(),
    };
    let base_suffix = format!("@cpu{first_cpu:?}");
    // (a) CP penalty sweep, (b) strategies side by side, (c) cpu factors
    let table_a = subset(&|l| l.starts_with("CP_") && l.ends_with(&base_suffix));
    let table_b = subset(&|l| reference.iter().any(|r| format!("{r}{base_suffix}") == l));
    let table_c = subset(&|l| reference.iter().any(|r| l.split('@').next() == Some(r.as_str())));
    write_comparison(&args.out.join("table_a"), &table_a)?;
    write_comparison(&args.out.join("table_b"), &table_b)?;
    write_comparison(&args.out.join("table_c"), &table_c)?;
    Ok(comparison)
}

fn write_comparison(stem: &Path, c: &Comparison) -> Result<(), CliError> {
    let csv_path = stem.with_extension("csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    c.write_csv(BufWriter::new(file)).map_err(io_err(&csv_path))?;
    let json_path = stem.with_extension("json");
    let file = fs::File::create(&json_path).map_err(io_err(&json_path))?;
    c.write_json(BufWriter::new(file)).map_err(io_err(&json_path))
}

/// One timed exact solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRun {
    pub steps: usize,
    pub workers: usize,
    pub seed: u64,
    pub status: SolveStatus,
    pub nodes: u64,
    pub first_feasible_ms: u64,
    pub elapsed_ms: u64,
}

/// Medians over seeds for one instance size. `optimal_ms` is censored at the
/// limit when a run did not prove optimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub steps: usize,
    pub workers: usize,
    pub layers: usize,
    pub width: usize,
    pub time_limit_ms: u64,
    pub median_first_feasible_ms: u64,
    pub median_optimal_ms: u64,
    pub optimal_runs: usize,
    pub max_elapsed_ms: u64,
    pub runs: Vec<ScaleRun>,
}

/// (layers, width) shapes of the benchmark, smallest first.
const SHAPES: [(usize, usize); 8] = [(1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (4, 5), (5, 5)];

pub fn scale_shapes(max_steps: usize) -> Vec<(usize, usize)> {
    SHAPES.iter().copied().filter(|(l, w)| l * w <= max_steps).collect()
}

/// Seeded layered instance with `workers` identical-capacity workers.
pub fn scale_instance(layers: usize, width: usize, workers: usize, seed: u64) -> (FlowGraph, StatsWindow, Vec<WorkerProfile>) {
    let (sources, steps) = layered(layers, width, workers);
    let graph = FlowGraph::build(sources, steps).expect("layered flows are valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..graph.num_steps())
        .map(|s| StepStats {
            step: graph.step(s).id.clone(),
            read_ms: (0..graph.inputs(s).len()).map(|_| rng.gen_range(1.0..5.0)).collect(),
            execute_ms: rng.gen_range(5.0..50.0),
            write_ms: rng.gen_range(1.0..5.0),
            bytes: rng.gen_range(100..10_000),
            executions: 1,
        })
        .collect();
    let producer_bytes = vec![1; graph.num_producers()];
    let worker_list = (0..workers)
        .map(|i| {
            WorkerProfile::new(format!("w{i:02}"))
                .with_capacity(2)
                .with_cpu(if i % 3 == 2 { 0.5 } else { 1.0 })
        })
        .collect();
    (graph, StatsWindow::new(stats, producer_bytes), worker_list)
}

pub fn cmd_scale(args: &ScaleArgs) -> Result<Vec<ScaleRow>, CliError> {
    if args.time_limit_ms == 0 || args.seeds == 0 {
        return Err(CliError::config("--time-limit-ms and --seeds must be positive"));
    }
    let params = CostParams {
        solver_time_limit_ms: args.time_limit_ms,
        ..CostParams::default()
    };
    let shapes = scale_shapes(args.max_steps);
    let mut rows = Vec::new();
    let pool = pool(args.jobs)?;
    for (layers, width) in shapes {
        let steps = layers * width;
        let workers = steps.min(args.max_workers).max(1);
        let runs: Vec<ScaleRun> = pool.install(|| {
            (0..args.seeds)
                .into_par_iter()
                .map(|seed| {
                    let (graph, stats, ws) = scale_instance(layers, width, workers, seed);
                    let paths = graph.enumerate_paths().map_err(|e| CliError::internal(e.to_string()))?;
                    let req = SolveRequest {
                        graph: &graph,
                        paths: &paths,
                        stats: &stats,
                        workers: &ws,
                        params: &params,
                        previous: None,
                        seed,
                    };
                    let res = solve_exact(&req).map_err(|e| CliError {
                        code: EXIT_INFEASIBLE,
                        message: format!("{steps} steps on {workers} workers: {e}"),
                    })?;
                    Ok(ScaleRun {
                        steps,
                        workers,
                        seed,
                        status: res.status,
                        nodes: res.nodes,
                        first_feasible_ms: res.first_feasible_ms,
                        elapsed_ms: res.elapsed_ms,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })?;
        let median = |mut v: Vec<u64>| {
            v.sort_unstable();
            v[v.len() / 2]
        };
        let optimal_ms = runs
            .iter()
            .map(|r| {
                if r.status == SolveStatus::Optimal {
                    r.elapsed_ms.min(args.time_limit_ms)
                } else {
                    args.time_limit_ms
                }
            })
            .collect();
        rows.push(ScaleRow {
            steps,
            workers,
            layers,
            width,
            time_limit_ms: args.time_limit_ms,
            median_first_feasible_ms: median(runs.iter().map(|r| r.first_feasible_ms).collect()),
            median_optimal_ms: median(optimal_ms),
            optimal_runs: runs.iter().filter(|r| r.status == SolveStatus::Optimal).count(),
            max_elapsed_ms: runs.iter().map(|r| r.elapsed_ms).max().unwrap_or(0),
            runs,
        });
    }
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    write_json(&args.out.join("scale.json"), &rows)?;
    let path = args.out.join("scale.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::internal(e.to_string()))?;
    w.write_record([
        "steps",
        "workers",
        "time_limit_ms",
        "median_first_feasible_ms",
        "median_optimal_ms",
        "optimal_runs",
        "max_elapsed_ms",
    ])
    .map_err(|e| CliError::internal(e.to_string()))?;
    for r in &rows {
        w.write_record([
            r.steps.to_string(),
            r.workers.to_string(),
            r.time_limit_ms.to_string(),
            r.median_first_feasible_ms.to_string(),
            r.median_optimal_ms.to_string(),
            r.optimal_runs.to_string(),
            r.max_elapsed_ms.to_string(),
        ])
        .map_err(|e| CliError::internal(e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}
