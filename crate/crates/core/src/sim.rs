//! Deterministic discrete-event simulation of a placed CEP flow.
//!
//! Sensors publish raw data into a virtual shared memory (one latest datum
//! per topic, stored on the topic's data worker). A step fires once every
//! input topic holds a datum it has not consumed yet, and consumes the latest
//! one per topic. Each worker runs its queued executions one at a time.
//! Every evaluation period a manager turns the window's measurements into
//! [`StatsWindow`]s, runs the configured strategy and migrates whatever moved.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{activation_cost, CostParams, Placement, StatsWindow, StepStats, WorkerProfile};
use crate::flow::{last_step, FlowError, FlowGraph, FlowPath, Producer, RawSource, StepDef};
use crate::metrics::{build_report, MetricsError, MetricsReport};
use crate::solvers::{
    keep_previous, solve_crrb, solve_exact, solve_ga, solve_local, solve_random, SolveError, SolveRequest, SolveStatus, Strategy,
};

pub const DEFAULT_EVAL_PERIOD_MS: f64 = 30_000.0;
pub const DEFAULT_RUN_DURATION_MS: f64 = 1_800_000.0;
pub const DEFAULT_BANDWIDTH_MB_S: f64 = 10.0;
/// Exact-solver node budget used when the scenario sets none, so that runs
/// do not depend on machine speed.
pub const DEFAULT_SIM_NODE_LIMIT: u64 = 2_000_000;

/// Everything one simulation run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub sources: Vec<RawSource>,
    pub steps: Vec<StepDef>,
    pub workers: Vec<WorkerProfile>,
    pub params: CostParams,
    pub strategy: Strategy,
    pub eval_period_ms: f64,
    pub run_duration_ms: f64,
    pub seed: u64,
    /// Bandwidth used to price data moves.
    pub bandwidth_mb_s: f64,
    /// Relative half-width of uniform noise on execution times, in [0, 1).
    pub exec_jitter: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("solver failed at t={t_ms} ms: {source}")]
    Solve { t_ms: f64, source: SolveError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ScenarioConfig {
    /// Report label, e.g. `CP_1_25` or `GA`.
    pub fn label(&self) -> String {
        self.strategy.label(self.params.device_change_penalty)
    }

    /// Multiplies every worker's cpu_factor by `factor`.
    pub fn scale_cpu(&mut self, factor: f64) {
        for w in &mut self.workers {
            w.cpu_factor *= factor;
        }
    }

    /// Checks the scenario and builds its flow graph.
    pub fn validate(&self) -> Result<FlowGraph, SimError> {
        let cfg = |m: String| SimError::Config(m);
        if self.workers.is_empty() {
            return Err(cfg("at least one worker is required".into()));
        }
        let mut ids = BTreeSet::new();
        for w in &self.workers {
            w.validate().map_err(cfg)?;
            if !ids.insert(w.id.as_str()) {
                return Err(cfg(format!("duplicate worker id `{}`", w.id)));
            }
        }
        self.params.validate().map_err(cfg)?;
        if !(self.eval_period_ms > 0.0 && self.run_duration_ms.is_finite()) {
            return Err(cfg("eval_period_ms and run_duration_ms must be positive and finite".into()));
        }
        if self.eval_period_ms >= self.run_duration_ms {
            return Err(cfg(format!(
                "eval_period_ms ({}) must be shorter than run_duration_ms ({})",
                self.eval_period_ms, self.run_duration_ms
            )));
        }
        if !(self.bandwidth_mb_s > 0.0 && self.bandwidth_mb_s.is_finite()) {
            return Err(cfg("bandwidth_mb_s must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.exec_jitter) {
            return Err(cfg("exec_jitter must lie in [0, 1)".into()));
        }
        for s in &self.sources {
            if !ids.contains(s.home_worker.as_str()) {
                return Err(cfg(format!("source `{}`: unknown home worker `{}`", s.id, s.home_worker)));
            }
            if let Some(c) = s.size_schedule.iter().find(|c| !(c.at_ms >= 0.0 && c.at_ms.is_finite())) {
                return Err(cfg(format!("source `{}`: size change time {} must be non-negative", s.id, c.at_ms)));
            }
        }
        for s in &self.steps {
            if !(s.compute.fixed_ms >= 0.0 && s.compute.per_byte_ms >= 0.0) {
                return Err(cfg(format!("step `{}`: compute times must be non-negative", s.id)));
            }
        }
        let graph = FlowGraph::build(self.sources.clone(), self.steps.clone())?;
        last_step(&graph)?;
        Ok(graph)
    }
}

/// One input read of a step execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRead {
    pub producer: String,
    pub bytes: u64,
    /// Modeled read time, penalized when remote.
    pub read_ms: f64,
    /// Read time had the datum been local.
    pub local_ms: f64,
    pub remote: bool,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LogRecord {
    SensorEmit {
        t: f64,
        source: String,
        bytes: u64,
        /// Worker the datum is written to.
        worker: String,
        write_ms: f64,
        remote: bool,
    },
    /// Logged when the execution (read, execute, write) completes.
    StepExecute {
        t: f64,
        start: f64,
        step: String,
        worker: String,
        inputs: Vec<InputRead>,
        exec_ms: f64,
        /// Execution time on a cpu_factor 1.0 worker.
        exec_base_ms: f64,
        write_ms: f64,
        write_local_ms: f64,
        write_remote: bool,
        output_bytes: u64,
        /// Emission time of the oldest raw datum behind this execution.
        oldest_raw_ms: f64,
        /// Steps whose outputs contributed, this one included.
        chain: Vec<String>,
    },
    EvalTick {
        t: f64,
        window: usize,
        status: SolveStatus,
        nodes: u64,
        objective: Option<f64>,
        code_changes: usize,
        data_changes: usize,
        code: BTreeMap<String, String>,
        data: BTreeMap<String, String>,
    },
    MigrationComplete {
        t: f64,
        step: String,
        from: String,
        to: String,
        blackout_ms: f64,
    },
    DataMoved {
        t: f64,
        producer: String,
        from: String,
        to: String,
        bytes: u64,
    },
    /// A queued execution discarded because its step migrated.
    Dropped { t: f64, step: String, worker: String },
}

impl LogRecord {
    pub fn time(&self) -> f64 {
        match self {
            Self::SensorEmit { t, .. }
            | Self::StepExecute { t, .. }
            | Self::EvalTick { t, .. }
            | Self::MigrationComplete { t, .. }
            | Self::DataMoved { t, .. }
            | Self::Dropped { t, .. } => *t,
        }
    }
}

/// Writes the log as one JSON object per line.
pub fn write_event_log<W: Write>(log: &[LogRecord], mut out: W) -> io::Result<()> {
    for rec in log {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_event_log(text: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Window statistics from the log records of one evaluation window.
///
/// Steps without executions in `records` keep their entry from `previous`.
pub fn collect_window_stats(graph: &FlowGraph, records: &[LogRecord], previous: &StatsWindow) -> StatsWindow {
    #[derive(Default)]
    struct Acc {
        read: Vec<f64>,
        exec: f64,
        write: f64,
        bytes: u64,
        n: u64,
    }
    let mut acc: Vec<Acc> = (0..graph.num_steps())
        .map(|s| Acc {
            read: vec![0.0; graph.inputs(s).len()],
            ..Acc::default()
        })
        .collect();
    let mut producer_bytes = vec![0u64; graph.num_producers()];
    for rec in records {
        match rec {
            LogRecord::SensorEmit { source, bytes, .. } => {
                if let Some(i) = graph.source_index(source) {
                    producer_bytes[graph.source_producer(i)] += bytes;
                }
            }
            LogRecord::StepExecute {
                step,
                inputs,
                exec_base_ms,
                write_local_ms,
                output_bytes,
                ..
            } => {
                let Some(s) = graph.step_index(step) else { continue };
                let a = &mut acc[s];
                for (slot, input) in a.read.iter_mut().zip(inputs) {
                    *slot += input.local_ms;
                    a.bytes += input.bytes;
                }
                a.exec += exec_base_ms;
                a.write += write_local_ms;
                a.n += 1;
                producer_bytes[graph.step_producer(s)] += output_bytes;
            }
            _ => {}
        }
    }
    let steps = acc
        .into_iter()
        .enumerate()
        .map(|(s, a)| {
            if a.n == 0 {
                return previous.get(s).cloned();
            }
            let n = a.n as f64;
            Some(StepStats {
                step: graph.step(s).id.clone(),
                read_ms: a.read.iter().map(|r| r / n).collect(),
                execute_ms: a.exec / n,
                write_ms: a.write / n,
                bytes: a.bytes.max(1),
                executions: a.n,
            })
        })
        .collect();
    StatsWindow { steps, producer_bytes }
}

/// Stats assumed before anything has been measured: one execution on the
/// given placement with nominal payload sizes.
pub fn prior_stats(graph: &FlowGraph, workers: &[WorkerProfile], placement: &Placement) -> StatsWindow {
    let nominal = |p: usize| match graph.producer(p) {
        Producer::Source(i) => graph.source(i).bytes_at(0.0),
        Producer::Step(s) => graph.step(s).output_bytes,
    };
    let steps = (0..graph.num_steps())
        .map(|s| {
            let w = &workers[placement.code[s]];
            let def = graph.step(s);
            let bytes: u64 = graph.inputs(s).iter().map(|&p| nominal(p)).sum();
            Some(StepStats {
                step: def.id.clone(),
                read_ms: graph.inputs(s).iter().map(|&p| w.local_read_ms(nominal(p))).collect(),
                execute_ms: def.compute.baseline_ms(bytes),
                write_ms: w.local_write_ms(def.output_bytes),
                bytes: bytes.max(1),
                executions: 0,
            })
        })
        .collect();
    StatsWindow {
        steps,
        producer_bytes: (0..graph.num_producers()).map(nominal).collect(),
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub log: Vec<LogRecord>,
    /// Wall-clock solver time per evaluation window. Kept out of the report
    /// and log so that those stay reproducible.
    pub solver_wall_ms: Vec<u64>,
}

pub fn run_simulation(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    let graph = config.validate()?;
    let mut sim = Sim::new(config, &graph)?;
    sim.run()?;
    let mut report = build_report(&sim.log, &graph, config.run_duration_ms)?;
    report.label = config.label();
    report.seed = config.seed;
    report.alpha = Some(config.params.alpha);
    report.beta = Some(config.params.beta);
    Ok(SimOutput {
        report,
        log: sim.log,
        solver_wall_ms: sim.solver_wall_ms,
    })
}

#[derive(Debug, Clone)]
struct Datum {
    seq: u64,
    bytes: u64,
    oldest_raw_ms: f64,
    chain: BTreeSet<usize>,
}

#[derive(Debug)]
enum Ev {
    Emit(usize),
    Install(usize, Datum),
    Complete(usize),
    Eval,
    Migrated { step: usize, gen: u64, from: usize, blackout: f64 },
    DataMoved { producer: usize, gen: u64, from: usize, bytes: u64 },
}

struct Queued {
    t: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap pops the earliest (time, insertion) first
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

struct Running {
    worker: usize,
    start: f64,
    inputs: Vec<InputRead>,
    exec_ms: f64,
    exec_base_ms: f64,
    write_ms: f64,
    write_local_ms: f64,
    write_remote: bool,
    oldest_raw_ms: f64,
    chain: BTreeSet<usize>,
}

struct StepState {
    host: usize,
    active: bool,
    /// Queued or running.
    pending: bool,
    running: Option<Running>,
    consumed: Vec<u64>,
    mig_gen: u64,
    /// Migration waiting for the running execution to finish.
    deferred: Option<f64>,
}

#[derive(Default)]
struct WorkerState {
    queue: VecDeque<usize>,
    busy: bool,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    graph: &'a FlowGraph,
    paths: Vec<FlowPath>,
    params: CostParams,
    now: f64,
    events: BinaryHeap<Queued>,
    ev_seq: u64,
    placement: Placement,
    vsm: Vec<Option<Datum>>,
    available: Vec<bool>,
    data_gen: Vec<u64>,
    datum_seq: u64,
    steps: Vec<StepState>,
    workers: Vec<WorkerState>,
    rng: ChaCha8Rng,
    stats: StatsWindow,
    window: usize,
    window_start: usize,
    log: Vec<LogRecord>,
    solver_wall_ms: Vec<u64>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, graph: &'a FlowGraph) -> Result<Self, SimError> {
        let paths = graph.enumerate_paths()?;
        let mut params = cfg.params.clone();
        if cfg.strategy != Strategy::Cp {
            params.device_change_penalty = 1.0;
        }
        params.solver_node_limit = params.solver_node_limit.or(Some(DEFAULT_SIM_NODE_LIMIT));

        // initial round-robin placement, priced with nominal stats
        let provisional = Placement {
            code: vec![0; graph.num_steps()],
            data: vec![0; graph.num_producers()],
        };
        let nominal = prior_stats(graph, &cfg.workers, &provisional);
        let req = SolveRequest {
            graph,
            paths: &paths,
            stats: &nominal,
            workers: &cfg.workers,
            params: &params,
            previous: None,
            seed: cfg.seed,
        };
        let placement = solve_crrb(&req)
            .map_err(|source| SimError::Solve { t_ms: 0.0, source })?
            .placement;
        let stats = prior_stats(graph, &cfg.workers, &placement);

        let steps = (0..graph.num_steps())
            .map(|s| StepState {
                host: placement.code[s],
                active: true,
                pending: false,
                running: None,
                consumed: vec![0; graph.inputs(s).len()],
                mig_gen: 0,
                deferred: None,
            })
            .collect();
        let n_prod = graph.num_producers();
        Ok(Self {
            cfg,
            graph,
            paths,
            params,
            now: 0.0,
            events: BinaryHeap::new(),
            ev_seq: 0,
            placement,
            vsm: vec![None; n_prod],
            available: vec![true; n_prod],
            data_gen: vec![0; n_prod],
            datum_seq: 0,
            steps,
            workers: (0..cfg.workers.len()).map(|_| WorkerState::default()).collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            stats,
            window: 0,
            window_start: 0,
            log: Vec::new(),
            solver_wall_ms: Vec::new(),
        })
    }

    fn push(&mut self, t: f64, ev: Ev) {
        self.ev_seq += 1;
        self.events.push(Queued { t, seq: self.ev_seq, ev });
    }

    fn wid(&self, w: usize) -> String {
        self.cfg.workers[w].id.clone()
    }

    fn run(&mut self) -> Result<(), SimError> {
        for i in 0..self.graph.num_sources() {
            let phase = self.rng.gen::<f64>() * self.graph.source(i).period_ms;
            self.push(phase, Ev::Emit(i));
        }
        self.push(self.cfg.eval_period_ms, Ev::Eval);
        while let Some(q) = self.events.pop() {
            if q.t >= self.cfg.run_duration_ms {
                break;
            }
            self.now = q.t;
            match q.ev {
                Ev::Emit(i) => self.emit(i),
                Ev::Install(p, datum) => self.install(p, datum),
                Ev::Complete(s) => self.complete(s),
                Ev::Eval => self.evaluate()?,
                Ev::Migrated {
                    step,
                    gen,
                    from,
                    blackout,
                } => self.migrated(step, gen, from, blackout),
                Ev::DataMoved {
                    producer,
                    gen,
                    from,
                    bytes,
                } => self.data_moved(producer, gen, from, bytes),
            }
        }
        Ok(())
    }

    fn emit(&mut self, i: usize) {
        let src = self.graph.source(i);
        let p = self.graph.source_producer(i);
        let home = self.cfg.workers.iter().position(|w| w.id == src.home_worker).unwrap_or(0);
        let loc = self.placement.data[p];
        let bytes = src.bytes_at(self.now);
        let remote = loc != home;
        let local = self.cfg.workers[home].local_write_ms(bytes);
        let write_ms = if remote { self.params.beta * local } else { local };
        self.log.push(LogRecord::SensorEmit {
            t: self.now,
            source: src.id.clone(),
            bytes,
            worker: self.wid(loc),
            write_ms,
            remote,
        });
        let datum = Datum {
            seq: 0,
            bytes,
            oldest_raw_ms: self.now,
            chain: BTreeSet::new(),
        };
        let next = self.now + src.period_ms;
        self.push(self.now + write_ms, Ev::Install(p, datum));
        self.push(next, Ev::Emit(i));
    }

    fn install(&mut self, p: usize, mut datum: Datum) {
        self.datum_seq += 1;
        datum.seq = self.datum_seq;
        self.vsm[p] = Some(datum);
        // a fresh write supersedes any move still in flight
        self.available[p] = true;
        self.data_gen[p] += 1;
        for k in 0..self.graph.consumers(p).len() {
            let c = self.graph.consumers(p)[k];
            self.try_trigger(c);
        }
    }

    fn try_trigger(&mut self, s: usize) {
        let st = &self.steps[s];
        if !st.active || st.pending {
            return;
        }
        let ready = self.graph.inputs(s).iter().zip(&st.consumed).all(|(&p, &last)| {
            self.available[p] && self.vsm[p].as_ref().is_some_and(|d| d.seq > last)
        });
        if !ready {
            return;
        }
        let host = st.host;
        self.steps[s].pending = true;
        self.workers[host].queue.push_back(s);
        self.dispatch(host);
    }

    fn dispatch(&mut self, w: usize) {
        if self.workers[w].busy {
            return;
        }
        let Some(s) = self.workers[w].queue.pop_front() else { return };
        let prof = &self.cfg.workers[w];
        let mut inputs = Vec::with_capacity(self.graph.inputs(s).len());
        let mut input_bytes = 0u64;
        let mut oldest = f64::INFINITY;
        let mut chain = BTreeSet::from([s]);
        let mut read_total = 0.0;
        for (k, &p) in self.graph.inputs(s).iter().enumerate() {
            let d = self.vsm[p].as_ref().expect("triggered steps have every input");
            let remote = self.placement.data[p] != w;
            let local_ms = prof.local_read_ms(d.bytes);
            let read_ms = if remote { self.params.alpha * local_ms } else { local_ms };
            read_total += read_ms;
            input_bytes += d.bytes;
            oldest = oldest.min(d.oldest_raw_ms);
            chain.extend(d.chain.iter().copied());
            self.steps[s].consumed[k] = d.seq;
            inputs.push(InputRead {
                producer: self.graph.producer_id(p).to_string(),
                bytes: d.bytes,
                read_ms,
                local_ms,
                remote,
            });
        }
        let def = self.graph.step(s);
        let mut exec_base_ms = def.compute.baseline_ms(input_bytes);
        if self.cfg.exec_jitter > 0.0 {
            exec_base_ms *= 1.0 + self.cfg.exec_jitter * (2.0 * self.rng.gen::<f64>() - 1.0);
        }
        let exec_ms = exec_base_ms / prof.cpu_factor;
        let write_local_ms = prof.local_write_ms(def.output_bytes);
        let write_remote = self.placement.data[self.graph.step_producer(s)] != w;
        let write_ms = if write_remote {
            self.params.beta * write_local_ms
        } else {
            write_local_ms
        };
        let done = self.now + (read_total + exec_ms + write_ms);
        self.steps[s].running = Some(Running {
            worker: w,
            start: self.now,
            inputs,
            exec_ms,
            exec_base_ms,
            write_ms,
            write_local_ms,
            write_remote,
            oldest_raw_ms: oldest,
            chain,
        });
        self.workers[w].busy = true;
        self.push(done, Ev::Complete(s));
    }

    fn complete(&mut self, s: usize) {
        let run = self.steps[s].running.take().expect("completion of a running step");
        let def = self.graph.step(s);
        self.log.push(LogRecord::StepExecute {
            t: self.now,
            start: run.start,
            step: def.id.clone(),
            worker: self.wid(run.worker),
            inputs: run.inputs,
            exec_ms: run.exec_ms,
            exec_base_ms: run.exec_base_ms,
            write_ms: run.write_ms,
            write_local_ms: run.write_local_ms,
            write_remote: run.write_remote,
            output_bytes: def.output_bytes,
            oldest_raw_ms: run.oldest_raw_ms,
            chain: run.chain.iter().map(|&c| self.graph.step(c).id.clone()).collect(),
        });
        let datum = Datum {
            seq: 0,
            bytes: def.output_bytes,
            oldest_raw_ms: run.oldest_raw_ms,
            chain: run.chain,
        };
        self.workers[run.worker].busy = false;
        self.steps[s].pending = false;
        self.install(self.graph.step_producer(s), datum);
        if let Some(blackout) = self.steps[s].deferred.take() {
            self.start_migration(s, run.worker, blackout);
        } else {
            self.try_trigger(s);
        }
        self.dispatch(run.worker);
    }

    fn evaluate(&mut self) -> Result<(), SimError> {
        self.window += 1;
        self.stats = collect_window_stats(self.graph, &self.log[self.window_start..], &self.stats);
        self.window_start = self.log.len();

        let req = SolveRequest {
            graph: self.graph,
            paths: &self.paths,
            stats: &self.stats,
            workers: &self.cfg.workers,
            params: &self.params,
            previous: Some(&self.placement),
            seed: self.cfg.seed.wrapping_add(self.window as u64),
        };
        let started = Instant::now();
        let solved = match self.cfg.strategy {
            Strategy::Cp => solve_exact(&req),
            Strategy::Ga => solve_ga(&req),
            Strategy::Crrb => solve_crrb(&req),
            Strategy::Local => solve_local(&req),
            Strategy::Random if self.window == 1 => solve_random(&SolveRequest {
                seed: self.cfg.seed,
                ..req
            }),
            // one random draw per run, then kept
            Strategy::Random => keep_previous(&req),
        }
        .map_err(|source| SimError::Solve {
            t_ms: self.now,
            source,
        })?;
        self.solver_wall_ms.push(started.elapsed().as_millis() as u64);

        let new = solved.placement;
        let named = new.named(self.graph, &self.cfg.workers);
        self.log.push(LogRecord::EvalTick {
            t: self.now,
            window: self.window,
            status: solved.status,
            nodes: solved.nodes,
            objective: Some(solved.objective).filter(|o| o.is_finite()),
            code_changes: new.code_changes(&self.placement),
            data_changes: new.data_changes(&self.placement),
            code: named.code,
            data: named.data,
        });
        self.apply(new);
        let next = self.now + self.cfg.eval_period_ms;
        self.push(next, Ev::Eval);
        Ok(())
    }

    fn move_ms(&self, bytes: u64) -> f64 {
        bytes as f64 / (self.cfg.bandwidth_mb_s * 1000.0)
    }

    fn apply(&mut self, new: Placement) {
        let old = std::mem::replace(&mut self.placement, new);
        for p in 0..self.graph.num_producers() {
            let to = self.placement.data[p];
            if to == old.data[p] {
                continue;
            }
            if let Some(bytes) = self.vsm[p].as_ref().map(|d| d.bytes) {
                self.available[p] = false;
                self.data_gen[p] += 1;
                let gen = self.data_gen[p];
                let at = self.now + self.move_ms(bytes);
                self.push(
                    at,
                    Ev::DataMoved {
                        producer: p,
                        gen,
                        from: old.data[p],
                        bytes,
                    },
                );
            }
        }
        for s in 0..self.graph.num_steps() {
            let to = self.placement.code[s];
            if to == old.code[s] {
                continue;
            }
            let own = self.graph.step_producer(s);
            let own_move = match &self.vsm[own] {
                Some(d) if self.placement.data[own] != old.data[own] => self.move_ms(d.bytes),
                _ => 0.0,
            };
            let blackout = activation_cost(&self.cfg.workers[to]) + own_move;
            self.steps[s].mig_gen += 1;
            if self.steps[s].running.is_some() {
                self.steps[s].deferred = Some(blackout);
            } else {
                self.start_migration(s, self.steps[s].host, blackout);
            }
        }
    }

    fn start_migration(&mut self, s: usize, from: usize, blackout: f64) {
        let st = &mut self.steps[s];
        if st.pending {
            // queued on the old worker; the execution is lost
            let host = st.host;
            self.workers[host].queue.retain(|&x| x != s);
            st.pending = false;
            self.log.push(LogRecord::Dropped {
                t: self.now,
                step: self.graph.step(s).id.clone(),
                worker: self.cfg.workers[host].id.clone(),
            });
        }
        let st = &mut self.steps[s];
        st.active = false;
        let gen = st.mig_gen;
        self.push(
            self.now + blackout,
            Ev::Migrated {
                step: s,
                gen,
                from,
                blackout,
            },
        );
    }

    fn migrated(&mut self, s: usize, gen: u64, from: usize, blackout: f64) {
        if self.steps[s].mig_gen != gen || self.steps[s].deferred.is_some() {
            return;
        }
        let to = self.placement.code[s];
        self.steps[s].host = to;
        self.steps[s].active = true;
        self.log.push(LogRecord::MigrationComplete {
            t: self.now,
            step: self.graph.step(s).id.clone(),
            from: self.wid(from),
            to: self.wid(to),
            blackout_ms: blackout,
        });
        self.try_trigger(s);
    }

    fn data_moved(&mut self, p: usize, gen: u64, from: usize, bytes: u64) {
        if self.data_gen[p] != gen {
            return;
        }
        self.available[p] = true;
        self.log.push(LogRecord::DataMoved {
            t: self.now,
            producer: self.graph.producer_id(p).to_string(),
            from: self.wid(from),
            to: self.wid(self.placement.data[p]),
            bytes,
        });
        for k in 0..self.graph.consumers(p).len() {
            let c = self.graph.consumers(p)[k];
            self.try_trigger(c);
        }
    }
}

/// Small scenarios for unit and integration tests.
pub mod testkit {
    use super::*;
    use crate::flow::build::{source, step};

    /// One source (period 100 ms) feeding one step on one worker.
    pub fn single_step(strategy: Strategy) -> ScenarioConfig {
        ScenarioConfig {
            sources: vec![source("r", "raw", "w1")],
            steps: vec![step("a", &["raw"], "out")],
            workers: vec![WorkerProfile::new("w1")],
            params: CostParams::default(),
            strategy,
            eval_period_ms: 500.0,
            run_duration_ms: 1_000.0,
            seed: 1,
            bandwidth_mb_s: DEFAULT_BANDWIDTH_MB_S,
            exec_jitter: 0.0,
        }
    }

    /// source -> a -> {b, c} -> d.
    pub fn diamond(workers: usize) -> ScenarioConfig {
        let mut sources = vec![source("r", "raw", "w1")];
        sources[0].bytes_per_event = 1024;
        let mut steps = vec![
            step("a", &["raw"], "ta"),
            step("b", &["ta"], "tb"),
            step("c", &["ta"], "tc"),
            step("d", &["tb", "tc"], "td"),
        ];
        for s in &mut steps {
            s.output_bytes = 256;
        }
        ScenarioConfig {
            sources,
            steps,
            workers: (1..=workers)
                .map(|i| {
                    let mut w = WorkerProfile::new(format!("w{i}"));
                    w.read_ms_per_kib = 2.0;
                    w.write_ms_per_kib = 1.0;
                    w
                })
                .collect(),
            params: CostParams::default(),
            strategy: Strategy::Crrb,
            eval_period_ms: 10_000.0,
            run_duration_ms: 60_000.0,
            seed: 3,
            bandwidth_mb_s: DEFAULT_BANDWIDTH_MB_S,
            exec_jitter: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testkit::{diamond, single_step};
    use super::*;

    fn executions<'l>(log: &'l [LogRecord], id: &'l str) -> impl Iterator<Item = &'l LogRecord> + 'l {
        log.iter()
            .filter(move |r| matches!(r, LogRecord::StepExecute { step, .. } if step == id))
    }

    #[test]
    fn single_worker_runs_every_event_locally() {
        let out = run_simulation(&single_step(Strategy::Crrb)).unwrap();
        let n = executions(&out.log, "a").count();
        assert!((9..=10).contains(&n), "{n} executions");
        for rec in executions(&out.log, "a") {
            let LogRecord::StepExecute { inputs, write_remote, .. } = rec else { unreachable!() };
            assert!(inputs.iter().all(|i| !i.remote));
            assert!(!write_remote);
        }
    }

    #[test]
    fn remote_data_scales_reads_by_alpha() {
        let mut cfg = single_step(Strategy::Crrb);
        cfg.params.alpha = 2.0;
        cfg.workers.push(WorkerProfile::new("w2"));
        // the source lives on w2 while the step runs on w1
        cfg.sources[0].home_worker = "w2".into();
        let out = run_simulation(&cfg).unwrap();
        let local = cfg.workers[0].local_read_ms(64);
        let mut seen = 0;
        for rec in executions(&out.log, "a") {
            let LogRecord::StepExecute { inputs, .. } = rec else { unreachable!() };
            assert!(inputs[0].remote);
            assert_eq!(inputs[0].read_ms / local, 2.0);
            seen += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn identical_configs_give_identical_logs() {
        let mut cfg = diamond(3);
        cfg.exec_jitter = 0.2;
        cfg.strategy = Strategy::Ga;
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn empty_windows_carry_stats_forward() {
        let graph = diamond(1).validate().unwrap();
        let placement = Placement {
            code: vec![0; 4],
            data: vec![0; 5],
        };
        let prior = prior_stats(&graph, &diamond(1).workers, &placement);
        let next = collect_window_stats(&graph, &[], &prior);
        assert_eq!(next.steps, prior.steps);
        assert_eq!(next.producer_bytes, vec![0; 5]);
    }

    #[test]
    fn window_means_average_the_executions() {
        let cfg = single_step(Strategy::Crrb);
        let out = run_simulation(&cfg).unwrap();
        let graph = cfg.validate().unwrap();
        let stats = collect_window_stats(&graph, &out.log, &StatsWindow::default());
        let s = stats.get(0).unwrap();
        let n = executions(&out.log, "a").count() as u64;
        assert_eq!(s.executions, n);
        assert_eq!(s.execute_ms, 1.0);
        assert_eq!(s.bytes, 64 * n);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut cfg = single_step(Strategy::Cp);
        cfg.eval_period_ms = cfg.run_duration_ms;
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let mut cfg = single_step(Strategy::Cp);
        cfg.sources[0].home_worker = "nowhere".into();
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let mut cfg = single_step(Strategy::Cp);
        cfg.steps[0].input_topics.push(crate::flow::Topic::new("out"));
        assert!(matches!(cfg.validate(), Err(SimError::Flow(FlowError::CycleDetected(_)))));
    }

    #[test]
    fn migration_blacks_out_the_step() {
        let mut cfg = diamond(4);
        cfg.strategy = Strategy::Cp;
        for w in &mut cfg.workers {
            w.download_ms = 400.0;
            w.subscribe_ms = 100.0;
        }
        let out = run_simulation(&cfg).unwrap();
        let mut migrations = 0;
        for rec in &out.log {
            let LogRecord::MigrationComplete { t, step, blackout_ms, .. } = rec else { continue };
            migrations += 1;
            assert!(*blackout_ms >= 500.0);
            let begin = t - blackout_ms;
            let during = executions(&out.log, step)
                .filter(|r| matches!(r, LogRecord::StepExecute { start, .. } if *start > begin && *start < *t))
                .count();
            assert_eq!(during, 0, "{step} ran during its blackout");
        }
        assert!(migrations > 0);
    }
}
