//! Latency and byte-normalized cost of steps and paths under a placement.
//!
//! Statistics are stored in *local-equivalent* form: read and write times as
//! they would be with colocated data, execution time on a cpu_factor 1.0
//! worker. Placement-dependent penalties are re-applied here, which lets the
//! solvers evaluate placements other than the one the stats were measured on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowGraph, FlowPath};

/// Hardware profile of a worker device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub id: String,
    /// Relative CPU speed; 1.0 is the baseline device.
    pub cpu_factor: f64,
    /// Maximum number of steps hosted at once.
    pub code_capacity: usize,
    /// Fixed cost of one local read.
    pub base_read_ms: f64,
    /// Fixed cost of one local write.
    pub base_write_ms: f64,
    /// Size-dependent read cost.
    #[serde(default)]
    pub read_ms_per_kib: f64,
    /// Size-dependent write cost.
    #[serde(default)]
    pub write_ms_per_kib: f64,
    #[serde(default)]
    pub download_ms: f64,
    #[serde(default)]
    pub subscribe_ms: f64,
}

impl WorkerProfile {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            cpu_factor: 1.0,
            code_capacity: 2,
            base_read_ms: 1.0,
            base_write_ms: 1.0,
            read_ms_per_kib: 0.0,
            write_ms_per_kib: 0.0,
            download_ms: 0.0,
            subscribe_ms: 0.0,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.code_capacity = capacity;
        self
    }

    pub fn with_cpu(mut self, cpu_factor: f64) -> Self {
        self.cpu_factor = cpu_factor;
        self
    }

    /// Unpenalized time to read a datum of `bytes` bytes.
    pub fn local_read_ms(&self, bytes: u64) -> f64 {
        self.base_read_ms + self.read_ms_per_kib * bytes as f64 / 1024.0
    }

    /// Unpenalized time to write a datum of `bytes` bytes.
    pub fn local_write_ms(&self, bytes: u64) -> f64 {
        self.base_write_ms + self.write_ms_per_kib * bytes as f64 / 1024.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("worker id is empty".into());
        }
        if !(self.cpu_factor > 0.0 && self.cpu_factor.is_finite()) {
            return Err(format!("worker `{}`: cpu_factor must be positive", self.id));
        }
        if self.code_capacity == 0 {
            return Err(format!("worker `{}`: code_capacity must be at least 1", self.id));
        }
        let nonneg = [
            self.base_read_ms,
            self.base_write_ms,
            self.read_ms_per_kib,
            self.write_ms_per_kib,
            self.download_ms,
            self.subscribe_ms,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(format!("worker `{}`: latencies must be non-negative", self.id));
        }
        Ok(())
    }
}

/// Time to (re)activate a step on `worker`: code download plus topic
/// subscription. Only the simulator charges it; solvers ignore it.
pub fn activation_cost(worker: &WorkerProfile) -> f64 {
    worker.download_ms + worker.subscribe_ms
}

/// Penalties and solver budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Remote-read multiplier.
    pub alpha: f64,
    /// Remote-write multiplier.
    pub beta: f64,
    /// Multiplier on the cost of a step whose worker changes.
    pub device_change_penalty: f64,
    pub solver_time_limit_ms: u64,
    /// Search-node budget for the exact solver. Unlike the wall-clock limit
    /// it keeps results reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_node_limit: Option<u64>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: 3.0,
            device_change_penalty: 1.0,
            solver_time_limit_ms: 10_000,
            solver_node_limit: None,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("device_change_penalty", self.device_change_penalty),
        ] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite value >= 1 (got {v})"));
            }
        }
        if self.solver_time_limit_ms == 0 {
            return Err("solver_time_limit_ms must be positive".into());
        }
        Ok(())
    }
}

/// Code and data assignment. Worker references are indices into the worker
/// list; `data` is indexed by flat producer index (sources, then steps).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub code: Vec<usize>,
    pub data: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlacementError {
    #[error("placement covers {got} steps, flow has {expected}")]
    CodeLength { expected: usize, got: usize },
    #[error("placement covers {got} producers, flow has {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("`{node}` is assigned to unknown worker index {worker}")]
    UnknownWorker { node: String, worker: usize },
    #[error("worker `{worker}` hosts {hosted} steps, capacity is {capacity}")]
    CapacityExceeded {
        worker: String,
        hosted: usize,
        capacity: usize,
    },
}

impl Placement {
    /// Per-worker number of hosted steps.
    pub fn loads(&self, num_workers: usize) -> Vec<usize> {
        let mut loads = vec![0; num_workers];
        for &w in &self.code {
            if w < num_workers {
                loads[w] += 1;
            }
        }
        loads
    }

    /// Checks both assignment maps are total over the flow and capacities hold.
    pub fn validate(&self, graph: &FlowGraph, workers: &[WorkerProfile]) -> Result<(), PlacementError> {
        if self.code.len() != graph.num_steps() {
            return Err(PlacementError::CodeLength {
                expected: graph.num_steps(),
                got: self.code.len(),
            });
        }
        if self.data.len() != graph.num_producers() {
            return Err(PlacementError::DataLength {
                expected: graph.num_producers(),
                got: self.data.len(),
            });
        }
        for (s, &w) in self.code.iter().enumerate() {
            if w >= workers.len() {
                return Err(PlacementError::UnknownWorker {
                    node: graph.step(s).id.clone(),
                    worker: w,
                });
            }
        }
        for (p, &w) in self.data.iter().enumerate() {
            if w >= workers.len() {
                return Err(PlacementError::UnknownWorker {
                    node: graph.producer_id(p).to_string(),
                    worker: w,
                });
            }
        }
        for (w, hosted) in self.loads(workers.len()).into_iter().enumerate() {
            if hosted > workers[w].code_capacity {
                return Err(PlacementError::CapacityExceeded {
                    worker: workers[w].id.clone(),
                    hosted,
                    capacity: workers[w].code_capacity,
                });
            }
        }
        Ok(())
    }

    /// Number of steps whose executing worker differs from `other`.
    pub fn code_changes(&self, other: &Placement) -> usize {
        self.code.iter().zip(&other.code).filter(|(a, b)| a != b).count()
    }

    /// Number of producers whose data location differs from `other`.
    pub fn data_changes(&self, other: &Placement) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count()
    }

    /// Id-keyed view for reports and logs.
    pub fn named(&self, graph: &FlowGraph, workers: &[WorkerProfile]) -> NamedPlacement {
        NamedPlacement {
            code: self
                .code
                .iter()
                .enumerate()
                .map(|(s, &w)| (graph.step(s).id.clone(), workers[w].id.clone()))
                .collect(),
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(p, &w)| (graph.producer_id(p).to_string(), workers[w].id.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedPlacement {
    pub code: BTreeMap<String, String>,
    pub data: BTreeMap<String, String>,
}

/// Statistics of one step over one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: String,
    /// Mean local-equivalent read time per input, aligned with the step's
    /// input topics.
    pub read_ms: Vec<f64>,
    /// Mean execution time normalized to a cpu_factor 1.0 worker.
    pub execute_ms: f64,
    /// Mean local-equivalent write time.
    pub write_ms: f64,
    /// Input bytes processed in the window, at least 1.
    pub bytes: u64,
    pub executions: u64,
}

impl StepStats {
    /// Stats with the same read time for every one of `inputs` inputs.
    pub fn uniform(step: &str, inputs: usize, read_ms: f64, execute_ms: f64, write_ms: f64, bytes: u64) -> Self {
        Self {
            step: step.to_string(),
            read_ms: vec![read_ms; inputs],
            execute_ms,
            write_ms,
            bytes: bytes.max(1),
            executions: 1,
        }
    }

    pub fn total_read_ms(&self) -> f64 {
        self.read_ms.iter().sum()
    }

    /// `bytes` clamped to at least one.
    pub fn cost_bytes(&self) -> f64 {
        self.bytes.max(1) as f64
    }
}

/// Per-step stats of one window plus bytes written per producer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsWindow {
    /// Indexed by step index.
    pub steps: Vec<Option<StepStats>>,
    /// Bytes written per flat producer index during the window.
    pub producer_bytes: Vec<u64>,
}

impl StatsWindow {
    pub fn new(steps: Vec<StepStats>, producer_bytes: Vec<u64>) -> Self {
        Self {
            steps: steps.into_iter().map(Some).collect(),
            producer_bytes,
        }
    }

    pub fn get(&self, step: usize) -> Option<&StepStats> {
        self.steps.get(step).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("no statistics for step `{0}`")]
    MissingStats(String),
}

/// Latency of one step execution given which of its reads and its write are
/// remote. Shared by every evaluator so that all of them round identically.
#[inline]
pub(crate) fn latency_from_terms(
    stats: &StepStats,
    mut input_remote: impl FnMut(usize) -> bool,
    write_remote: bool,
    cpu_factor: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut read = 0.0;
    for (k, &r) in stats.read_ms.iter().enumerate() {
        read += if input_remote(k) { alpha * r } else { r };
    }
    let write = if write_remote { beta * stats.write_ms } else { stats.write_ms };
    read + stats.execute_ms / cpu_factor + write
}

/// Evaluates latency and cost equations for a fixed flow, worker set and
/// penalty configuration.
#[derive(Debug, Clone, Copy)]
pub struct CostModel<'a> {
    pub graph: &'a FlowGraph,
    pub workers: &'a [WorkerProfile],
    pub params: &'a CostParams,
}

impl<'a> CostModel<'a> {
    pub fn new(graph: &'a FlowGraph, workers: &'a [WorkerProfile], params: &'a CostParams) -> Self {
        Self { graph, workers, params }
    }

    /// read + execute + write, each input read multiplied by alpha when its
    /// data lives away from the executing worker and the write multiplied by
    /// beta when the step's output is stored remotely.
    pub fn step_latency(&self, stats: &StepStats, step: usize, placement: &Placement) -> f64 {
        let worker = placement.code[step];
        let inputs = self.graph.inputs(step);
        latency_from_terms(
            stats,
            |k| placement.data[inputs[k]] != worker,
            placement.data[self.graph.step_producer(step)] != worker,
            self.workers[worker].cpu_factor,
            self.params.alpha,
            self.params.beta,
        )
    }

    /// Step latency per processed byte.
    pub fn step_cost(&self, stats: &StepStats, step: usize, placement: &Placement) -> f64 {
        self.step_latency(stats, step, placement) / stats.cost_bytes()
    }

    pub fn path_latency(&self, path: &FlowPath, window: &StatsWindow, placement: &Placement) -> Result<f64, CostError> {
        path.steps.iter().try_fold(0.0, |acc, &s| {
            let stats = self.stats_for(window, s)?;
            Ok(acc + self.step_latency(stats, s, placement))
        })
    }

    pub fn path_cost(&self, path: &FlowPath, window: &StatsWindow, placement: &Placement) -> Result<f64, CostError> {
        path.steps.iter().try_fold(0.0, |acc, &s| {
            let stats = self.stats_for(window, s)?;
            Ok(acc + self.step_cost(stats, s, placement))
        })
    }

    /// Index into `paths` of the highest-cost path and its cost. `paths` is
    /// expected in lexicographic order, so the first maximum is the
    /// lexicographically smallest one.
    pub fn critical_path(
        &self,
        paths: &[FlowPath],
        window: &StatsWindow,
        placement: &Placement,
    ) -> Result<Option<(usize, f64)>, CostError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, path) in paths.iter().enumerate() {
            let cost = self.path_cost(path, window, placement)?;
            if best.is_none_or(|(_, b)| cost > b) {
                best = Some((i, cost));
            }
        }
        Ok(best)
    }

    fn stats_for<'w>(&self, window: &'w StatsWindow, step: usize) -> Result<&'w StepStats, CostError> {
        window
            .get(step)
            .ok_or_else(|| CostError::MissingStats(self.graph.step(step).id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::build::{source, step};
    use crate::flow::FlowGraph;

    /// r1 -> a, r2 -> b(a), chain a -> b -> c
    fn graph() -> FlowGraph {
        FlowGraph::build(
            vec![source("r1", "x", "w0"), source("r2", "y", "w0")],
            vec![
                step("a", &["x"], "ta"),
                step("b", &["ta", "y"], "tb"),
                step("c", &["tb"], "tc"),
            ],
        )
        .unwrap()
    }

    fn workers(n: usize) -> Vec<WorkerProfile> {
        (0..n).map(|i| WorkerProfile::new(format!("w{i}"))).collect()
    }

    fn params(alpha: f64, beta: f64) -> CostParams {
        CostParams {
            alpha,
            beta,
            ..CostParams::default()
        }
    }

    #[test]
    fn colocated_latency_is_plain_sum() {
        let g = graph();
        let ws = workers(2);
        let p = params(3.0, 3.0);
        let m = CostModel::new(&g, &ws, &p);
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![0; 5],
        };
        let st = StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 3);
        assert_eq!(m.step_latency(&st, 0, &place), 6.0);
        assert_eq!(m.step_cost(&st, 0, &place), 2.0);
    }

    #[test]
    fn single_remote_input_doubles_read() {
        let g = graph();
        let ws = workers(2);
        let p = params(2.0, 1.0);
        let m = CostModel::new(&g, &ws, &p);
        // r1's data on w1, step a on w0
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![1, 0, 0, 0, 0],
        };
        let st = StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 1);
        assert_eq!(m.step_latency(&st, 0, &place), 8.0);
        // zero bytes clamp to one
        let mut st0 = st.clone();
        st0.bytes = 0;
        assert_eq!(m.step_cost(&st0, 0, &place), 8.0);
    }

    #[test]
    fn per_input_penalty_and_remote_write() {
        let g = graph();
        let ws = workers(2);
        let p = params(3.0, 2.0);
        let m = CostModel::new(&g, &ws, &p);
        // step b (idx 1) on w0; input ta (producer 2+0) local, y (producer 1) remote;
        // b's output (producer 3) remote
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![0, 1, 0, 1, 0],
        };
        let st = StepStats::uniform("b", 2, 2.0, 4.0, 2.0, 4096);
        assert_eq!(m.step_latency(&st, 1, &place), 16.0);
        assert_eq!(m.step_cost(&st, 1, &place), 0.00390625);
    }

    #[test]
    fn cpu_factor_scales_execution() {
        let g = graph();
        let ws = vec![WorkerProfile::new("w0").with_cpu(0.5)];
        let p = params(3.0, 3.0);
        let m = CostModel::new(&g, &ws, &p);
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![0; 5],
        };
        let st = StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 1);
        assert_eq!(m.step_latency(&st, 0, &place), 9.0);
    }

    #[test]
    fn path_sums_and_missing_stats() {
        let g = graph();
        let ws = workers(2);
        let p = params(2.0, 1.0);
        let m = CostModel::new(&g, &ws, &p);
        let paths = g.enumerate_paths().unwrap();
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![0; 5],
        };
        let window = StatsWindow::new(
            vec![
                StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 3),
                StepStats::uniform("b", 2, 1.0, 5.0, 1.0, 1),
                StepStats::uniform("c", 1, 1.0, 1.0, 1.0, 1),
            ],
            vec![1; 5],
        );
        // paths: [a,b,c], [b,c]
        assert_eq!(m.path_latency(&paths[0], &window, &place).unwrap(), 6.0 + 8.0 + 3.0);
        assert_eq!(m.path_cost(&paths[0], &window, &place).unwrap(), 2.0 + 8.0 + 3.0);
        let (idx, cost) = m.critical_path(&paths, &window, &place).unwrap().unwrap();
        assert_eq!((idx, cost), (0, 13.0));

        let mut missing = window.clone();
        missing.steps[1] = None;
        assert_eq!(
            m.path_latency(&paths[0], &missing, &place).unwrap_err(),
            CostError::MissingStats("b".into())
        );
    }

    #[test]
    fn activation_is_download_plus_subscribe() {
        let mut w = WorkerProfile::new("w");
        assert_eq!(activation_cost(&w), 0.0);
        w.download_ms = 50.0;
        w.subscribe_ms = 10.0;
        assert_eq!(activation_cost(&w), 60.0);
        w.download_ms = 120.0;
        w.subscribe_ms = 30.0;
        assert_eq!(activation_cost(&w), 150.0);
    }

    #[test]
    fn capacity_validation() {
        let g = graph();
        let ws = vec![WorkerProfile::new("w0").with_capacity(2), WorkerProfile::new("w1")];
        let place = Placement {
            code: vec![0, 0, 0],
            data: vec![0; 5],
        };
        assert!(matches!(
            place.validate(&g, &ws),
            Err(PlacementError::CapacityExceeded { hosted: 3, .. })
        ));
        let ok = Placement {
            code: vec![0, 1, 0],
            data: vec![0; 5],
        };
        assert!(ok.validate(&g, &ws).is_ok());
        let short = Placement {
            code: vec![0, 1],
            data: vec![0; 5],
        };
        assert!(matches!(short.validate(&g, &ws), Err(PlacementError::CodeLength { .. })));
    }
}
