//! Placement strategies.
//!
//! Every strategy consumes a [`SolveRequest`] and returns a placement that
//! assigns each step to exactly one worker, each producer's output to exactly
//! one worker, and keeps per-worker step counts within capacity.
//!
//! The optimizing strategies minimize the maximum path cost, where a step
//! relocated away from its previous worker has its cost multiplied by the
//! device-change penalty. Ties on the maximum are broken by the sum of all
//! path costs.

mod exact;
mod ga;
mod heuristics;
mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::{latency_from_terms, CostParams, Placement, StatsWindow, StepStats, WorkerProfile};
use crate::flow::{FlowGraph, FlowPath};

pub use exact::solve_exact;
pub use ga::{ga_fitness, solve_ga, solve_ga_traced, GaConfig, GaTrace};
pub(crate) use heuristics::keep_previous;
pub use heuristics::{solve_crrb, solve_local, solve_random, LOCAL_CAPACITY};
pub use oracle::{brute_force_oracle, ORACLE_MAX_ASSIGNMENTS};

/// Inputs of one placement decision.
#[derive(Debug, Clone, Copy)]
pub struct SolveRequest<'a> {
    pub graph: &'a FlowGraph,
    pub paths: &'a [FlowPath],
    pub stats: &'a StatsWindow,
    pub workers: &'a [WorkerProfile],
    pub params: &'a CostParams,
    pub previous: Option<&'a Placement>,
    pub seed: u64,
}

impl SolveRequest<'_> {
    fn total_capacity(&self) -> usize {
        self.workers.iter().map(|w| w.code_capacity).sum()
    }

    fn check_capacity(&self) -> Result<(), SolveError> {
        if self.workers.is_empty() {
            return Err(SolveError::Infeasible("no workers available".into()));
        }
        let cap = self.total_capacity();
        if cap < self.graph.num_steps() {
            return Err(SolveError::Infeasible(format!(
                "total code capacity {cap} cannot host {} steps",
                self.graph.num_steps()
            )));
        }
        Ok(())
    }

    /// Worker index of a source's home device (first worker if unknown).
    fn home_worker(&self, source: usize) -> usize {
        let home = &self.graph.source(source).home_worker;
        self.workers.iter().position(|w| &w.id == home).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Proven optimal for the min-max objective.
    Optimal,
    /// Best incumbent when the time or node budget ran out.
    FeasibleTimeLimit,
    /// Valid placement from a heuristic, no optimality claim.
    Feasible,
    Infeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Optimal => "Optimal",
            Self::FeasibleTimeLimit => "FeasibleTimeLimit",
            Self::Feasible => "Feasible",
            Self::Infeasible => "Infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub placement: Placement,
    /// Maximum (penalized) path cost under `placement`.
    pub objective: f64,
    /// Sum of (penalized) path costs, the tie-breaker.
    pub total_cost: f64,
    pub status: SolveStatus,
    pub elapsed_ms: u64,
    /// Wall time until the first feasible placement was known.
    pub first_feasible_ms: u64,
    /// Search nodes (exact solver) or fitness evaluations (GA).
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("instance too large for exhaustive search ({assignments} assignments)")]
    InstanceTooLarge { assignments: f64 },
    #[error("no statistics for step `{0}`")]
    MissingStats(String),
}

/// Placement strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "CP")]
    Cp,
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "CRRB")]
    Crrb,
    #[serde(rename = "RANDOM")]
    Random,
    #[serde(rename = "LOCAL")]
    Local,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Self::Cp, Self::Ga, Self::Crrb, Self::Random, Self::Local];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cp => "CP",
            Self::Ga => "GA",
            Self::Crrb => "CRRB",
            Self::Random => "RANDOM",
            Self::Local => "LOCAL",
        }
    }

    /// Report label; CP carries its penalty, e.g. `CP_1_25`.
    pub fn label(self, penalty: f64) -> String {
        match self {
            Self::Cp => {
                let p = if penalty.fract() == 0.0 {
                    format!("{penalty:.1}")
                } else {
                    format!("{penalty}")
                };
                format!("CP_{}", p.replace('.', "_"))
            }
            other => other.name().to_string(),
        }
    }

    pub fn solve(self, req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
        match self {
            Self::Cp => solve_exact(req),
            Self::Ga => solve_ga(req),
            Self::Crrb => solve_crrb(req),
            Self::Random => solve_random(req),
            Self::Local => solve_local(req),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CP" => Ok(Self::Cp),
            "GA" => Ok(Self::Ga),
            "CRRB" => Ok(Self::Crrb),
            "RANDOM" => Ok(Self::Random),
            "LOCAL" => Ok(Self::Local),
            _ => Err(format!("unknown strategy `{s}` (expected CP, GA, CRRB, RANDOM or LOCAL)")),
        }
    }
}

/// Min-max objective value with its sum tie-breaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub max: f64,
    pub sum: f64,
}

impl Score {
    pub const WORST: Score = Score {
        max: f64::INFINITY,
        sum: f64::INFINITY,
    };

    /// Strict lexicographic improvement.
    pub fn better_than(&self, other: &Score) -> bool {
        self.max < other.max || (self.max == other.max && self.sum < other.sum)
    }
}

/// Dense, solver-side view of the objective.
pub(crate) struct Evaluator<'a> {
    pub graph: &'a FlowGraph,
    pub paths: &'a [FlowPath],
    pub workers: &'a [WorkerProfile],
    pub stats: Vec<&'a StepStats>,
    pub alpha: f64,
    pub beta: f64,
    pub penalty: f64,
    pub prev_code: Option<&'a [usize]>,
}

impl<'a> Evaluator<'a> {
    pub fn new(req: &SolveRequest<'a>) -> Result<Self, SolveError> {
        let stats = (0..req.graph.num_steps())
            .map(|s| {
                req.stats
                    .get(s)
                    .ok_or_else(|| SolveError::MissingStats(req.graph.step(s).id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let prev_code = req
            .previous
            .filter(|p| p.code.len() == req.graph.num_steps())
            .map(|p| p.code.as_slice());
        Ok(Self {
            graph: req.graph,
            paths: req.paths,
            workers: req.workers,
            stats,
            alpha: req.params.alpha,
            beta: req.params.beta,
            penalty: req.params.device_change_penalty,
            prev_code,
        })
    }

    /// Cost of step `s` executing on `worker`; `None` data locations are
    /// treated as colocated, which makes the value a lower bound.
    #[inline]
    pub fn step_cost(&self, s: usize, worker: usize, input_data: &[Option<usize>], own_data: Option<usize>) -> f64 {
        let stats = self.stats[s];
        let inputs = self.graph.inputs(s);
        let lat = latency_from_terms(
            stats,
            |k| input_data[inputs[k]].is_some_and(|d| d != worker),
            own_data.is_some_and(|d| d != worker),
            self.workers[worker].cpu_factor,
            self.alpha,
            self.beta,
        );
        let cost = lat / stats.cost_bytes();
        if self.relocated(s, worker) {
            cost * self.penalty
        } else {
            cost
        }
    }

    #[inline]
    pub fn relocated(&self, s: usize, worker: usize) -> bool {
        self.prev_code.is_some_and(|p| p[s] != worker)
    }

    /// Max and sum over paths of per-step costs.
    pub fn score_from_costs(&self, costs: &[f64]) -> Score {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for path in self.paths {
            let c = path.steps.iter().fold(0.0, |acc, &s| acc + costs[s]);
            if c > max {
                max = c;
            }
            sum += c;
        }
        if self.paths.is_empty() {
            max = 0.0;
        }
        Score { max, sum }
    }

    pub fn score(&self, placement: &Placement) -> Score {
        let data: Vec<Option<usize>> = placement.data.iter().copied().map(Some).collect();
        let costs: Vec<f64> = (0..self.graph.num_steps())
            .map(|s| self.step_cost(s, placement.code[s], &data, data[self.graph.step_producer(s)]))
            .collect();
        self.score_from_costs(&costs)
    }

    pub fn feasible(&self, placement: &Placement) -> bool {
        placement
            .loads(self.workers.len())
            .iter()
            .zip(self.workers)
            .all(|(&l, w)| l <= w.code_capacity)
    }
}

pub(crate) fn elapsed_ms(start: std::time::Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Small instances shared by solver tests.
    use super::*;
    use crate::flow::build::{source, step};

    pub struct Instance {
        pub graph: FlowGraph,
        pub paths: Vec<FlowPath>,
        pub stats: StatsWindow,
        pub workers: Vec<WorkerProfile>,
        pub params: CostParams,
        pub previous: Option<Placement>,
    }

    impl Instance {
        pub fn new(graph: FlowGraph, stats: Vec<StepStats>, workers: Vec<WorkerProfile>, params: CostParams) -> Self {
            let paths = graph.enumerate_paths().unwrap();
            let producer_bytes = vec![1; graph.num_producers()];
            Self {
                graph,
                paths,
                stats: StatsWindow::new(stats, producer_bytes),
                workers,
                params,
                previous: None,
            }
        }

        pub fn req(&self, seed: u64) -> SolveRequest<'_> {
            SolveRequest {
                graph: &self.graph,
                paths: &self.paths,
                stats: &self.stats,
                workers: &self.workers,
                params: &self.params,
                previous: self.previous.as_ref(),
                seed,
            }
        }
    }

    pub fn workers(n: usize, capacity: usize) -> Vec<WorkerProfile> {
        (0..n)
            .map(|i| WorkerProfile::new(format!("w{}", i + 1)).with_capacity(capacity))
            .collect()
    }

    /// source -> a -> b with symmetric stats.
    pub fn two_step_chain(alpha: f64, beta: f64) -> Instance {
        let graph = FlowGraph::build(
            vec![source("r", "t0", "w1")],
            vec![step("a", &["t0"], "t1"), step("b", &["t1"], "t2")],
        )
        .unwrap();
        let stats = vec![
            StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 10),
            StepStats::uniform("b", 1, 2.0, 3.0, 1.0, 10),
        ];
        let params = CostParams {
            alpha,
            beta,
            ..CostParams::default()
        };
        Instance::new(graph, stats, workers(2, 2), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_penalty() {
        assert_eq!(Strategy::Cp.label(1.25), "CP_1_25");
        assert_eq!(Strategy::Cp.label(1.0), "CP_1_0");
        assert_eq!(Strategy::Cp.label(2.0), "CP_2_0");
        assert_eq!(Strategy::Cp.label(1.5), "CP_1_5");
        assert_eq!(Strategy::Ga.label(1.25), "GA");
        assert_eq!("random".parse::<Strategy>().unwrap(), Strategy::Random);
        assert!("foo".parse::<Strategy>().is_err());
    }

    #[test]
    fn score_ordering() {
        let a = Score { max: 1.0, sum: 5.0 };
        let b = Score { max: 1.0, sum: 4.0 };
        let c = Score { max: 0.5, sum: 9.0 };
        assert!(b.better_than(&a));
        assert!(!a.better_than(&b));
        assert!(c.better_than(&b));
        assert!(!a.better_than(&a));
    }
}
