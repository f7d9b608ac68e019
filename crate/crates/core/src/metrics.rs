//! Run reports derived from the simulator's event log, and cross-run
//! comparison tables.
//!
//! Every figure in a [`MetricsReport`] is computed from the log alone, over
//! the measured interval `[first evaluation, end of run)`; the first window
//! runs the initial round-robin placement and is treated as warm-up.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::flow::{last_step, FlowError, FlowGraph};
use crate::sim::LogRecord;
use crate::solvers::SolveStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRate {
    pub steps: Vec<String>,
    /// Sink executions per minute whose provenance covers every path step.
    pub per_min: f64,
    /// Sum over the path's steps of their executions per minute.
    pub step_sum_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub t_ms: f64,
    pub window: usize,
    pub status: SolveStatus,
    pub nodes: u64,
    pub objective: Option<f64>,
    pub code_changes: usize,
    pub data_changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub seed: u64,
    /// Remote read and write penalties of the run, when known.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub measured_from_ms: f64,
    pub measured_to_ms: f64,
    pub paths: Vec<PathRate>,
    pub min_path_per_min: f64,
    pub max_path_per_min: f64,
    pub min_path_step_sum_per_min: f64,
    pub max_path_step_sum_per_min: f64,
    /// Sink executions per minute.
    pub last_event_throughput: f64,
    /// Largest sink completion time minus its oldest raw emission time.
    pub max_raw_delay_ms: f64,
    /// Mean read + execute + write time of the sink.
    pub last_event_exec_ms: f64,
    /// Mean total input-read time of the sink.
    pub last_event_read_ms: f64,
    pub step_executions: BTreeMap<String, u64>,
    pub windows: Vec<WindowSummary>,
    /// Step reassignments summed over all windows.
    pub code_changes: usize,
    pub data_changes: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("event log is empty")]
    EmptyLog,
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub fn build_report(log: &[LogRecord], graph: &FlowGraph, run_duration_ms: f64) -> Result<MetricsReport, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let sink = &graph.step(last_step(graph)?).id;
    let paths = graph.enumerate_paths()?;

    let windows: Vec<WindowSummary> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::EvalTick {
                t,
                window,
                status,
                nodes,
                objective,
                code_changes,
                data_changes,
                ..
            } => Some(WindowSummary {
                t_ms: *t,
                window: *window,
                status: *status,
                nodes: *nodes,
                objective: *objective,
                code_changes: *code_changes,
                data_changes: *data_changes,
            }),
            _ => None,
        })
        .collect();
    let from = windows.first().map_or(0.0, |w| w.t_ms);
    let to = run_duration_ms;
    let minutes = (to - from) / 60_000.0;
    let rate = |n: u64| if minutes > 0.0 { n as f64 / minutes } else { 0.0 };

    let mut step_executions: BTreeMap<String, u64> = graph.steps().iter().map(|s| (s.id.clone(), 0)).collect();
    let mut attributed = vec![0u64; paths.len()];
    let mut sink_runs = 0u64;
    let mut max_delay = 0.0f64;
    let mut exec_sum = 0.0;
    let mut read_sum = 0.0;
    let path_ids: Vec<Vec<&str>> = paths.iter().map(|p| p.step_ids(graph)).collect();

    for rec in log {
        let LogRecord::StepExecute {
            t,
            step,
            inputs,
            exec_ms,
            write_ms,
            oldest_raw_ms,
            chain,
            ..
        } = rec
        else {
            continue;
        };
        if *t < from || *t >= to {
            continue;
        }
        *step_executions.entry(step.clone()).or_default() += 1;
        if step != sink {
            continue;
        }
        sink_runs += 1;
        let chain: BTreeSet<&str> = chain.iter().map(String::as_str).collect();
        for (count, ids) in attributed.iter_mut().zip(&path_ids) {
            if ids.iter().all(|id| chain.contains(id)) {
                *count += 1;
            }
        }
        max_delay = max_delay.max(t - oldest_raw_ms);
        let read: f64 = inputs.iter().map(|i| i.read_ms).sum();
        read_sum += read;
        exec_sum += read + exec_ms + write_ms;
    }

    let path_rates: Vec<PathRate> = path_ids
        .iter()
        .zip(&attributed)
        .map(|(ids, &n)| PathRate {
            steps: ids.iter().map(|s| s.to_string()).collect(),
            per_min: rate(n),
            step_sum_per_min: ids.iter().map(|id| rate(step_executions[*id])).sum(),
        })
        .collect();
    let fold = |f: fn(&PathRate) -> f64| {
        let lo = path_rates.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = path_rates.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if path_rates.is_empty() {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    };
    let (min_path, max_path) = fold(|p| p.per_min);
    let (min_sum, max_sum) = fold(|p| p.step_sum_per_min);
    let mean = |total: f64| if sink_runs > 0 { total / sink_runs as f64 } else { 0.0 };

    Ok(MetricsReport {
        label: String::new(),
        seed: 0,
        alpha: None,
        beta: None,
        measured_from_ms: from,
        measured_to_ms: to,
        paths: path_rates,
        min_path_per_min: min_path,
        max_path_per_min: max_path,
        min_path_step_sum_per_min: min_sum,
        max_path_step_sum_per_min: max_sum,
        last_event_throughput: rate(sink_runs),
        max_raw_delay_ms: max_delay,
        last_event_exec_ms: mean(exec_sum),
        last_event_read_ms: mean(read_sum),
        step_executions,
        code_changes: windows.iter().map(|w| w.code_changes).sum(),
        data_changes: windows.iter().map(|w| w.data_changes).sum(),
        windows,
    })
}

/// Named accessor for one report figure.
pub type MetricFn = fn(&MetricsReport) -> f64;

/// Metric columns of the comparison table, in output order.
pub const COMPARED_METRICS: [(&str, MetricFn); 9] = [
    ("min_path_per_min", |r| r.min_path_per_min),
    ("max_path_per_min", |r| r.max_path_per_min),
    ("min_path_step_sum_per_min", |r| r.min_path_step_sum_per_min),
    ("max_path_step_sum_per_min", |r| r.max_path_step_sum_per_min),
    ("last_event_throughput", |r| r.last_event_throughput),
    ("max_raw_delay_ms", |r| r.max_raw_delay_ms),
    ("last_event_exec_ms", |r| r.last_event_exec_ms),
    ("last_event_read_ms", |r| r.last_event_read_ms),
    ("code_changes", |r| r.code_changes as f64),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

impl ComparisonRow {
    pub fn get(&self, metric: &str) -> MeanStd {
        self.metrics[metric]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Mean and sample standard deviation of every compared metric per label.
pub fn compare_strategies(reports: &BTreeMap<String, Vec<MetricsReport>>) -> Comparison {
    let rows = reports
        .iter()
        .map(|(label, runs)| ComparisonRow {
            label: label.clone(),
            runs: runs.len(),
            metrics: COMPARED_METRICS
                .iter()
                .map(|(name, f)| {
                    let values: Vec<f64> = runs.iter().map(f).collect();
                    (name.to_string(), MeanStd::of(&values))
                })
                .collect(),
        })
        .collect();
    Comparison { rows }
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// One line per label: `label,runs,<metric>_mean,<metric>_std,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string(), "runs".to_string()];
        for (name, _) in COMPARED_METRICS {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone(), row.runs.to_string()];
            for (name, _) in COMPARED_METRICS {
                let m = row.get(name);
                rec.push(m.mean.to_string());
                rec.push(m.std.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn write_json<W: Write>(&self, out: W) -> io::Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::build::{source, step};
    use crate::sim::InputRead;

    fn chain_graph() -> FlowGraph {
        FlowGraph::build(
            vec![source("r", "t0", "w1")],
            vec![step("a", &["t0"], "t1"), step("b", &["t1"], "t2")],
        )
        .unwrap()
    }

    fn exec(t: f64, step: &str, chain: &[&str]) -> LogRecord {
        LogRecord::StepExecute {
            t,
            start: t - 5.0,
            step: step.into(),
            worker: "w1".into(),
            inputs: vec![InputRead {
                producer: "x".into(),
                bytes: 8,
                read_ms: 2.0,
                local_ms: 2.0,
                remote: false,
            }],
            exec_ms: 2.0,
            exec_base_ms: 2.0,
            write_ms: 1.0,
            write_local_ms: 1.0,
            write_remote: false,
            output_bytes: 8,
            oldest_raw_ms: t - 7.0,
            chain: chain.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn sixty_sink_runs_in_a_minute() {
        let graph = chain_graph();
        let log: Vec<LogRecord> = (0..60).map(|i| exec(1000.0 * i as f64 + 10.0, "b", &["a", "b"])).collect();
        let r = build_report(&log, &graph, 60_000.0).unwrap();
        assert_eq!(r.last_event_throughput, 60.0);
        assert_eq!(r.min_path_per_min, 60.0);
        assert_eq!(r.max_path_per_min, 60.0);
        assert_eq!(r.max_raw_delay_ms, 7.0);
        assert_eq!(r.last_event_exec_ms, 5.0);
        assert_eq!(r.last_event_read_ms, 2.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert_eq!(build_report(&[], &chain_graph(), 1.0), Err(MetricsError::EmptyLog));
    }

    #[test]
    fn warm_up_window_is_excluded() {
        let graph = chain_graph();
        let mut log = vec![exec(100.0, "b", &["a", "b"])];
        log.push(LogRecord::EvalTick {
            t: 30_000.0,
            window: 1,
            status: SolveStatus::Feasible,
            nodes: 0,
            objective: None,
            code_changes: 2,
            data_changes: 1,
            code: BTreeMap::new(),
            data: BTreeMap::new(),
        });
        log.push(exec(40_000.0, "b", &["a", "b"]));
        let r = build_report(&log, &graph, 90_000.0).unwrap();
        assert_eq!(r.last_event_throughput, 1.0);
        assert_eq!(r.code_changes, 2);
        assert_eq!(r.windows.len(), 1);
    }

    #[test]
    fn single_report_has_zero_std() {
        let graph = chain_graph();
        let r = build_report(&[exec(10.0, "b", &["a", "b"])], &graph, 60_000.0).unwrap();
        let cmp = compare_strategies(&BTreeMap::from([("CRRB".to_string(), vec![r])]));
        assert!(cmp.rows[0].metrics.values().all(|m| m.std == 0.0));
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,runs,min_path_per_min_mean"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
