//! Human-editable TOML scenario files.
//!
//! ```toml
//! [run]
//! strategy = "CP"
//! seed = 1
//! eval_period_ms = 30000.0
//! run_duration_ms = 300000.0
//!
//! [params]
//! alpha = 3.0
//! beta = 3.0
//! device_change_penalty = 1.25
//! solver_time_limit_ms = 10000
//!
//! [[workers]]
//! id = "w1"
//! cpu_factor = 1.0
//! code_capacity = 2
//! base_read_ms = 2.0
//! base_write_ms = 2.0
//!
//! [[sources]]
//! id = "speed"
//! output_topic = "raw.speed"
//! bytes_per_event = 16
//! period_ms = 100.0
//! home_worker = "w1"
//!
//! [[steps]]
//! id = "s01"
//! input_topics = ["raw.speed"]
//! output_topic = "motion"
//! output_bytes = 64
//! compute = { fixed_ms = 2.0 }
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{CostParams, WorkerProfile};
use crate::flow::{FlowError, RawSource, StepDef};
use crate::sim::{ScenarioConfig, SimError, DEFAULT_BANDWIDTH_MB_S, DEFAULT_EVAL_PERIOD_MS, DEFAULT_RUN_DURATION_MS};
use crate::solvers::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval")]
    pub eval_period_ms: f64,
    #[serde(default = "default_duration")]
    pub run_duration_ms: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_mb_s: f64,
    #[serde(default)]
    pub exec_jitter: f64,
}

fn default_eval() -> f64 {
    DEFAULT_EVAL_PERIOD_MS
}

fn default_duration() -> f64 {
    DEFAULT_RUN_DURATION_MS
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH_MB_S
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub run: RunSection,
    #[serde(default)]
    pub params: CostParams,
    pub workers: Vec<WorkerProfile>,
    pub sources: Vec<RawSource>,
    pub steps: Vec<StepDef>,
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        ScenarioConfig {
            sources: f.sources,
            steps: f.steps,
            workers: f.workers,
            params: f.params,
            strategy: f.run.strategy,
            eval_period_ms: f.run.eval_period_ms,
            run_duration_ms: f.run.run_duration_ms,
            seed: f.run.seed,
            bandwidth_mb_s: f.run.bandwidth_mb_s,
            exec_jitter: f.run.exec_jitter,
        }
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        ScenarioFile {
            run: RunSection {
                strategy: c.strategy,
                seed: c.seed,
                eval_period_ms: c.eval_period_ms,
                run_duration_ms: c.run_duration_ms,
                bandwidth_mb_s: c.bandwidth_mb_s,
                exec_jitter: c.exec_jitter,
            },
            params: c.params.clone(),
            workers: c.workers.clone(),
            sources: c.sources.clone(),
            steps: c.steps.clone(),
        }
    }
}

/// Parse or validation failure, located as precisely as the input allows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    /// 1-based line, when known.
    pub line: Option<usize>,
    /// Offending field or entry, when known.
    pub field: Option<String>,
    pub message: String,
    /// The underlying failure is a flow cycle, a capacity issue and so on,
    /// rather than malformed text.
    pub semantic: bool,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.field) {
            (Some(l), Some(field)) => write!(f, "line {l}, {field}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(field)) => write!(f, "{field}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ScenarioError {
            line,
            field: None,
            message: e.message().to_string(),
            semantic: false,
        }
    })?;
    let config = ScenarioConfig::from(file);
    if let Err(e) = config.validate() {
        return Err(locate(text, &config, e));
    }
    Ok(config)
}

/// Renders a scenario back to TOML; `parse_scenario` inverts it.
pub fn render_scenario(config: &ScenarioConfig) -> Result<String, toml::ser::Error> {
    toml::to_string(&ScenarioFile::from(config))
}

/// Attaches a line and entry name to a validation error by finding the
/// first quoted id the message mentions.
fn locate(text: &str, config: &ScenarioConfig, err: SimError) -> ScenarioError {
    let message = err.to_string();
    let mut field = None;
    let mut line = None;
    let entries = config
        .workers
        .iter()
        .enumerate()
        .map(|(i, w)| (format!("workers[{i}]"), &w.id))
        .chain(
            config
                .sources
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("sources[{i}]"), &s.id)),
        )
        .chain(config.steps.iter().enumerate().map(|(i, s)| (format!("steps[{i}]"), &s.id)));
    let cycle_head = match &err {
        SimError::Flow(FlowError::CycleDetected(ids)) => ids.first().cloned(),
        _ => None,
    };
    for (name, id) in entries {
        let hit = match &cycle_head {
            Some(head) => head == id,
            None => message.contains(&format!("`{id}`")),
        };
        if hit {
            let needle = format!("\"{id}\"");
            line = text
                .lines()
                .position(|l| l.trim_start().starts_with("id") && l.contains(&needle))
                .map(|i| i + 1);
            field = Some(name);
            break;
        }
    }
    if field.is_none() {
        for key in ["eval_period_ms", "run_duration_ms", "bandwidth_mb_s", "exec_jitter", "alpha", "beta"] {
            if message.contains(key) {
                field = Some(key.to_string());
                line = text.lines().position(|l| l.trim_start().starts_with(key)).map(|i| i + 1);
                break;
            }
        }
    }
    ScenarioError {
        line,
        field,
        message,
        semantic: true,
    }
}
