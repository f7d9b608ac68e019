//! CEP flow model: raw sources, steps, and the DAG induced by their
//! publish/subscribe topics.
//!
//! Sources and steps are stored sorted by id, so index order is id order
//! everywhere in the crate. Producers (anything that publishes a topic) share
//! one flat index space: sources first, then steps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Default upper bound on the number of enumerated paths.
pub const DEFAULT_PATH_CAP: usize = 10_000;

/// A publish/subscribe topic name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Topic(pub String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One breakpoint of a piecewise-constant payload size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeChange {
    /// Virtual time (ms) from which `bytes` applies.
    pub at_ms: f64,
    pub bytes: u64,
}

/// A sensor process pinned to the worker it is physically attached to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSource {
    pub id: String,
    pub output_topic: Topic,
    pub bytes_per_event: u64,
    pub period_ms: f64,
    pub home_worker: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub size_schedule: Vec<SizeChange>,
}

impl RawSource {
    /// Payload size of an event emitted at virtual time `t_ms`.
    pub fn bytes_at(&self, t_ms: f64) -> u64 {
        self.size_schedule
            .iter()
            .filter(|c| c.at_ms <= t_ms)
            .max_by(|a, b| a.at_ms.total_cmp(&b.at_ms))
            .map_or(self.bytes_per_event, |c| c.bytes)
    }
}

/// Execution profile of a step on a baseline (cpu_factor 1.0) worker:
/// `fixed_ms + per_byte_ms * input_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    pub fixed_ms: f64,
    #[serde(default)]
    pub per_byte_ms: f64,
}

impl ComputeProfile {
    pub fn baseline_ms(&self, input_bytes: u64) -> f64 {
        self.fixed_ms + self.per_byte_ms * input_bytes as f64
    }
}

/// A CEP step: subscribes to `input_topics`, runs its action, publishes one
/// output topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDef {
    pub id: String,
    pub input_topics: Vec<Topic>,
    pub output_topic: Topic,
    pub compute: ComputeProfile,
    /// Size of each published output datum.
    pub output_bytes: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("flow has no steps")]
    EmptyFlow,
    #[error("node `{0}` has an empty id or topic name")]
    EmptyName(String),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("source `{id}` is invalid: {reason}")]
    InvalidSource { id: String, reason: String },
    #[error("step `{0}` subscribes to no topics")]
    NoInputs(String),
    #[error("step `{step}` subscribes to topic `{topic}` more than once")]
    RepeatedInput { step: String, topic: Topic },
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("step `{step}` subscribes to `{topic}`, which nothing publishes")]
    UnboundTopic { step: String, topic: Topic },
    #[error("topic `{topic}` is published by both `{first}` and `{second}`")]
    DuplicateProducer {
        topic: Topic,
        first: String,
        second: String,
    },
    #[error("path enumeration exceeded the cap of {cap} paths")]
    PathExplosion { cap: usize },
    #[error("flow has {} sinks ({}); exactly one is required", .0.len(), .0.join(", "))]
    AmbiguousSink(Vec<String>),
}

/// Reference to a node that publishes a topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Producer {
    Source(usize),
    Step(usize),
}

/// A simple path of steps from a source-adjacent step to a sink.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowPath {
    /// Step indices, upstream first.
    pub steps: Vec<usize>,
    /// Raw sources feeding the first step.
    pub sources: BTreeSet<usize>,
}

impl FlowPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_ids<'g>(&self, graph: &'g FlowGraph) -> Vec<&'g str> {
        self.steps.iter().map(|&s| graph.steps[s].id.as_str()).collect()
    }
}

/// Validated CEP DAG. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    sources: Vec<RawSource>,
    steps: Vec<StepDef>,
    /// Flat producer index of each step input, aligned with `input_topics`.
    step_inputs: Vec<Vec<usize>>,
    /// Consuming step indices per flat producer index, ascending.
    consumers: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl FlowGraph {
    /// Builds and validates the DAG from topic relations.
    pub fn build(sources: Vec<RawSource>, steps: Vec<StepDef>) -> Result<Self, FlowError> {
        build_flow_graph(sources, steps)
    }

    pub fn sources(&self) -> &[RawSource] {
        &self.sources
    }

    pub fn steps(&self) -> &[StepDef] {
        &self.steps
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_producers(&self) -> usize {
        self.sources.len() + self.steps.len()
    }

    pub fn step(&self, idx: usize) -> &StepDef {
        &self.steps[idx]
    }

    pub fn source(&self, idx: usize) -> &RawSource {
        &self.sources[idx]
    }

    pub fn step_index(&self, id: &str) -> Option<usize> {
        self.steps.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    /// Flat producer index of a step.
    pub fn step_producer(&self, step: usize) -> usize {
        self.sources.len() + step
    }

    /// Flat producer index of a source.
    pub fn source_producer(&self, source: usize) -> usize {
        source
    }

    pub fn producer(&self, flat: usize) -> Producer {
        if flat < self.sources.len() {
            Producer::Source(flat)
        } else {
            Producer::Step(flat - self.sources.len())
        }
    }

    pub fn producer_id(&self, flat: usize) -> &str {
        match self.producer(flat) {
            Producer::Source(i) => &self.sources[i].id,
            Producer::Step(i) => &self.steps[i].id,
        }
    }

    pub fn producer_topic(&self, flat: usize) -> &Topic {
        match self.producer(flat) {
            Producer::Source(i) => &self.sources[i].output_topic,
            Producer::Step(i) => &self.steps[i].output_topic,
        }
    }

    /// Flat producer indices feeding `step`, aligned with its input topics.
    pub fn inputs(&self, step: usize) -> &[usize] {
        &self.step_inputs[step]
    }

    /// Steps subscribed to the output of flat producer `producer`.
    pub fn consumers(&self, producer: usize) -> &[usize] {
        &self.consumers[producer]
    }

    /// Steps in a topological order (ties by id).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Directed producer -> consumer edges as flat producer / step indices.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.consumers
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (p, c)))
            .collect()
    }

    /// Steps without consumers.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.steps.len())
            .filter(|&s| self.consumers[self.step_producer(s)].is_empty())
            .collect()
    }

    /// Steps that read at least one raw source directly.
    pub fn source_adjacent(&self) -> Vec<usize> {
        (0..self.steps.len())
            .filter(|&s| self.step_inputs[s].iter().any(|&p| p < self.sources.len()))
            .collect()
    }

    pub fn enumerate_paths(&self) -> Result<Vec<FlowPath>, FlowError> {
        enumerate_paths_capped(self, DEFAULT_PATH_CAP)
    }

    pub fn last_step(&self) -> Result<usize, FlowError> {
        last_step(self)
    }
}

/// Validates sources and steps and builds the producer -> consumer DAG.
pub fn build_flow_graph(
    mut sources: Vec<RawSource>,
    mut steps: Vec<StepDef>,
) -> Result<FlowGraph, FlowError> {
    if steps.is_empty() {
        return Err(FlowError::EmptyFlow);
    }
    sources.sort_by(|a, b| a.id.cmp(&b.id));
    steps.sort_by(|a, b| a.id.cmp(&b.id));

    let mut ids = BTreeSet::new();
    for id in sources.iter().map(|s| &s.id).chain(steps.iter().map(|s| &s.id)) {
        if id.is_empty() {
            return Err(FlowError::EmptyName(id.clone()));
        }
        if !ids.insert(id.as_str()) {
            return Err(FlowError::DuplicateId(id.clone()));
        }
    }
    for src in &sources {
        if src.output_topic.0.is_empty() {
            return Err(FlowError::EmptyName(src.id.clone()));
        }
        let invalid = |reason: &str| FlowError::InvalidSource {
            id: src.id.clone(),
            reason: reason.to_string(),
        };
        if src.bytes_per_event == 0 || src.size_schedule.iter().any(|c| c.bytes == 0) {
            return Err(invalid("bytes per event must be at least 1"));
        }
        if !(src.period_ms > 0.0 && src.period_ms.is_finite()) {
            return Err(invalid("period must be positive"));
        }
        if src.home_worker.is_empty() {
            return Err(invalid("home worker is empty"));
        }
    }

    // topic -> flat producer index
    let n_src = sources.len();
    let mut publisher: BTreeMap<&Topic, usize> = BTreeMap::new();
    let outputs = sources
        .iter()
        .map(|s| (&s.output_topic, &s.id))
        .chain(steps.iter().map(|s| (&s.output_topic, &s.id)));
    for (flat, (topic, id)) in outputs.enumerate() {
        if topic.0.is_empty() {
            return Err(FlowError::EmptyName(id.clone()));
        }
        if let Some(&prev) = publisher.get(topic) {
            let first = if prev < n_src {
                sources[prev].id.clone()
            } else {
                steps[prev - n_src].id.clone()
            };
            return Err(FlowError::DuplicateProducer {
                topic: topic.clone(),
                first,
                second: id.clone(),
            });
        }
        publisher.insert(topic, flat);
    }

    let mut step_inputs = Vec::with_capacity(steps.len());
    let mut consumers = vec![Vec::new(); n_src + steps.len()];
    for (si, step) in steps.iter().enumerate() {
        if step.input_topics.is_empty() {
            return Err(FlowError::NoInputs(step.id.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut inputs = Vec::with_capacity(step.input_topics.len());
        for topic in &step.input_topics {
            if !seen.insert(topic) {
                return Err(FlowError::RepeatedInput {
                    step: step.id.clone(),
                    topic: topic.clone(),
                });
            }
            if *topic == step.output_topic {
                return Err(FlowError::CycleDetected(vec![step.id.clone(), step.id.clone()]));
            }
            let &p = publisher.get(topic).ok_or_else(|| FlowError::UnboundTopic {
                step: step.id.clone(),
                topic: topic.clone(),
            })?;
            inputs.push(p);
            consumers[p].push(si);
        }
        step_inputs.push(inputs);
    }
    for cs in &mut consumers {
        cs.sort_unstable();
    }

    if let Some(cycle) = find_cycle(&steps, &step_inputs, n_src) {
        return Err(FlowError::CycleDetected(cycle));
    }
    let topo = topo_sort(&step_inputs, &consumers, n_src);

    Ok(FlowGraph {
        sources,
        steps,
        step_inputs,
        consumers,
        topo,
    })
}

/// Depth-first search over step -> step edges; returns the node sequence of
/// the first cycle found, closed by repeating its first node.
fn find_cycle(steps: &[StepDef], step_inputs: &[Vec<usize>], n_src: usize) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = steps.len();
    // successor lists over steps only
    let mut succ = vec![Vec::new(); n];
    for (c, inputs) in step_inputs.iter().enumerate() {
        for &p in inputs {
            if p >= n_src {
                succ[p - n_src].push(c);
            }
        }
    }
    for s in &mut succ {
        s.sort_unstable();
    }

    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next successor position)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&next) = succ[node].get(*pos) {
                *pos += 1;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Active;
                        stack.push((next, 0));
                    }
                    Mark::Active => {
                        let start = stack.iter().position(|&(v, _)| v == next).unwrap();
                        let mut cycle: Vec<String> =
                            stack[start..].iter().map(|&(v, _)| steps[v].id.clone()).collect();
                        cycle.push(steps[next].id.clone());
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Kahn's algorithm with a min-heap on step index for a deterministic order.
fn topo_sort(step_inputs: &[Vec<usize>], consumers: &[Vec<usize>], n_src: usize) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = step_inputs.len();
    let mut indegree: Vec<usize> = step_inputs
        .iter()
        .map(|inputs| inputs.iter().filter(|&&p| p >= n_src).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&s| indegree[s] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(s)) = ready.pop() {
        order.push(s);
        for &c in &consumers[n_src + s] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    order
}

/// All simple paths from each source-adjacent step to each sink, sorted
/// lexicographically by step id sequence.
pub fn enumerate_paths(graph: &FlowGraph) -> Result<Vec<FlowPath>, FlowError> {
    enumerate_paths_capped(graph, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_capped(graph: &FlowGraph, cap: usize) -> Result<Vec<FlowPath>, FlowError> {
    let n_src = graph.num_sources();
    let mut paths = Vec::new();
    for start in graph.source_adjacent() {
        let sources: BTreeSet<usize> = graph
            .inputs(start)
            .iter()
            .copied()
            .filter(|&p| p < n_src)
            .collect();
        // explicit stack of (step, next consumer position)
        let mut current = vec![start];
        let mut stack = vec![(start, 0usize)];
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            let next_steps = graph.consumers(graph.step_producer(node));
            if next_steps.is_empty() {
                if paths.len() == cap {
                    return Err(FlowError::PathExplosion { cap });
                }
                paths.push(FlowPath {
                    steps: current.clone(),
                    sources: sources.clone(),
                });
                stack.pop();
                current.pop();
            } else if let Some(&next) = next_steps.get(*pos) {
                *pos += 1;
                current.push(next);
                stack.push((next, 0));
            } else {
                stack.pop();
                current.pop();
            }
        }
    }
    paths.sort();
    Ok(paths)
}

/// The unique sink step ("last event").
pub fn last_step(graph: &FlowGraph) -> Result<usize, FlowError> {
    let sinks = graph.sinks();
    match sinks.as_slice() {
        [only] => Ok(*only),
        _ => Err(FlowError::AmbiguousSink(
            sinks.iter().map(|&s| graph.steps[s].id.clone()).collect(),
        )),
    }
}

/// Shorthands for building flows in tests and generators.
pub mod build {
    use super::*;

    pub fn source(id: &str, topic: &str, home: &str) -> RawSource {
        RawSource {
            id: id.to_string(),
            output_topic: Topic::new(topic),
            bytes_per_event: 64,
            period_ms: 100.0,
            home_worker: home.to_string(),
            size_schedule: Vec::new(),
        }
    }

    pub fn step(id: &str, inputs: &[&str], output: &str) -> StepDef {
        StepDef {
            id: id.to_string(),
            input_topics: inputs.iter().map(|t| Topic::new(*t)).collect(),
            output_topic: Topic::new(output),
            compute: ComputeProfile {
                fixed_ms: 1.0,
                per_byte_ms: 0.0,
            },
            output_bytes: 16,
            label: String::new(),
        }
    }

    /// `layers` layers of `width` steps, each step subscribed to every step
    /// of the previous layer; the first layer reads one source per step.
    pub fn layered(layers: usize, width: usize, workers: usize) -> (Vec<RawSource>, Vec<StepDef>) {
        let sources = (0..width)
            .map(|i| {
                source(
                    &format!("r{i:02}"),
                    &format!("raw{i:02}"),
                    &format!("w{:02}", i % workers.max(1)),
                )
            })
            .collect();
        let mut steps = Vec::new();
        for l in 0..layers {
            for i in 0..width {
                let inputs: Vec<String> = if l == 0 {
                    vec![format!("raw{i:02}")]
                } else {
                    (0..width).map(|j| format!("t{:02}_{j:02}", l - 1)).collect()
                };
                let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
                steps.push(step(&format!("s{l:02}_{i:02}"), &refs, &format!("t{l:02}_{i:02}")));
            }
        }
        (sources, steps)
    }
}
