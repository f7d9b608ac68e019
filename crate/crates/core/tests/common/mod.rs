//! Generators and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cepflow_core::cost::{CostParams, Placement, StatsWindow, StepStats, WorkerProfile};
use cepflow_core::flow::build::{source, step};
use cepflow_core::flow::{FlowGraph, RawSource, StepDef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random DAG with `nodes` producers in total, ids shuffled so that id order
/// and creation order disagree.
pub fn random_flow(seed: u64, nodes: usize) -> (Vec<RawSource>, Vec<StepDef>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sources = rng.gen_range(1..=3.min(nodes - 1));
    let mut labels: Vec<usize> = (0..nodes).collect();
    labels.shuffle(&mut rng);
    let mut topics = Vec::new();
    let mut sources = Vec::new();
    let mut steps = Vec::new();
    for (i, label) in labels.into_iter().enumerate() {
        let id = format!("n{label:02}");
        let topic = format!("t_{id}");
        if i < n_sources {
            sources.push(source(&id, &topic, "w1"));
        } else {
            let k = rng.gen_range(1..=3.min(topics.len()));
            let inputs: Vec<&str> = topics.choose_multiple(&mut rng, k).map(String::as_str).collect();
            steps.push(step(&id, &inputs, &topic));
        }
        topics.push(topic);
    }
    (sources, steps)
}

/// Source-to-sink step sequences found by plain recursion over topics.
pub fn oracle_paths(sources: &[RawSource], steps: &[StepDef]) -> Vec<Vec<String>> {
    let source_topics: Vec<&str> = sources.iter().map(|s| s.output_topic.as_str()).collect();
    let readers = |topic: &str| -> Vec<&StepDef> {
        steps
            .iter()
            .filter(|s| s.input_topics.iter().any(|t| t.as_str() == topic))
            .collect()
    };
    fn walk<'a>(
        s: &'a StepDef,
        readers: &dyn Fn(&str) -> Vec<&'a StepDef>,
        path: &mut Vec<String>,
        out: &mut Vec<Vec<String>>,
    ) {
        path.push(s.id.clone());
        let next = readers(s.output_topic.as_str());
        if next.is_empty() {
            out.push(path.clone());
        }
        for n in next {
            walk(n, readers, path, out);
        }
        path.pop();
    }
    let mut out = Vec::new();
    for s in steps {
        if s.input_topics.iter().any(|t| source_topics.contains(&t.as_str())) {
            walk(s, &readers, &mut Vec::new(), &mut out);
        }
    }
    out.sort();
    out
}

/// A small solver instance with random stats, capacities and penalty.
pub struct Instance {
    pub graph: FlowGraph,
    pub stats: StatsWindow,
    pub workers: Vec<WorkerProfile>,
    pub params: CostParams,
    pub previous: Option<Placement>,
}

pub fn random_instance(seed: u64, max_workers: usize, max_steps: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_steps = rng.gen_range(1..=max_steps);
    let n_sources = rng.gen_range(1..=2);
    let (sources, steps) = loop {
        let (so, st) = random_flow(rng.gen(), n_steps + n_sources);
        if so.len() == n_sources {
            break (so, st);
        }
    };
    let n_workers = rng.gen_range(1..=max_workers);
    let cap_total_needed = n_steps;
    let mut workers: Vec<WorkerProfile> = (0..n_workers)
        .map(|i| {
            WorkerProfile::new(format!("w{}", i + 1))
                .with_capacity(rng.gen_range(1..=3))
                .with_cpu(*[0.5, 1.0, 2.0].choose(&mut rng).unwrap())
        })
        .collect();
    while workers.iter().map(|w| w.code_capacity).sum::<usize>() < cap_total_needed {
        let w = rng.gen_range(0..n_workers);
        workers[w].code_capacity += 1;
    }
    let graph = FlowGraph::build(sources, steps).unwrap();
    let stats = (0..graph.num_steps())
        .map(|s| StepStats {
            step: graph.step(s).id.clone(),
            read_ms: (0..graph.inputs(s).len()).map(|_| rng.gen_range(0.1..10.0)).collect(),
            execute_ms: rng.gen_range(0.5..50.0),
            write_ms: rng.gen_range(0.1..5.0),
            bytes: rng.gen_range(1..5000),
            executions: 1,
        })
        .collect();
    let params = CostParams {
        alpha: rng.gen_range(1.0..4.0),
        beta: rng.gen_range(1.0..4.0),
        device_change_penalty: *[1.0, 1.25, 2.0].choose(&mut rng).unwrap(),
        solver_time_limit_ms: 60_000,
        solver_node_limit: None,
    };
    let previous = rng.gen_bool(0.5).then(|| Placement {
        code: (0..graph.num_steps()).map(|_| rng.gen_range(0..n_workers)).collect(),
        data: (0..graph.num_producers()).map(|_| rng.gen_range(0..n_workers)).collect(),
    });
    let producer_bytes = vec![1; graph.num_producers()];
    Instance {
        stats: StatsWindow::new(stats, producer_bytes),
        graph,
        workers,
        params,
        previous,
    }
}

/// Counts per worker id of a named code map, and whether every step is
/// present exactly once.
pub fn check_named_placement(
    code: &BTreeMap<String, String>,
    data: &BTreeMap<String, String>,
    graph: &FlowGraph,
    workers: &[WorkerProfile],
) -> Result<(), String> {
    let step_ids: Vec<&str> = graph.steps().iter().map(|s| s.id.as_str()).collect();
    let keys: Vec<&str> = code.keys().map(String::as_str).collect();
    if keys != step_ids {
        return Err(format!("code keys {keys:?} differ from steps {step_ids:?}"));
    }
    if data.len() != graph.num_producers() {
        return Err(format!("{} data entries for {} producers", data.len(), graph.num_producers()));
    }
    let mut load: BTreeMap<&str, usize> = BTreeMap::new();
    for w in code.values().chain(data.values()) {
        if !workers.iter().any(|p| &p.id == w) {
            return Err(format!("unknown worker `{w}`"));
        }
    }
    for w in code.values() {
        *load.entry(w.as_str()).or_default() += 1;
    }
    for p in workers {
        let n = load.get(p.id.as_str()).copied().unwrap_or(0);
        if n > p.code_capacity {
            return Err(format!("`{}` hosts {n} steps, capacity {}", p.id, p.code_capacity));
        }
    }
    Ok(())
}
