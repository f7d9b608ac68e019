mod common;

use std::collections::BTreeMap;

use cepflow_core::cost::{CostParams, StatsWindow, WorkerProfile};
use cepflow_core::flow::build::{source, step};
use cepflow_core::flow::SizeChange;
use cepflow_core::scenario::parse_scenario;
use cepflow_core::sim::testkit::diamond;
use cepflow_core::sim::{collect_window_stats, run_simulation, LogRecord, ScenarioConfig};
use cepflow_core::solvers::{brute_force_oracle, SolveRequest, Strategy};
use common::check_named_placement;

fn vehicle() -> ScenarioConfig {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/smart_vehicle.toml")).unwrap();
    parse_scenario(&text).unwrap()
}

/// The vehicle flow collapsed onto one worker that hosts every step and
/// every datum.
fn single_worker_vehicle() -> ScenarioConfig {
    let mut cfg = vehicle();
    let mut w = cfg.workers[3].clone();
    w.id = "solo".into();
    w.code_capacity = cfg.steps.len();
    cfg.workers = vec![w];
    for s in &mut cfg.sources {
        s.home_worker = "solo".into();
    }
    cfg.strategy = Strategy::Crrb;
    cfg.exec_jitter = 0.0;
    cfg.run_duration_ms = 60_000.0;
    cfg
}

#[test]
fn single_worker_latencies_follow_the_model() {
    let cfg = single_worker_vehicle();
    let w = &cfg.workers[0];
    let out = run_simulation(&cfg).unwrap();
    let mut seen = 0;
    for rec in &out.log {
        let LogRecord::StepExecute {
            t,
            start,
            step,
            inputs,
            write_ms,
            write_remote,
            output_bytes,
            ..
        } = rec
        else {
            continue;
        };
        let def = cfg.steps.iter().find(|s| &s.id == step).unwrap();
        let in_bytes: u64 = inputs.iter().map(|i| i.bytes).sum();
        let read: f64 = inputs.iter().map(|i| w.local_read_ms(i.bytes)).sum();
        let exec = def.compute.baseline_ms(in_bytes) / w.cpu_factor;
        let write = w.local_write_ms(*output_bytes);
        assert!(inputs.iter().all(|i| !i.remote) && !write_remote);
        assert!((write_ms - write).abs() <= 1e-9);
        assert!((t - start - (read + exec + write)).abs() <= 1e-9, "{step}: {} vs {}", t - start, read + exec + write);
        seen += 1;
    }
    assert!(seen > 1000);
}

#[test]
fn remote_reads_cost_alpha_times_local() {
    // round robin over two workers: a, c on w1 and b, d on w2
    let mut cfg = diamond(2);
    cfg.params.alpha = 2.75;
    let out = run_simulation(&cfg).unwrap();
    let mut remote = 0;
    for rec in &out.log {
        let LogRecord::StepExecute { inputs, worker, .. } = rec else { continue };
        let w = cfg.workers.iter().find(|p| &p.id == worker).unwrap();
        for i in inputs {
            assert!((i.local_ms - w.local_read_ms(i.bytes)).abs() <= 1e-9);
            let expected = if i.remote { 2.75 * i.local_ms } else { i.local_ms };
            assert!((i.read_ms - expected).abs() <= 1e-9);
            remote += usize::from(i.remote);
        }
    }
    assert!(remote > 100);
}

#[test]
fn executions_never_outnumber_their_inputs() {
    let cfg = vehicle();
    let out = run_simulation(&cfg).unwrap();
    let mut produced: BTreeMap<String, u64> = BTreeMap::new();
    let topic_of: BTreeMap<String, String> = cfg
        .sources
        .iter()
        .map(|s| (s.output_topic.0.clone(), s.id.clone()))
        .chain(cfg.steps.iter().map(|s| (s.output_topic.0.clone(), s.id.clone())))
        .collect();
    for rec in &out.log {
        match rec {
            LogRecord::SensorEmit { source, .. } => *produced.entry(source.clone()).or_default() += 1,
            LogRecord::StepExecute { step, .. } => *produced.entry(step.clone()).or_default() += 1,
            _ => {}
        }
    }
    for s in &cfg.steps {
        let runs = produced.get(&s.id).copied().unwrap_or(0);
        for t in &s.input_topics {
            let upstream = produced.get(&topic_of[&t.0]).copied().unwrap_or(0);
            assert!(runs <= upstream, "{} ran {runs} times on {upstream} inputs", s.id);
        }
    }
}

#[test]
fn raw_delay_covers_the_slowest_path() {
    let cfg = vehicle();
    let graph = cfg.validate().unwrap();
    let fastest_cpu = cfg.workers.iter().map(|w| w.cpu_factor).fold(0.0, f64::max);
    let min_read = cfg.workers.iter().map(|w| w.base_read_ms).fold(f64::INFINITY, f64::min);
    let min_write = cfg.workers.iter().map(|w| w.base_write_ms).fold(f64::INFINITY, f64::min);
    let floor: Vec<f64> = cfg
        .steps
        .iter()
        .map(|s| {
            s.input_topics.len() as f64 * min_read + s.compute.fixed_ms * (1.0 - cfg.exec_jitter) / fastest_cpu + min_write
        })
        .collect();
    let slowest = graph
        .enumerate_paths()
        .unwrap()
        .iter()
        .map(|p| p.steps.iter().map(|&s| floor[s]).sum::<f64>())
        .fold(0.0, f64::max);
    let sink = &graph.step(graph.last_step().unwrap()).id;
    let out = run_simulation(&cfg).unwrap();
    let mut n = 0;
    for rec in &out.log {
        if let LogRecord::StepExecute {
            t, step, oldest_raw_ms, ..
        } = rec
        {
            if step == sink {
                assert!(t - oldest_raw_ms >= slowest, "{} < {slowest}", t - oldest_raw_ms);
                n += 1;
            }
        }
    }
    assert!(n > 0);
}

#[test]
fn nothing_runs_during_a_blackout() {
    let mut cfg = vehicle();
    cfg.params.device_change_penalty = 1.0;
    for seed in 1..=3 {
        cfg.seed = seed;
        let out = run_simulation(&cfg).unwrap();
        let mut migrations = 0;
        for rec in &out.log {
            let LogRecord::MigrationComplete { t, step, blackout_ms, .. } = rec else { continue };
            migrations += 1;
            let begin = t - blackout_ms;
            let during = out.log.iter().filter(|r| {
                matches!(r, LogRecord::StepExecute { step: s, start, .. } if s == step && *start > begin && *start < *t)
            });
            assert_eq!(during.count(), 0, "{step} ran between {begin} and {t}");
        }
        assert!(migrations > 0);
    }
}

#[test]
fn placements_stay_within_capacity() {
    let cfg = vehicle();
    let graph = cfg.validate().unwrap();
    for strategy in Strategy::ALL {
        let mut cfg = cfg.clone();
        cfg.strategy = strategy;
        cfg.run_duration_ms = 120_000.0;
        let out = run_simulation(&cfg).unwrap();
        for rec in &out.log {
            if let LogRecord::EvalTick { code, data, .. } = rec {
                check_named_placement(code, data, &graph, &cfg.workers).unwrap();
            }
        }
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let mut cfg = vehicle();
    cfg.run_duration_ms = 90_000.0;
    for strategy in [Strategy::Cp, Strategy::Ga, Strategy::Random] {
        cfg.strategy = strategy;
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.report, b.report);
    }
}

/// Diamond whose heavy branch `c` also reads a second sensor. Growing that
/// sensor's payload makes `c` cheap per byte, so the one fast slot should
/// pass from `c` to `b`.
fn growing_diamond() -> ScenarioConfig {
    let mut r1 = source("r1", "raw1", "w1");
    let mut r2 = source("r2", "raw2", "w1");
    r1.period_ms = 1000.0;
    r2.period_ms = 1000.0;
    r2.size_schedule = vec![SizeChange {
        at_ms: 30_000.0,
        bytes: 65_536,
    }];
    let mut steps = vec![
        step("a", &["raw1"], "ta"),
        step("b", &["ta"], "tb"),
        step("c", &["ta", "raw2"], "tc"),
        step("d", &["tb", "tc"], "td"),
    ];
    steps[1].compute.fixed_ms = 20.0;
    steps[2].compute.fixed_ms = 200.0;
    ScenarioConfig {
        sources: vec![r1, r2],
        steps,
        workers: vec![
            WorkerProfile::new("w1"),
            WorkerProfile::new("w2").with_capacity(1).with_cpu(4.0),
            WorkerProfile::new("w3"),
        ],
        params: CostParams {
            device_change_penalty: 1.0,
            ..CostParams::default()
        },
        strategy: Strategy::Cp,
        eval_period_ms: 10_000.0,
        run_duration_ms: 60_000.0,
        seed: 1,
        bandwidth_mb_s: 10.0,
        exec_jitter: 0.0,
    }
}

#[test]
fn payload_growth_moves_the_fast_slot() {
    let cfg = growing_diamond();
    let graph = cfg.validate().unwrap();
    let paths = graph.enumerate_paths().unwrap();
    let out = run_simulation(&cfg).unwrap();

    let window = |from: f64, to: f64| {
        let recs: Vec<LogRecord> = out
            .log
            .iter()
            .filter(|r| (from..to).contains(&r.time()))
            .cloned()
            .collect();
        collect_window_stats(&graph, &recs, &StatsWindow::default())
    };
    let fast_step = |stats: &StatsWindow| {
        let req = SolveRequest {
            graph: &graph,
            paths: &paths,
            stats,
            workers: &cfg.workers,
            params: &cfg.params,
            previous: None,
            seed: 0,
        };
        let best = brute_force_oracle(&req).unwrap();
        let s = best.placement.code.iter().position(|&w| w == 1).unwrap();
        graph.step(s).id.clone()
    };
    assert_eq!(fast_step(&window(10_000.0, 20_000.0)), "c");
    assert_eq!(fast_step(&window(40_000.0, 50_000.0)), "b");

    let on_fast = |at: f64| {
        out.log
            .iter()
            .find_map(|r| match r {
                LogRecord::EvalTick { t, code, .. } if *t == at => {
                    code.iter().find(|(_, w)| *w == "w2").map(|(s, _)| s.clone())
                }
                _ => None,
            })
            .unwrap()
    };
    assert_eq!(on_fast(20_000.0), "c");
    assert_eq!(on_fast(50_000.0), "b");
}
