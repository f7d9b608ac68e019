//! Non-optimizing baselines: round robin, balanced random and data locality.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{elapsed_ms, Evaluator, SolveError, SolveRequest, SolveResult, SolveStatus};
use crate::cost::Placement;
use crate::flow::Producer;

/// Per-worker step limit used by the locality heuristic.
pub const LOCAL_CAPACITY: usize = 2;

/// Worker indices ordered by worker id.
fn workers_by_id(req: &SolveRequest<'_>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..req.workers.len()).collect();
    order.sort_by(|&a, &b| req.workers[a].id.cmp(&req.workers[b].id));
    order
}

/// Data colocated with code; source outputs stay on their home device.
fn colocated_data(req: &SolveRequest<'_>, code: &[usize]) -> Vec<usize> {
    let g = req.graph;
    (0..g.num_producers())
        .map(|p| match g.producer(p) {
            Producer::Source(i) => req.home_worker(i),
            Producer::Step(s) => code[s],
        })
        .collect()
}

fn finish(req: &SolveRequest<'_>, placement: Placement, start: Instant) -> SolveResult {
    // Objective is informational here; missing stats at start-up are fine.
    let (objective, total_cost) = match Evaluator::new(req) {
        Ok(ev) => {
            let s = ev.score(&placement);
            (s.max, s.sum)
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    let ms = elapsed_ms(start);
    SolveResult {
        placement,
        objective,
        total_cost,
        status: SolveStatus::Feasible,
        elapsed_ms: ms,
        first_feasible_ms: ms,
        nodes: 0,
    }
}

fn check_loads(req: &SolveRequest<'_>, placement: &Placement, what: &str) -> Result<(), SolveError> {
    for (w, (&load, profile)) in placement.loads(req.workers.len()).iter().zip(req.workers).enumerate() {
        if load > profile.code_capacity {
            return Err(SolveError::Infeasible(format!(
                "{what} puts {load} steps on `{}` (capacity {})",
                req.workers[w].id, profile.code_capacity
            )));
        }
    }
    Ok(())
}

/// Leaves the previous placement untouched.
pub(crate) fn keep_previous(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    let placement = req
        .previous
        .cloned()
        .ok_or_else(|| SolveError::Infeasible("no placement to keep".into()))?;
    Ok(finish(req, placement, start))
}

/// Steps in id order dealt cyclically over workers in id order.
pub fn solve_crrb(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    if req.workers.is_empty() {
        return Err(SolveError::Infeasible("no workers available".into()));
    }
    let code = round_robin(req);
    let placement = Placement {
        data: colocated_data(req, &code),
        code,
    };
    check_loads(req, &placement, "round robin")?;
    Ok(finish(req, placement, start))
}

fn round_robin(req: &SolveRequest<'_>) -> Vec<usize> {
    let order = workers_by_id(req);
    // step indices already follow id order
    (0..req.graph.num_steps()).map(|s| order[s % order.len()]).collect()
}

/// Uniformly random assignment whose per-worker counts differ by at most one.
pub fn solve_random(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    req.check_capacity()?;
    let n_steps = req.graph.num_steps();
    let n_workers = req.workers.len();
    let base = n_steps / n_workers;
    let extra = n_steps % n_workers;
    if req.workers.iter().any(|w| w.code_capacity < base) {
        return Err(SolveError::Infeasible(format!(
            "a balanced split needs {base} slots on every worker"
        )));
    }
    let roomy: Vec<usize> = (0..n_workers).filter(|&w| req.workers[w].code_capacity > base).collect();
    if roomy.len() < extra {
        return Err(SolveError::Infeasible(format!(
            "a balanced split needs {extra} workers with {} slots",
            base + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut slots: Vec<usize> = (0..n_workers).flat_map(|w| std::iter::repeat_n(w, base)).collect();
    slots.extend(index::sample(&mut rng, roomy.len(), extra).into_iter().map(|i| roomy[i]));
    slots.shuffle(&mut rng);
    let placement = Placement {
        data: colocated_data(req, &slots),
        code: slots,
    };
    Ok(finish(req, placement, start))
}

/// Greedy data locality: heavy readers first, each moved next to the bulk of
/// its input, which is then pulled onto the same worker.
pub fn solve_local(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    let g = req.graph;
    let n_steps = g.num_steps();
    let n_workers = req.workers.len();
    if n_workers * LOCAL_CAPACITY < n_steps {
        return Err(SolveError::Infeasible(format!(
            "{n_workers} workers with {LOCAL_CAPACITY} slots cannot host {n_steps} steps"
        )));
    }
    let mut data = match req.previous {
        Some(p) if p.data.len() == g.num_producers() => p.data.clone(),
        _ => colocated_data(req, &round_robin(req)),
    };
    let bytes = |p: usize| req.stats.producer_bytes.get(p).copied().unwrap_or(0);
    let input_bytes = |s: usize| g.inputs(s).iter().map(|&p| bytes(p)).sum::<u64>();

    let mut order: Vec<usize> = (0..n_steps).collect();
    order.sort_by(|&a, &b| input_bytes(b).cmp(&input_bytes(a)).then(a.cmp(&b)));

    let mut code = vec![usize::MAX; n_steps];
    let mut load = vec![0usize; n_workers];
    for s in order {
        let mut share = vec![0u64; n_workers];
        for &p in g.inputs(s) {
            share[data[p]] += bytes(p);
        }
        let w = (0..n_workers)
            .filter(|&w| load[w] < LOCAL_CAPACITY)
            .max_by(|&a, &b| share[a].cmp(&share[b]).then(b.cmp(&a)))
            .expect("capacity checked above");
        code[s] = w;
        load[w] += 1;
        for &p in g.inputs(s) {
            data[p] = w;
        }
    }
    Ok(finish(req, Placement { code, data }, start))
}
