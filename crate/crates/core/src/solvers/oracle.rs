//! Exhaustive reference solver for small instances.

use std::time::Instant;

use super::{elapsed_ms, Score, SolveError, SolveRequest, SolveResult, SolveStatus};
use crate::cost::{CostModel, Placement};

/// Largest `workers^(steps + producers)` the oracle will enumerate.
pub const ORACLE_MAX_ASSIGNMENTS: f64 = 1e7;

/// Enumerates every (code, data) assignment and returns the optimum of the
/// same min-max objective as the exact solver. Scores are computed through
/// [`CostModel`], not the solver's evaluator.
pub fn brute_force_oracle(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    let g = req.graph;
    let n_workers = req.workers.len();
    if n_workers == 0 {
        return Err(SolveError::Infeasible("no workers available".into()));
    }
    let n_steps = g.num_steps();
    let n_prod = g.num_producers();
    let assignments = (n_workers as f64).powi((n_steps + n_prod) as i32);
    if assignments > ORACLE_MAX_ASSIGNMENTS {
        return Err(SolveError::InstanceTooLarge { assignments });
    }
    let stats = (0..n_steps)
        .map(|s| req.stats.get(s).ok_or_else(|| SolveError::MissingStats(g.step(s).id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let model = CostModel::new(g, req.workers, req.params);
    let penalty = req.params.device_change_penalty;
    let prev = req.previous.filter(|p| p.code.len() == n_steps);

    let score = |placement: &Placement| -> Score {
        let step_costs: Vec<f64> = (0..n_steps)
            .map(|s| {
                let c = model.step_cost(stats[s], s, placement);
                match prev {
                    Some(p) if p.code[s] != placement.code[s] => c * penalty,
                    _ => c,
                }
            })
            .collect();
        let mut max = if req.paths.is_empty() { 0.0 } else { f64::NEG_INFINITY };
        let mut sum = 0.0;
        for path in req.paths {
            let c = path.steps.iter().fold(0.0, |acc, &s| acc + step_costs[s]);
            max = max.max(c);
            sum += c;
        }
        Score { max, sum }
    };

    let mut best: Option<(Placement, Score)> = None;
    let mut visited = 0u64;
    let mut placement = Placement {
        code: vec![0; n_steps],
        data: vec![0; n_prod],
    };
    loop {
        let loads = placement.loads(n_workers);
        let fits = loads.iter().zip(req.workers).all(|(&l, w)| l <= w.code_capacity);
        if fits {
            placement.data.iter_mut().for_each(|d| *d = 0);
            loop {
                visited += 1;
                let s = score(&placement);
                if best.as_ref().is_none_or(|(_, b)| s.better_than(b)) {
                    best = Some((placement.clone(), s));
                }
                if !advance(&mut placement.data, n_workers) {
                    break;
                }
            }
        }
        if !advance(&mut placement.code, n_workers) {
            break;
        }
    }

    let (placement, s) =
        best.ok_or_else(|| SolveError::Infeasible("no assignment satisfies the capacities".into()))?;
    let ms = elapsed_ms(start);
    Ok(SolveResult {
        placement,
        objective: s.max,
        total_cost: s.sum,
        status: SolveStatus::Optimal,
        elapsed_ms: ms,
        first_feasible_ms: ms,
        nodes: visited,
    })
}

/// Odometer increment over base `radix`; false once it wraps.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{two_step_chain, workers, Instance};
    use super::*;
    use crate::cost::{CostParams, StepStats};
    use crate::flow::build::{source, step};
    use crate::flow::FlowGraph;

    #[test]
    fn single_step_single_worker() {
        let graph = FlowGraph::build(vec![source("r", "t0", "w1")], vec![step("a", &["t0"], "t1")]).unwrap();
        let inst = Instance::new(
            graph,
            vec![StepStats::uniform("a", 1, 2.0, 3.0, 1.0, 3)],
            workers(1, 1),
            CostParams::default(),
        );
        let res = brute_force_oracle(&inst.req(0)).unwrap();
        assert_eq!(res.placement.code, vec![0]);
        assert_eq!(res.placement.data, vec![0, 0]);
        assert_eq!(res.objective, 2.0);
        assert_eq!(res.nodes, 1);
    }

    #[test]
    fn enumerates_full_space() {
        // 2^2 code x 2^3 data
        let inst = two_step_chain(2.0, 2.0);
        let res = brute_force_oracle(&inst.req(0)).unwrap();
        assert_eq!(res.nodes, 32);
        assert_eq!(res.objective, 1.2);
    }

    #[test]
    fn infeasible_and_too_large() {
        let mut inst = two_step_chain(2.0, 2.0);
        inst.workers = workers(1, 1);
        assert!(matches!(brute_force_oracle(&inst.req(0)), Err(SolveError::Infeasible(_))));
        inst.workers = vec![];
        assert!(matches!(brute_force_oracle(&inst.req(0)), Err(SolveError::Infeasible(_))));
        inst.workers = workers(30, 2);
        assert!(matches!(
            brute_force_oracle(&inst.req(0)),
            Err(SolveError::InstanceTooLarge { .. })
        ));
    }
}
