//! Exact min-max placement by depth-first branch and bound.
//!
//! Decision variables are each step's executing worker and each producer's
//! storage worker. The bound treats every undecided data location as
//! colocated and every undecided step as running on its cheapest worker with
//! spare capacity; both only lower costs because all penalties are >= 1. It
//! is evaluated through the same arithmetic as the final objective, so a
//! fully decided node's bound is its exact score.
//!
//! Two reductions keep the tree small without losing optimality:
//! - a producer's data only ever needs to sit with its own code or with one
//!   of its consumers; any other worker makes every term remote and is
//!   dominated;
//! - workers with identical speed and capacity that are still untouched
//!   (no code, no data, not the previous home of an undecided step) are
//!   interchangeable, so only one of them is branched on.

use std::time::{Duration, Instant};

use super::{elapsed_ms, Evaluator, Score, SolveError, SolveRequest, SolveResult, SolveStatus};
use crate::cost::Placement;

/// Clock is polled every this many nodes.
const CLOCK_POLL: u64 = 16;

#[derive(Debug, Clone, Copy)]
enum Decision {
    Code(usize),
    Data(usize),
}

struct Search<'r, 'a> {
    req: &'r SolveRequest<'a>,
    ev: &'r Evaluator<'a>,
    caps: Vec<usize>,
    class: Vec<usize>,
    /// `[step][worker]` cost with all I/O colocated.
    local_cost: Vec<Vec<f64>>,
    decisions: Vec<Decision>,
    code: Vec<Option<usize>>,
    data: Vec<Option<usize>>,
    load: Vec<usize>,
    data_count: Vec<usize>,
    /// Undecided steps whose previous worker is this one; only tracked when
    /// relocation is penalized.
    prev_pin: Vec<usize>,
    free_slots: usize,
    undecided_steps: usize,
    costs: Vec<f64>,
    best: Option<(Placement, Score)>,
    nodes: u64,
    start: Instant,
    deadline: Instant,
    node_limit: Option<u64>,
    aborted: bool,
    first_feasible_ms: Option<u64>,
}

/// Branch-and-bound over code and data locations; returns the best incumbent
/// with `FeasibleTimeLimit` when the time or node budget runs out.
pub fn solve_exact(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    req.check_capacity()?;
    let ev = Evaluator::new(req)?;
    let mut search = Search::new(req, &ev, start);
    search.seed_incumbents();
    search.dfs(0);

    let (placement, score) = search
        .best
        .take()
        .ok_or_else(|| SolveError::Infeasible("no placement satisfies the capacities".into()))?;
    let status = if search.aborted {
        SolveStatus::FeasibleTimeLimit
    } else {
        SolveStatus::Optimal
    };
    Ok(SolveResult {
        placement,
        objective: score.max,
        total_cost: score.sum,
        status,
        elapsed_ms: elapsed_ms(start),
        first_feasible_ms: search.first_feasible_ms.unwrap_or_else(|| elapsed_ms(start)),
        nodes: search.nodes,
    })
}

impl<'r, 'a> Search<'r, 'a> {
    fn new(req: &'r SolveRequest<'a>, ev: &'r Evaluator<'a>, start: Instant) -> Self {
        let g = req.graph;
        let n_steps = g.num_steps();
        let n_workers = req.workers.len();
        let caps: Vec<usize> = req.workers.iter().map(|w| w.code_capacity).collect();

        // workers are interchangeable only with an identical speed and capacity
        let mut class = vec![0; n_workers];
        for w in 0..n_workers {
            class[w] = (0..w)
                .find(|&v| {
                    caps[v] == caps[w] && req.workers[v].cpu_factor.to_bits() == req.workers[w].cpu_factor.to_bits()
                })
                .unwrap_or(w);
        }

        let none = vec![None; g.num_producers()];
        let local_cost: Vec<Vec<f64>> = (0..n_steps)
            .map(|s| (0..n_workers).map(|w| ev.step_cost(s, w, &none, None)).collect())
            .collect();

        let mut prev_pin = vec![0; n_workers];
        if ev.penalty != 1.0 {
            if let Some(prev) = ev.prev_code {
                for &w in prev {
                    if w < n_workers {
                        prev_pin[w] += 1;
                    }
                }
            }
        }

        let decisions = decision_order(req);
        let limit = Duration::from_millis(req.params.solver_time_limit_ms);
        Self {
            req,
            ev,
            free_slots: caps.iter().sum(),
            caps,
            class,
            local_cost,
            decisions,
            code: vec![None; n_steps],
            data: vec![None; g.num_producers()],
            load: vec![0; n_workers],
            data_count: vec![0; n_workers],
            prev_pin,
            undecided_steps: n_steps,
            costs: vec![0.0; n_steps],
            best: None,
            nodes: 0,
            start,
            deadline: start + limit,
            node_limit: req.params.solver_node_limit,
            aborted: false,
            first_feasible_ms: None,
        }
    }

    fn offer(&mut self, placement: Placement, score: Score) {
        if self.best.as_ref().is_none_or(|(_, b)| score.better_than(b)) {
            if self.first_feasible_ms.is_none() {
                self.first_feasible_ms = Some(elapsed_ms(self.start));
            }
            self.best = Some((placement, score));
        }
    }

    /// Previous placement (if still valid) and a greedy construction.
    fn seed_incumbents(&mut self) {
        if let Some(prev) = self.req.previous {
            if prev.validate(self.req.graph, self.req.workers).is_ok() {
                let score = self.ev.score(prev);
                self.offer(prev.clone(), score);
            }
        }
        let greedy = self.greedy();
        let score = self.ev.score(&greedy);
        self.offer(greedy, score);
    }

    fn greedy(&self) -> Placement {
        let g = self.req.graph;
        let n_workers = self.req.workers.len();
        let mut load = vec![0; n_workers];
        let mut code = vec![usize::MAX; g.num_steps()];
        let mut guess: Vec<Option<usize>> = vec![None; g.num_producers()];
        for &s in g.topological_order() {
            let mut pick = None;
            for w in 0..n_workers {
                if load[w] >= self.caps[w] {
                    continue;
                }
                let c = self.ev.step_cost(s, w, &guess, None);
                // equal costs go to the emptier worker
                if pick.is_none_or(|(b, best)| c < best || (c == best && load[w] < load[b])) {
                    pick = Some((w, c));
                }
            }
            let (w, _) = pick.expect("total capacity was checked");
            load[w] += 1;
            code[s] = w;
            guess[g.step_producer(s)] = Some(w);
        }
        let data = (0..g.num_producers())
            .map(|p| match guess[p] {
                Some(w) => w,
                None => g
                    .consumers(p)
                    .first()
                    .map_or_else(|| self.req.home_worker(p), |&c| code[c]),
            })
            .collect();
        Placement { code, data }
    }

    fn bound(&mut self) -> Score {
        if self.free_slots < self.undecided_steps {
            return Score::WORST;
        }
        for s in 0..self.code.len() {
            self.costs[s] = match self.code[s] {
                Some(w) => {
                    let own = self.data[self.req.graph.step_producer(s)];
                    self.ev.step_cost(s, w, &self.data, own)
                }
                None => {
                    let mut lb = f64::INFINITY;
                    for (w, &c) in self.local_cost[s].iter().enumerate() {
                        if self.load[w] < self.caps[w] && c < lb {
                            lb = c;
                        }
                    }
                    lb
                }
            };
        }
        self.ev.score_from_costs(&self.costs)
    }

    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if self.node_limit.is_some_and(|n| self.nodes >= n)
            || (self.nodes.is_multiple_of(CLOCK_POLL) && Instant::now() >= self.deadline)
        {
            self.aborted = true;
        }
        self.aborted
    }

    fn fresh(&self, w: usize) -> bool {
        self.load[w] == 0 && self.data_count[w] == 0 && self.prev_pin[w] == 0
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.out_of_budget() {
            return;
        }
        let score = self.bound();
        if let Some((_, best)) = &self.best {
            let prune = score.max > best.max || (score.max == best.max && score.sum >= best.sum);
            if prune {
                return;
            }
        }
        if depth == self.decisions.len() {
            let placement = Placement {
                code: self.code.iter().map(|c| c.unwrap()).collect(),
                data: self.data.iter().map(|d| d.unwrap()).collect(),
            };
            self.offer(placement, score);
            return;
        }

        match self.decisions[depth] {
            Decision::Code(s) => {
                let own = self.req.graph.step_producer(s);
                // cheapest first; among equal costs the emptier worker, so
                // that the first optimum found spreads load
                let mut options: Vec<(f64, usize, usize)> = (0..self.caps.len())
                    .filter(|&w| self.load[w] < self.caps[w])
                    .map(|w| (self.ev.step_cost(s, w, &self.data, self.data[own]), self.load[w], w))
                    .collect();
                options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut tried_fresh = Vec::new();
                let prev = self.ev.prev_code.map(|p| p[s]).filter(|_| self.ev.penalty != 1.0);
                for (_, _, w) in options {
                    if self.fresh(w) {
                        if tried_fresh.contains(&self.class[w]) {
                            continue;
                        }
                        tried_fresh.push(self.class[w]);
                    }
                    self.code[s] = Some(w);
                    self.load[w] += 1;
                    self.free_slots -= 1;
                    self.undecided_steps -= 1;
                    if let Some(pw) = prev {
                        self.prev_pin[pw] -= 1;
                    }
                    self.dfs(depth + 1);
                    if let Some(pw) = prev {
                        self.prev_pin[pw] += 1;
                    }
                    self.undecided_steps += 1;
                    self.free_slots += 1;
                    self.load[w] -= 1;
                    self.code[s] = None;
                    if self.aborted {
                        return;
                    }
                }
            }
            Decision::Data(p) => {
                for d in self.data_candidates(p) {
                    self.data[p] = Some(d);
                    self.data_count[d] += 1;
                    self.dfs(depth + 1);
                    self.data_count[d] -= 1;
                    self.data[p] = None;
                    if self.aborted {
                        return;
                    }
                }
            }
        }
    }

    /// Own worker first (for steps), then consumers' workers ascending.
    fn data_candidates(&self, p: usize) -> Vec<usize> {
        let g = self.req.graph;
        let mut out = Vec::new();
        if p >= g.num_sources() {
            out.push(self.code[p - g.num_sources()].unwrap());
        }
        let mut rest: Vec<usize> = g.consumers(p).iter().map(|&c| self.code[c].unwrap()).collect();
        rest.sort_unstable();
        for w in rest {
            if !out.contains(&w) {
                out.push(w);
            }
        }
        if out.is_empty() {
            out.push(self.req.home_worker(p));
        }
        out
    }
}

/// Steps on many paths first; each producer's data decision follows as soon
/// as its own code and all its consumers are placed.
fn decision_order(req: &SolveRequest<'_>) -> Vec<Decision> {
    let g = req.graph;
    let n_steps = g.num_steps();
    let mut on_paths = vec![0usize; n_steps];
    for path in req.paths {
        for &s in &path.steps {
            on_paths[s] += 1;
        }
    }
    let mut topo_pos = vec![0; n_steps];
    for (i, &s) in g.topological_order().iter().enumerate() {
        topo_pos[s] = i;
    }
    let mut steps: Vec<usize> = (0..n_steps).collect();
    steps.sort_by(|&a, &b| on_paths[b].cmp(&on_paths[a]).then(topo_pos[a].cmp(&topo_pos[b])));

    let mut placed = vec![false; n_steps];
    let mut scheduled = vec![false; g.num_producers()];
    let mut order = Vec::with_capacity(n_steps + g.num_producers());
    let ready = |p: usize, placed: &[bool]| {
        let own = p < g.num_sources() || placed[p - g.num_sources()];
        own && g.consumers(p).iter().all(|&c| placed[c])
    };
    let mut flush = |placed: &[bool], order: &mut Vec<Decision>| {
        for (p, done) in scheduled.iter_mut().enumerate() {
            if !*done && ready(p, placed) {
                *done = true;
                order.push(Decision::Data(p));
            }
        }
    };
    flush(&placed, &mut order);
    for s in steps {
        order.push(Decision::Code(s));
        placed[s] = true;
        flush(&placed, &mut order);
    }
    order
}
