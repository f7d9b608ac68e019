//! Genetic algorithm over flat (code, data) genomes.
//!
//! Genome layout: one gene per step (executing worker) followed by one gene
//! per producer (storage worker). Fitness is the inverse of the maximum
//! path cost; genomes that break a capacity limit score 0 and are not
//! repaired.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{elapsed_ms, Evaluator, SolveError, SolveRequest, SolveResult, SolveStatus};
use crate::cost::Placement;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub elites: usize,
    /// Share of the population considered for mutation each generation.
    pub mutation_fraction: f64,
    /// Probability that a considered individual is mutated.
    pub mutation_probability: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 20,
            elites: 5,
            mutation_fraction: 0.25,
            mutation_probability: 0.5,
        }
    }
}

/// Per-generation bookkeeping, mostly for tests and diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaTrace {
    pub best_fitness: Vec<f64>,
    pub invalid: Vec<usize>,
}

type Genome = Vec<usize>;

pub fn solve_ga(req: &SolveRequest<'_>) -> Result<SolveResult, SolveError> {
    solve_ga_traced(req, &GaConfig::default()).map(|(res, _)| res)
}

/// Fitness of a placement as the GA scores it.
pub fn ga_fitness(req: &SolveRequest<'_>, placement: &Placement) -> Result<f64, SolveError> {
    let ev = Evaluator::new(req)?;
    Ok(fitness(&ev, placement))
}

fn fitness(ev: &Evaluator<'_>, placement: &Placement) -> f64 {
    if !ev.feasible(placement) {
        return 0.0;
    }
    let max = ev.score(placement).max;
    if max > 0.0 {
        1.0 / max
    } else {
        f64::MAX
    }
}

fn split(genome: &Genome, n_steps: usize) -> Placement {
    Placement {
        code: genome[..n_steps].to_vec(),
        data: genome[n_steps..].to_vec(),
    }
}

pub fn solve_ga_traced(req: &SolveRequest<'_>, cfg: &GaConfig) -> Result<(SolveResult, GaTrace), SolveError> {
    let start = Instant::now();
    req.check_capacity()?;
    let ev = Evaluator::new(req)?;
    let n_steps = req.graph.num_steps();
    let n_genes = n_steps + req.graph.num_producers();
    let n_workers = req.workers.len();
    let pop_size = cfg.population.max(1);
    let elites = cfg.elites.min(pop_size);
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);

    // capacity-respecting random code genes, uniform data genes
    let slots: Vec<usize> = req
        .workers
        .iter()
        .enumerate()
        .flat_map(|(w, p)| std::iter::repeat_n(w, p.code_capacity))
        .collect();
    let mut population: Vec<Genome> = (0..pop_size)
        .map(|_| {
            let mut genome: Genome = slots.choose_multiple(&mut rng, n_steps).copied().collect();
            genome.extend((n_steps..n_genes).map(|_| rng.gen_range(0..n_workers)));
            genome
        })
        .collect();

    let mut trace = GaTrace::default();
    let mut best: Option<(Genome, f64)> = None;
    let mut evaluations = 0u64;
    let mut first_feasible_ms = None;

    for gen in 0..cfg.generations.max(1) {
        let fit: Vec<f64> = population.iter().map(|g| fitness(&ev, &split(g, n_steps))).collect();
        evaluations += fit.len() as u64;

        let mut order: Vec<usize> = (0..pop_size).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
        let top = order[0];
        trace.best_fitness.push(fit[top]);
        trace.invalid.push(fit.iter().filter(|&&f| f == 0.0).count());
        if fit[top] > 0.0 {
            first_feasible_ms.get_or_insert_with(|| elapsed_ms(start));
            if best.as_ref().is_none_or(|(_, f)| fit[top] > *f) {
                best = Some((population[top].clone(), fit[top]));
            }
        }
        if gen + 1 == cfg.generations.max(1) {
            break;
        }

        let mut next: Vec<Genome> = order[..elites].iter().map(|&i| population[i].clone()).collect();
        let tournament = |rng: &mut ChaCha8Rng| {
            let a = rng.gen_range(0..pop_size);
            let b = rng.gen_range(0..pop_size);
            if fit[b] > fit[a] {
                b
            } else {
                a
            }
        };
        while next.len() < pop_size {
            let pa = &population[tournament(&mut rng)];
            let pb = &population[tournament(&mut rng)];
            let child: Genome = pa
                .iter()
                .zip(pb)
                .map(|(&a, &b)| if rng.gen_bool(0.5) { a } else { b })
                .collect();
            next.push(child);
        }

        let children = pop_size - elites;
        let considered = ((pop_size as f64 * cfg.mutation_fraction).round() as usize).min(children);
        for i in index::sample(&mut rng, children, considered) {
            if rng.gen_bool(cfg.mutation_probability) {
                let gene = rng.gen_range(0..n_genes);
                next[elites + i][gene] = rng.gen_range(0..n_workers);
            }
        }
        population = next;
    }

    let (genome, _) = best.ok_or_else(|| SolveError::Infeasible("no individual satisfied the capacities".into()))?;
    let placement = split(&genome, n_steps);
    let score = ev.score(&placement);
    let result = SolveResult {
        placement,
        objective: score.max,
        total_cost: score.sum,
        status: SolveStatus::Feasible,
        elapsed_ms: elapsed_ms(start),
        first_feasible_ms: first_feasible_ms.unwrap_or(0),
        nodes: evaluations,
    };
    Ok((result, trace))
}
