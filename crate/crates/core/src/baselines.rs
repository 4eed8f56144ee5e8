//! Target-conditioned evolutionary baselines (NSGA-II, MOEA/D) over
//! operation-sequence genomes decoded by the shared dispatcher.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::schedule::{dispatch, is_feasible, objectives, ObjectiveVector, Schedule};

/// Guard for relative errors against a zero resilience target.
pub const EPS_R: f64 = 1e-6;

/// `|achieved - target| / max(|target|, EPS_R)`.
pub fn relative_error(achieved: f64, target: f64) -> f64 {
    (achieved - target).abs() / target.abs().max(EPS_R)
}

/// Per-objective relative errors `[C, R]`.
pub fn target_errors(obj: &ObjectiveVector, target: &ObjectiveVector) -> [f64; 2] {
    [relative_error(obj.c_max, target.c_max), relative_error(obj.resilience, target.resilience)]
}

/// Squared relative error to the target plus `penalty` per violation.
pub fn target_fitness(sched: &Schedule, inst: &Instance, target: &ObjectiveVector, penalty: f64) -> Result<f64> {
    let report = is_feasible(sched, inst);
    let obj = objectives(sched, inst)?;
    let [ec, er] = target_errors(&obj, target);
    Ok(ec * ec + er * er + penalty * report.violations.len() as f64)
}

/// Job indices in dispatch order, each repeated once per operation, plus
/// a machine choice per flat operation index for flexible problems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationGenome {
    pub sequence: Vec<usize>,
    pub machines: Option<Vec<usize>>,
}

impl PermutationGenome {
    pub fn random(inst: &Instance, rng: &mut impl Rng) -> Self {
        let mut sequence: Vec<usize> = (0..inst.n_jobs).flat_map(|j| std::iter::repeat_n(j, inst.n_ops_per_job)).collect();
        sequence.shuffle(rng);
        let machines = inst
            .kind
            .is_flexible()
            .then(|| (0..inst.n_ops()).map(|op| *inst.eligible_of(op).choose(rng).expect("non-empty eligible set")).collect());
        Self { sequence, machines }
    }

    pub fn is_valid(&self, inst: &Instance) -> bool {
        let mut counts = vec![0usize; inst.n_jobs];
        for &j in &self.sequence {
            match counts.get_mut(j) {
                Some(c) => *c += 1,
                None => return false,
            }
        }
        let machines_ok = match &self.machines {
            Some(m) => m.len() == inst.n_ops() && m.iter().enumerate().all(|(op, mm)| inst.eligible_of(op).contains(mm)),
            None => !inst.kind.is_flexible(),
        };
        counts.iter().all(|&c| c == inst.n_ops_per_job) && machines_ok
    }

    /// Earlier occurrences get higher priority, so the dispatcher follows
    /// the sequence exactly.
    pub fn decode(&self, inst: &Instance) -> Result<Schedule> {
        let k = self.sequence.len();
        if k != inst.n_ops() {
            return Err(crate::error::dim_err(inst.n_ops(), k));
        }
        let mut priority = vec![0.0; k];
        let mut seen = vec![0usize; inst.n_jobs];
        for (pos, &j) in self.sequence.iter().enumerate() {
            if j >= inst.n_jobs || seen[j] >= inst.n_ops_per_job {
                return Err(Error::Config(format!("genome repeats job {j} too often")));
            }
            priority[inst.op_index(j, seen[j])] = (k - pos) as f64;
            seen[j] += 1;
        }
        dispatch(inst, &priority, self.machines.as_deref())
    }

    /// Precedence-preserving crossover: genes of a random job subset keep
    /// their positions from `self`; the rest follow `other`'s order.
    pub fn crossover(&self, other: &Self, n_jobs: usize, rng: &mut impl Rng) -> Self {
        let keep: Vec<bool> = (0..n_jobs).map(|_| rng.gen::<bool>()).collect();
        let mut fill = other.sequence.iter().filter(|&&j| !keep[j]);
        let sequence = self
            .sequence
            .iter()
            .map(|&j| if keep[j] { j } else { *fill.next().expect("same multiset") })
            .collect();
        let machines = match (&self.machines, &other.machines) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&x, &y)| if rng.gen::<bool>() { x } else { y }).collect()),
            _ => None,
        };
        Self { sequence, machines }
    }

    /// Swaps two positions; flexible genomes also reassign one operation.
    pub fn mutate(&mut self, inst: &Instance, rng: &mut impl Rng) {
        let k = self.sequence.len();
        if k > 1 {
            let a = rng.gen_range(0..k);
            let b = rng.gen_range(0..k);
            self.sequence.swap(a, b);
        }
        if let Some(m) = &mut self.machines {
            let op = rng.gen_range(0..m.len());
            m[op] = *inst.eligible_of(op).choose(rng).expect("non-empty eligible set");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub target: ObjectiveVector,
    pub penalty: f64,
    pub seed: u64,
    /// MOEA/D mating and replacement neighborhood.
    pub neighborhood: usize,
    /// Tolerances whose first-hit times are recorded.
    pub epsilons: Vec<f64>,
    /// Stop once every tolerance has been hit.
    pub stop_when_hit: bool,
}

impl MoeaConfig {
    pub fn new(target: ObjectiveVector, seed: u64) -> Self {
        Self {
            population: 100,
            generations: 500,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            target,
            penalty: 1e3,
            seed,
            neighborhood: 10,
            epsilons: vec![0.05, 0.10],
            stop_when_hit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config("population must be at least 4".into()));
        }
        for (name, r) in [("crossover", self.crossover_rate), ("mutation", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} rate must lie in [0, 1]")));
            }
        }
        if !(self.target.c_max > 0.0) {
            return Err(Error::Config("target makespan must be positive".into()));
        }
        if self.neighborhood < 2 {
            return Err(Error::Config("neighborhood must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstHit {
    pub epsilon: f64,
    /// Milliseconds from the start of the run; `None` if never reached.
    pub ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStat {
    pub generation: usize,
    pub best_fitness: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: PermutationGenome,
    pub schedule: Schedule,
    pub objectives: ObjectiveVector,
    pub feasible: bool,
    /// Relative errors to the target, penalized by violations.
    pub errors: [f64; 2],
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub best: Individual,
    pub population: Vec<Individual>,
    pub history: Vec<GenerationStat>,
    pub first_hits: Vec<FirstHit>,
    pub evaluations: usize,
    pub elapsed_ms: f64,
}

/// Shared bookkeeping: evaluation, best-so-far and first-hit clocks.
struct Tracker<'a> {
    inst: &'a Instance,
    cfg: &'a MoeaConfig,
    started: Instant,
    best: Option<Individual>,
    first_hits: Vec<FirstHit>,
    evaluations: usize,
    history: Vec<GenerationStat>,
}

impl<'a> Tracker<'a> {
    fn new(inst: &'a Instance, cfg: &'a MoeaConfig) -> Self {
        Self {
            inst,
            cfg,
            started: Instant::now(),
            best: None,
            first_hits: cfg.epsilons.iter().map(|&epsilon| FirstHit { epsilon, ms: None }).collect(),
            evaluations: 0,
            history: Vec::new(),
        }
    }

    fn ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1e3
    }

    fn evaluate(&mut self, genome: PermutationGenome) -> Result<Individual> {
        let schedule = genome.decode(self.inst)?;
        let report = is_feasible(&schedule, self.inst);
        let obj = objectives(&schedule, self.inst)?;
        let raw = target_errors(&obj, &self.cfg.target);
        let pen = self.cfg.penalty * report.violations.len() as f64;
        let ind = Individual {
            genome,
            schedule,
            objectives: obj,
            feasible: report.feasible,
            errors: [raw[0] + pen, raw[1] + pen],
            fitness: raw[0] * raw[0] + raw[1] * raw[1] + pen,
        };
        self.evaluations += 1;
        if ind.feasible {
            let now = self.ms();
            for hit in self.first_hits.iter_mut().filter(|h| h.ms.is_none()) {
                if raw[0] <= hit.epsilon && raw[1] <= hit.epsilon {
                    hit.ms = Some(now);
                }
            }
        }
        if self.best.as_ref().is_none_or(|b| ind.fitness < b.fitness) {
            self.best = Some(ind.clone());
        }
        Ok(ind)
    }

    fn all_hit(&self) -> bool {
        self.cfg.stop_when_hit && self.first_hits.iter().all(|h| h.ms.is_some())
    }

    fn log(&mut self, generation: usize) {
        let best_fitness = self.best.as_ref().map_or(f64::INFINITY, |b| b.fitness);
        let ms = self.ms();
        self.history.push(GenerationStat { generation, best_fitness, ms });
    }

    fn finish(self, population: Vec<Individual>) -> Result<BaselineRun> {
        let elapsed_ms = self.ms();
        Ok(BaselineRun {
            best: self.best.ok_or_else(|| Error::Internal("no individual evaluated".into()))?,
            population,
            history: self.history,
            first_hits: self.first_hits,
            evaluations: self.evaluations,
            elapsed_ms,
        })
    }
}

/// `a` is no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fronts of point indices, best first.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            let (pa, pb) = (points[a].as_ref(), points[b].as_ref());
            if dominates(pa, pb) {
                dominates_list[a].push(b);
                dominated_by[b] += 1;
            } else if dominates(pb, pa) {
                dominates_list[b].push(a);
                dominated_by[a] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &a in &current {
            for &b in &dominates_list[a] {
                dominated_by[b] -= 1;
                if dominated_by[b] == 0 {
                    next.push(b);
                }
            }
        }
        fronts.push(current);
        next.sort_unstable();
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front`, aligned with it; the two
/// extremes of every objective get `f64::INFINITY`.
pub fn crowding_distance<P: AsRef<[f64]>>(points: &[P], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    let dims = points[front[0]].as_ref().len();
    for d in 0..dims {
        let val = |i: usize| points[front[i]].as_ref()[d];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| val(a).total_cmp(&val(b)));
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = val(order[n - 1]) - val(order[0]);
        if span <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            dist[order[w]] += (val(order[w + 1]) - val(order[w - 1])) / span;
        }
    }
    dist
}

/// Uniform two-objective weights `(i/(n-1), 1 - i/(n-1))`.
pub fn uniform_weights(n: usize) -> Vec<[f64; 2]> {
    match n {
        0 => Vec::new(),
        1 => vec![[0.5, 0.5]],
        _ => (0..n)
            .map(|i| {
                let a = i as f64 / (n - 1) as f64;
                [a, 1.0 - a]
            })
            .collect(),
    }
}

/// `max_i w_i |f_i - z_i|`.
pub fn tchebycheff(f: &[f64], w: &[f64], z: &[f64]) -> f64 {
    f.iter().zip(w).zip(z).map(|((f, w), z)| w * (f - z).abs()).fold(0.0, f64::max)
}

fn offspring(a: &Individual, b: &Individual, inst: &Instance, cfg: &MoeaConfig, rng: &mut ChaCha8Rng) -> PermutationGenome {
    let mut child = if rng.gen::<f64>() < cfg.crossover_rate {
        a.genome.crossover(&b.genome, inst.n_jobs, rng)
    } else {
        a.genome.clone()
    };
    if rng.gen::<f64>() < cfg.mutation_rate {
        child.mutate(inst, rng);
    }
    child
}

/// Rank and crowding of every individual.
fn rank_and_crowd(pop: &[Individual]) -> (Vec<usize>, Vec<f64>) {
    let pts: Vec<[f64; 2]> = pop.iter().map(|i| i.errors).collect();
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, front) in non_dominated_sort(&pts).iter().enumerate() {
        for (&i, d) in front.iter().zip(crowding_distance(&pts, front)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (rank, crowd)
}

pub fn nsga2_run(inst: &Instance, cfg: &MoeaConfig) -> Result<BaselineRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tr = Tracker::new(inst, cfg);
    let n = cfg.population;
    let mut pop = Vec::with_capacity(n);
    for _ in 0..n {
        pop.push(tr.evaluate(PermutationGenome::random(inst, &mut rng))?);
    }
    tr.log(0);
    for generation in 1..=cfg.generations {
        if tr.all_hit() {
            break;
        }
        let (rank, crowd) = rank_and_crowd(&pop);
        let better = |a: usize, b: usize| if (rank[a], -crowd[a]).partial_cmp(&(rank[b], -crowd[b])) == Some(std::cmp::Ordering::Greater) { b } else { a };
        let mut children = Vec::with_capacity(n);
        while children.len() < n {
            let p1 = better(rng.gen_range(0..n), rng.gen_range(0..n));
            let p2 = better(rng.gen_range(0..n), rng.gen_range(0..n));
            let child = offspring(&pop[p1], &pop[p2], inst, cfg, &mut rng);
            children.push(tr.evaluate(child)?);
        }
        pop.extend(children);
        let pts: Vec<[f64; 2]> = pop.iter().map(|i| i.errors).collect();
        let mut keep = Vec::with_capacity(n);
        for front in non_dominated_sort(&pts) {
            if keep.len() + front.len() <= n {
                keep.extend(front);
                continue;
            }
            let d = crowding_distance(&pts, &front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
            keep.extend(order.into_iter().take(n - keep.len()).map(|i| front[i]));
            break;
        }
        let mut slots: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
        pop = keep.into_iter().map(|i| slots[i].take().expect("selected once")).collect();
        tr.log(generation);
    }
    tr.finish(pop)
}

pub fn moead_run(inst: &Instance, cfg: &MoeaConfig) -> Result<BaselineRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tr = Tracker::new(inst, cfg);
    let n = cfg.population;
    let weights = uniform_weights(n);
    let t = cfg.neighborhood.min(n);
    let neighbors: Vec<Vec<usize>> = weights
        .iter()
        .map(|w| {
            let mut idx: Vec<usize> = (0..n).collect();
            let dist = |i: usize| (weights[i][0] - w[0]).powi(2) + (weights[i][1] - w[1]).powi(2);
            idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
            idx.truncate(t);
            idx
        })
        .collect();
    let mut pop = Vec::with_capacity(n);
    for _ in 0..n {
        pop.push(tr.evaluate(PermutationGenome::random(inst, &mut rng))?);
    }
    let mut ideal = [f64::INFINITY; 2];
    for ind in &pop {
        update_ideal(&mut ideal, &ind.errors);
    }
    tr.log(0);
    for generation in 1..=cfg.generations {
        if tr.all_hit() {
            break;
        }
        for i in 0..n {
            let nb = &neighbors[i];
            let a = nb[rng.gen_range(0..nb.len())];
            let b = nb[rng.gen_range(0..nb.len())];
            let child = offspring(&pop[a], &pop[b], inst, cfg, &mut rng);
            let child = tr.evaluate(child)?;
            update_ideal(&mut ideal, &child.errors);
            for &j in nb {
                if tchebycheff(&child.errors, &weights[j], &ideal) <= tchebycheff(&pop[j].errors, &weights[j], &ideal) {
                    pop[j] = child.clone();
                }
            }
        }
        tr.log(generation);
    }
    tr.finish(pop)
}

fn update_ideal(ideal: &mut [f64; 2], f: &[f64; 2]) {
    for (z, &v) in ideal.iter_mut().zip(f) {
        *z = z.min(v);
    }
}
