//! Metrics, trial records, report aggregation and the benchmark driver
//! that runs every method on identical (instance, target) pairs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{moead_run, nsga2_run, relative_error, BaselineRun, FirstHit, MoeaConfig};
use crate::denoiser::GraphContext;
use crate::diffusion::{sample, Candidate, SamplerConfig};
use crate::error::{Error, Result};
use crate::instance::{generate_instance, GeneratorConfig, Instance, ProblemKind};
use crate::model::TrainedModel;
use crate::oracle::{label_instance, normalize_targets};
use crate::schedule::{is_feasible, ObjectiveVector, Schedule, Time};

/// Tolerances reported for time-to-target.
pub const REPORT_EPSILONS: [f64; 2] = [0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Goal,
    Nsga2,
    Moead,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Goal => "goal",
            Method::Nsga2 => "nsga2",
            Method::Moead => "moead",
        }
    }

    /// Whether time-to-target is the first hit of a running search.
    pub fn is_search(self) -> bool {
        self != Method::Goal
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "goal" => Ok(Method::Goal),
            "nsga2" | "nsgaii" => Ok(Method::Nsga2),
            "moead" => Ok(Method::Moead),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// `100 |achieved - target| / |target|`, with the resilience guard for a
/// zero target.
pub fn mape(achieved: f64, target: f64) -> f64 {
    100.0 * relative_error(achieved, target)
}

/// Index and `[C, R]` MAPEs of the feasible candidate minimizing the larger
/// of the two.
pub fn best_candidate(objectives: &[ObjectiveVector], feasible: &[bool], target: &ObjectiveVector) -> Option<(usize, [f64; 2])> {
    objectives
        .iter()
        .zip(feasible)
        .enumerate()
        .filter(|(_, (_, &f))| f)
        .map(|(i, (o, _))| (i, [mape(o.c_max, target.c_max), mape(o.resilience, target.resilience)]))
        .min_by(|a, b| a.1[0].max(a.1[1]).total_cmp(&b.1[0].max(b.1[1])))
}

/// `100 (n - n_unique) / n` over exact start-time vectors.
pub fn duplication_rate<K: AsRef<[Time]>>(start_keys: &[K]) -> Result<f64> {
    if start_keys.is_empty() {
        return Err(Error::Config("duplication rate needs at least one candidate".into()));
    }
    let unique: HashSet<&[Time]> = start_keys.iter().map(|k| k.as_ref()).collect();
    let n = start_keys.len() as f64;
    Ok(100.0 * (n - unique.len() as f64) / n)
}

/// Duplication rate of a list of schedules.
pub fn schedule_duplication(schedules: &[Schedule]) -> Result<f64> {
    let keys: Vec<Vec<Time>> = schedules.iter().map(Schedule::start_key).collect();
    duplication_rate(&keys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub instance_id: String,
    pub kind: ProblemKind,
    pub size: String,
    pub target: ObjectiveVector,
    pub objectives: Vec<ObjectiveVector>,
    pub feasible: Vec<bool>,
    /// Row-major start times per candidate.
    pub start_keys: Vec<Vec<Time>>,
    /// First 16 hex digits of SHA-256 over all start keys.
    pub candidate_digest: String,
    /// Wall-clock of the whole trial.
    pub total_ms: f64,
    /// Search methods only: elapsed time at the first decision within each
    /// tolerance.
    pub first_hits: Vec<FirstHit>,
}

impl TrialRecord {
    fn new(method: Method, inst: &Instance, target: ObjectiveVector, schedules: &[&Schedule], objectives: Vec<ObjectiveVector>, total_ms: f64) -> Self {
        let start_keys: Vec<Vec<Time>> = schedules.iter().map(|s| s.start_key()).collect();
        let feasible = schedules.iter().map(|s| is_feasible(s, inst).feasible).collect();
        let mut h = Sha256::new();
        for k in &start_keys {
            for t in k {
                h.update(t.to_le_bytes());
            }
            h.update(b";");
        }
        let digest = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
        Self {
            method,
            instance_id: inst.id.clone(),
            kind: inst.kind,
            size: size_label(inst.n_jobs, inst.n_machines),
            target,
            objectives,
            feasible,
            start_keys,
            candidate_digest: digest,
            total_ms,
            first_hits: Vec::new(),
        }
    }

    pub fn best(&self) -> Option<(usize, [f64; 2])> {
        best_candidate(&self.objectives, &self.feasible, &self.target)
    }

    /// Feasible candidates within `eps` relative error on both objectives.
    pub fn hits(&self, eps: f64) -> usize {
        self.objectives
            .iter()
            .zip(&self.feasible)
            .filter(|(o, &f)| f && relative_error(o.c_max, self.target.c_max) <= eps && relative_error(o.resilience, self.target.resilience) <= eps)
            .count()
    }

    pub fn duplication(&self) -> Result<f64> {
        duplication_rate(&self.start_keys)
    }
}

pub fn size_label(jobs: usize, machines: usize) -> String {
    format!("{jobs}x{machines}")
}

/// Generative methods: total time over the number of hits. Search methods:
/// the recorded first-hit time. `None` when the tolerance was never met.
pub fn time_to_epsilon(record: &TrialRecord, eps: f64) -> Option<f64> {
    if record.method.is_search() {
        return record.first_hits.iter().find(|h| (h.epsilon - eps).abs() < 1e-12).and_then(|h| h.ms);
    }
    match record.hits(eps) {
        0 => None,
        n => Some(record.total_ms / n as f64),
    }
}

/// Samples `n` candidates and times the whole call.
#[allow(clippy::too_many_arguments)]
pub fn goal_trial(
    model: &TrainedModel,
    inst: &Instance,
    ctx: &GraphContext,
    target: ObjectiveVector,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<(TrialRecord, Vec<Candidate>)> {
    let started = Instant::now();
    let u = normalize_targets(&target, inst);
    let cands = sample(&model.model, inst, ctx, u, &model.noise, sampler, n, seed)?;
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let schedules: Vec<&Schedule> = cands.iter().map(|c| &c.schedule).collect();
    let objectives = cands.iter().map(|c| c.objectives).collect();
    Ok((TrialRecord::new(Method::Goal, inst, target, &schedules, objectives, total_ms), cands))
}

/// Runs one search baseline; candidates are the best-so-far individual
/// followed by the final population.
pub fn baseline_trial(method: Method, inst: &Instance, cfg: &MoeaConfig) -> Result<(TrialRecord, BaselineRun)> {
    let run = match method {
        Method::Nsga2 => nsga2_run(inst, cfg)?,
        Method::Moead => moead_run(inst, cfg)?,
        Method::Goal => return Err(Error::Config("goal is not a search baseline".into())),
    };
    let members: Vec<_> = std::iter::once(&run.best).chain(&run.population).collect();
    let schedules: Vec<&Schedule> = members.iter().map(|i| &i.schedule).collect();
    let objectives = members.iter().map(|i| i.objectives).collect();
    let mut rec = TrialRecord::new(method, inst, cfg.target, &schedules, objectives, run.elapsed_ms);
    rec.first_hits = run.first_hits.clone();
    Ok((rec, run))
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (Some(mean), Some(var.sqrt()))
}

/// One report cell: a (method, kind, size) group of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub kind: ProblemKind,
    pub size: String,
    pub trials: usize,
    /// Trials with at least one feasible candidate.
    pub feasible_trials: usize,
    pub mape_cmax_mean: Option<f64>,
    pub mape_cmax_std: Option<f64>,
    pub mape_resilience_mean: Option<f64>,
    pub mape_resilience_std: Option<f64>,
    /// Percentage of candidates that are feasible.
    pub feasibility: f64,
    /// Mean per-trial duplication percentage.
    pub duplication: f64,
    pub tte5_ms_mean: Option<f64>,
    pub tte5_hits: usize,
    pub tte10_ms_mean: Option<f64>,
    pub tte10_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Groups records by (method, kind, size) in sorted key order.
    pub fn aggregate(records: &[TrialRecord]) -> Result<Self> {
        let mut groups: BTreeMap<(Method, ProblemKind, String), Vec<&TrialRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((r.method, r.kind, r.size.clone())).or_default().push(r);
        }
        let mut rows = Vec::with_capacity(groups.len());
        for ((method, kind, size), recs) in groups {
            let best: Vec<[f64; 2]> = recs.iter().filter_map(|r| r.best().map(|b| b.1)).collect();
            let (cm, cs) = mean_std(&best.iter().map(|b| b[0]).collect::<Vec<_>>());
            let (rm, rs) = mean_std(&best.iter().map(|b| b[1]).collect::<Vec<_>>());
            let n_cand: usize = recs.iter().map(|r| r.feasible.len()).sum();
            let n_feas: usize = recs.iter().map(|r| r.feasible.iter().filter(|&&f| f).count()).sum();
            let dup: Vec<f64> = recs.iter().map(|r| r.duplication()).collect::<Result<_>>()?;
            let tte = |eps: f64| -> Vec<f64> { recs.iter().filter_map(|r| time_to_epsilon(r, eps)).collect() };
            let (t5, t10) = (tte(REPORT_EPSILONS[0]), tte(REPORT_EPSILONS[1]));
            rows.push(ReportRow {
                method,
                kind,
                size,
                trials: recs.len(),
                feasible_trials: best.len(),
                mape_cmax_mean: cm,
                mape_cmax_std: cs,
                mape_resilience_mean: rm,
                mape_resilience_std: rs,
                feasibility: if n_cand == 0 { 0.0 } else { 100.0 * n_feas as f64 / n_cand as f64 },
                duplication: mean_std(&dup).0.unwrap_or(0.0),
                tte5_ms_mean: mean_std(&t5).0,
                tte5_hits: t5.len(),
                tte10_ms_mean: mean_std(&t10).0,
                tte10_hits: t10.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn row(&self, method: Method, kind: ProblemKind, size: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.kind == kind && r.size == size)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_rows(w, &self.rows)
    }
}

/// Time-to-target bar data: mean and standard deviation per cell and
/// tolerance, over trials that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: Method,
    pub kind: ProblemKind,
    pub size: String,
    pub epsilon: f64,
    pub mean_ms: Option<f64>,
    pub std_ms: Option<f64>,
    pub n: usize,
}

pub fn plot_data(records: &[TrialRecord], epsilons: &[f64]) -> Vec<PlotRow> {
    let mut groups: BTreeMap<(Method, ProblemKind, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.kind, r.size.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((method, kind, size), recs) in groups {
        for &epsilon in epsilons {
            let t: Vec<f64> = recs.iter().filter_map(|r| time_to_epsilon(r, epsilon)).collect();
            let (mean_ms, std_ms) = mean_std(&t);
            out.push(PlotRow {
                method,
                kind,
                size: size.clone(),
                epsilon,
                mean_ms,
                std_ms,
                n: t.len(),
            });
        }
    }
    out
}

/// Serializes rows as CSV with a header; `None` becomes an empty field.
pub fn write_rows<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| Error::Internal(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_records_json(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, records)?;
    Ok(())
}

pub fn read_records_json(path: &Path) -> Result<Vec<TrialRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    /// `(jobs, machines)`.
    pub sizes: Vec<(usize, usize)>,
    pub kinds: Vec<ProblemKind>,
    pub n_instances: usize,
    pub targets_per_instance: usize,
    /// Generator index of the first evaluation instance; indices below it
    /// are reserved for training.
    pub first_index: u64,
    /// Generator seed shared with the training data.
    pub generator_seed: u64,
    pub oracle_limit: usize,
    pub candidates: usize,
    pub sampler: SamplerConfig,
    pub population: usize,
    pub generations: usize,
    pub stop_when_hit: bool,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Goal, Method::Nsga2, Method::Moead],
            sizes: vec![(5, 3)],
            kinds: vec![ProblemKind::Jsp],
            n_instances: 100,
            targets_per_instance: 1,
            first_index: 1_000_000,
            generator_seed: 0,
            oracle_limit: 50,
            candidates: 32,
            sampler: SamplerConfig::default(),
            population: 100,
            generations: 500,
            stop_when_hit: false,
            seed: 0,
        }
    }
}

/// Evaluation pairs: each instance with targets drawn uniformly from its
/// own oracle set.
pub fn evaluation_pairs(cfg: &BenchmarkConfig, kind: ProblemKind, jobs: usize, machines: usize) -> Result<Vec<(Instance, ObjectiveVector)>> {
    let gen = GeneratorConfig::new(kind, jobs, machines, cfg.generator_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (jobs as u64) << 32 ^ (machines as u64) << 16 ^ kind as u64);
    let mut out = Vec::new();
    for i in 0..cfg.n_instances as u64 {
        let inst = generate_instance(&gen, cfg.first_index + i)?;
        let labeled = label_instance(&inst, cfg.oracle_limit, rng.gen())?;
        if labeled.is_empty() {
            return Err(Error::Internal(format!("oracle produced no schedule for {}", inst.id)));
        }
        for _ in 0..cfg.targets_per_instance {
            let (_, obj) = &labeled[rng.gen_range(0..labeled.len())];
            out.push((inst.clone(), *obj));
        }
    }
    Ok(out)
}

/// Runs every method on identical pairs. GOAL uses the first model covering
/// the problem kind; a missing model is a configuration error.
pub fn run_benchmark(cfg: &BenchmarkConfig, models: &[TrainedModel], mut progress: Option<&mut dyn FnMut(&TrialRecord)>) -> Result<(EvalReport, Vec<TrialRecord>)> {
    let mut records = Vec::new();
    for &kind in &cfg.kinds {
        for &(jobs, machines) in &cfg.sizes {
            let pairs = evaluation_pairs(cfg, kind, jobs, machines)?;
            for &method in &cfg.methods {
                let model = match method {
                    Method::Goal => Some(
                        models
                            .iter()
                            .find(|m| m.covers(kind))
                            .ok_or_else(|| Error::Config(format!("no checkpoint covers {kind}")))?,
                    ),
                    _ => None,
                };
                // warm-up, excluded from timing
                if let (Some(m), Some((inst, target))) = (model, pairs.first()) {
                    let ctx = GraphContext::new(inst)?;
                    goal_trial(m, inst, &ctx, *target, &cfg.sampler, cfg.candidates.min(2), cfg.seed)?;
                }
                for (p, (inst, target)) in pairs.iter().enumerate() {
                    let trial_seed = cfg.seed.wrapping_add(p as u64);
                    let rec = match model {
                        Some(m) => {
                            let ctx = GraphContext::new(inst)?;
                            goal_trial(m, inst, &ctx, *target, &cfg.sampler, cfg.candidates, trial_seed)?.0
                        }
                        None => {
                            let mut mc = MoeaConfig::new(*target, trial_seed);
                            mc.population = cfg.population;
                            mc.generations = cfg.generations;
                            mc.epsilons = REPORT_EPSILONS.to_vec();
                            mc.stop_when_hit = cfg.stop_when_hit;
                            baseline_trial(method, inst, &mc)?.0
                        }
                    };
                    if let Some(cb) = progress.as_mut() {
                        cb(&rec);
                    }
                    records.push(rec);
                }
            }
        }
    }
    Ok((EvalReport::aggregate(&records)?, records))
}
