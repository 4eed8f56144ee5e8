//! Scheduling problem instances for the flow shop, job shop and flexible job
//! shop variants, together with a seeded generator and the flat feature
//! encoding consumed by the instance conditioning encoder.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest job count the feature encoder can represent.
pub const MAX_JOBS: usize = 20;
/// Operations per job slot in the feature encoding.
pub const PADDED_OPS: usize = 3;
/// Largest machine count the feature encoder can represent.
pub const MAX_MACHINES: usize = 10;
/// Processing-time scale used by the generator and the feature normalization.
pub const MAX_PROC_TIME: u32 = 5;
/// Length of [`encode_features`] output: per-op `(p, machine hot)` plus two counts.
pub const FEATURE_LEN: usize = MAX_JOBS * PADDED_OPS * (1 + MAX_MACHINES) + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Fsp,
    Jsp,
    Fjsp,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [ProblemKind::Fsp, ProblemKind::Jsp, ProblemKind::Fjsp];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Fsp => "fsp",
            ProblemKind::Jsp => "jsp",
            ProblemKind::Fjsp => "fjsp",
        }
    }

    pub fn is_flexible(self) -> bool {
        self == ProblemKind::Fjsp
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fsp" => Ok(ProblemKind::Fsp),
            "jsp" => Ok(ProblemKind::Jsp),
            "fjsp" => Ok(ProblemKind::Fjsp),
            other => Err(Error::Config(format!("unknown problem kind `{other}`"))),
        }
    }
}

/// A scheduling problem. Operation `(j, k)` is the `k`-th operation of job
/// `j`; its flat index is `j * n_ops_per_job + k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub kind: ProblemKind,
    pub n_jobs: usize,
    pub n_ops_per_job: usize,
    pub n_machines: usize,
    pub proc_time: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligible: Option<Vec<Vec<Vec<usize>>>>,
    pub id: String,
}

impl Instance {
    /// Builds a JSP or FSP instance from per-operation machines.
    pub fn with_machines(
        kind: ProblemKind,
        id: impl Into<String>,
        n_machines: usize,
        proc_time: Vec<Vec<u32>>,
        machine: Vec<Vec<usize>>,
    ) -> Self {
        let n_jobs = proc_time.len();
        let n_ops_per_job = proc_time.first().map_or(0, Vec::len);
        Self {
            kind,
            n_jobs,
            n_ops_per_job,
            n_machines,
            proc_time,
            machine: Some(machine),
            eligible: None,
            id: id.into(),
        }
    }

    /// Builds an FJSP instance from per-operation eligible machine sets.
    pub fn with_eligible(
        id: impl Into<String>,
        n_machines: usize,
        proc_time: Vec<Vec<u32>>,
        eligible: Vec<Vec<Vec<usize>>>,
    ) -> Self {
        let n_jobs = proc_time.len();
        let n_ops_per_job = proc_time.first().map_or(0, Vec::len);
        Self {
            kind: ProblemKind::Fjsp,
            n_jobs,
            n_ops_per_job,
            n_machines,
            proc_time,
            machine: None,
            eligible: Some(eligible),
            id: id.into(),
        }
    }

    /// Number of operations `K`.
    pub fn n_ops(&self) -> usize {
        self.n_jobs * self.n_ops_per_job
    }

    pub fn op_index(&self, job: usize, k: usize) -> usize {
        job * self.n_ops_per_job + k
    }

    /// `(job, position)` of a flat operation index.
    pub fn op_coords(&self, op: usize) -> (usize, usize) {
        (op / self.n_ops_per_job, op % self.n_ops_per_job)
    }

    pub fn proc(&self, op: usize) -> u32 {
        let (j, k) = self.op_coords(op);
        self.proc_time[j][k]
    }

    /// Machines operation `(job, k)` may run on. A single machine for JSP/FSP.
    pub fn eligible_machines(&self, job: usize, k: usize) -> &[usize] {
        if let Some(el) = &self.eligible {
            &el[job][k]
        } else if let Some(m) = &self.machine {
            std::slice::from_ref(&m[job][k])
        } else {
            &[]
        }
    }

    pub fn eligible_of(&self, op: usize) -> &[usize] {
        let (j, k) = self.op_coords(op);
        self.eligible_machines(j, k)
    }

    pub fn total_proc_time(&self) -> u32 {
        self.proc_time.iter().flatten().sum()
    }

    /// Longest job chain, a lower bound on the makespan.
    pub fn max_job_length(&self) -> u32 {
        self.proc_time.iter().map(|row| row.iter().sum()).max().unwrap_or(0)
    }

    /// Every invariant violation, empty when the instance is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.proc_time.len() != self.n_jobs {
            out.push(format!(
                "proc_time has {} rows, expected n_jobs = {}",
                self.proc_time.len(),
                self.n_jobs
            ));
            return out;
        }
        if self.proc_time.iter().any(|r| r.len() != self.n_ops_per_job) {
            out.push("proc_time row length differs from n_ops_per_job".to_string());
            return out;
        }
        if self
            .proc_time
            .iter()
            .flatten()
            .any(|&p| !(1..=MAX_PROC_TIME).contains(&p))
        {
            out.push("proc_time out of range".to_string());
        }
        match self.kind {
            ProblemKind::Jsp | ProblemKind::Fsp => {
                if self.eligible.is_some() {
                    out.push("eligible sets given for a non-flexible instance".to_string());
                }
                let Some(machine) = &self.machine else {
                    out.push("machine assignment missing".to_string());
                    return out;
                };
                if machine.len() != self.n_jobs
                    || machine.iter().any(|r| r.len() != self.n_ops_per_job)
                {
                    out.push("machine shape differs from proc_time".to_string());
                    return out;
                }
                if machine.iter().flatten().any(|&m| m >= self.n_machines) {
                    out.push("machine index out of range".to_string());
                }
                if self.kind == ProblemKind::Fsp && machine.windows(2).any(|w| w[0] != w[1]) {
                    out.push("flow shop jobs do not share a machine sequence".to_string());
                }
            }
            ProblemKind::Fjsp => {
                if self.machine.is_some() {
                    out.push("fixed machines given for a flexible instance".to_string());
                }
                let Some(eligible) = &self.eligible else {
                    out.push("eligible sets missing".to_string());
                    return out;
                };
                if eligible.len() != self.n_jobs
                    || eligible.iter().any(|r| r.len() != self.n_ops_per_job)
                {
                    out.push("eligible shape differs from proc_time".to_string());
                    return out;
                }
                for (j, row) in eligible.iter().enumerate() {
                    for (k, set) in row.iter().enumerate() {
                        if set.is_empty() {
                            out.push(format!("operation ({j},{k}) has an empty eligible set"));
                        } else if set.iter().any(|&m| m >= self.n_machines) {
                            out.push(format!("operation ({j},{k}) has an eligible machine out of range"));
                        }
                    }
                }
            }
        }
        out
    }

    /// Fails with a size error when the instance does not fit the padded
    /// feature layout.
    pub fn check_padding(&self) -> Result<()> {
        if self.n_jobs > MAX_JOBS || self.n_machines > MAX_MACHINES || self.n_ops_per_job > PADDED_OPS {
            return Err(Error::Size(format!(
                "{} jobs x {} ops on {} machines (bounds {MAX_JOBS} x {PADDED_OPS} on {MAX_MACHINES})",
                self.n_jobs, self.n_ops_per_job, self.n_machines
            )));
        }
        Ok(())
    }
}

/// A set of admissible integer values, written as `5`, `5..20` (inclusive)
/// or `4,5,6,8,10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ValueSetRepr", into = "Vec<usize>")]
pub struct ValueSet(Vec<usize>);

#[derive(Deserialize)]
#[serde(untagged)]
enum ValueSetRepr {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl TryFrom<ValueSetRepr> for ValueSet {
    type Error = Error;

    fn try_from(r: ValueSetRepr) -> Result<Self> {
        match r {
            ValueSetRepr::One(v) => Ok(ValueSet(vec![v])),
            ValueSetRepr::Many(v) => ValueSet::new(v),
            ValueSetRepr::Text(s) => s.parse(),
        }
    }
}

impl From<ValueSet> for Vec<usize> {
    fn from(v: ValueSet) -> Self {
        v.0
    }
}

impl ValueSet {
    pub fn new(mut values: Vec<usize>) -> Result<Self> {
        values.sort_unstable();
        values.dedup();
        if values.is_empty() {
            return Err(Error::Config("empty value set".into()));
        }
        Ok(ValueSet(values))
    }

    pub fn single(v: usize) -> Self {
        ValueSet(vec![v])
    }

    pub fn range(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("empty range {lo}..{hi}")));
        }
        Ok(ValueSet((lo..=hi).collect()))
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn max(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> usize {
        self.0[rng.gen_range(0..self.0.len())]
    }
}

impl FromStr for ValueSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse value set `{s}`"));
        let s = s.trim();
        if let Some((lo, hi)) = s.split_once("..") {
            let lo = lo.trim().parse().map_err(|_| bad())?;
            let hi = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            return ValueSet::range(lo, hi);
        }
        let values = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        ValueSet::new(values)
    }
}

impl fmt::Display for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let contiguous = self.0.windows(2).all(|w| w[1] == w[0] + 1);
        if self.0.len() == 1 {
            write!(f, "{}", self.0[0])
        } else if contiguous {
            write!(f, "{}..{}", self.min(), self.max())
        } else {
            let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: ProblemKind,
    pub jobs: ValueSet,
    pub machines: ValueSet,
    #[serde(default = "default_ops")]
    pub ops_per_job: usize,
    #[serde(default = "default_proc_range")]
    pub proc_time: (u32, u32),
    #[serde(default)]
    pub seed: u64,
}

fn default_ops() -> usize {
    PADDED_OPS
}

fn default_proc_range() -> (u32, u32) {
    (1, MAX_PROC_TIME)
}

impl GeneratorConfig {
    /// Paper-protocol defaults for a fixed size: 3 operations per job,
    /// processing times uniform on `1..=5`.
    pub fn new(kind: ProblemKind, jobs: usize, machines: usize, seed: u64) -> Self {
        Self {
            kind,
            jobs: ValueSet::single(jobs),
            machines: ValueSet::single(machines),
            ops_per_job: PADDED_OPS,
            proc_time: default_proc_range(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs.min() == 0 || self.machines.min() == 0 || self.ops_per_job == 0 {
            return Err(Error::Config("jobs, machines and ops_per_job must be positive".into()));
        }
        let (lo, hi) = self.proc_time;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid processing time range [{lo},{hi}]")));
        }
        Ok(())
    }

    /// Fails when the largest generated instance would not fit the encoder.
    pub fn check_padding(&self) -> Result<()> {
        if self.jobs.max() > MAX_JOBS || self.machines.max() > MAX_MACHINES || self.ops_per_job > PADDED_OPS {
            return Err(Error::Size(format!(
                "up to {} jobs x {} ops on {} machines exceeds {MAX_JOBS} x {PADDED_OPS} on {MAX_MACHINES}",
                self.jobs.max(),
                self.ops_per_job,
                self.machines.max()
            )));
        }
        Ok(())
    }
}

/// Random machine route of length `len`: distinct machines when possible.
fn random_route<R: Rng>(rng: &mut R, len: usize, n_machines: usize) -> Vec<usize> {
    if len <= n_machines {
        let mut all: Vec<usize> = (0..n_machines).collect();
        all.shuffle(rng);
        all.truncate(len);
        all
    } else {
        (0..len).map(|_| rng.gen_range(0..n_machines)).collect()
    }
}

/// Deterministic in `(cfg.seed, index)`: the index selects an independent
/// ChaCha stream under the configured seed.
pub fn generate_instance(cfg: &GeneratorConfig, index: u64) -> Result<Instance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    let n_jobs = cfg.jobs.pick(&mut rng);
    let n_machines = cfg.machines.pick(&mut rng);
    let n_ops = cfg.ops_per_job;
    let (lo, hi) = cfg.proc_time;
    let proc_time: Vec<Vec<u32>> = (0..n_jobs)
        .map(|_| (0..n_ops).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect();
    let id = format!("{}-{}x{}-s{}-i{}", cfg.kind, n_jobs, n_machines, cfg.seed, index);

    let inst = match cfg.kind {
        ProblemKind::Fsp => {
            let route = random_route(&mut rng, n_ops, n_machines);
            Instance::with_machines(cfg.kind, id, n_machines, proc_time, vec![route; n_jobs])
        }
        ProblemKind::Jsp => {
            let machine = (0..n_jobs)
                .map(|_| random_route(&mut rng, n_ops, n_machines))
                .collect();
            Instance::with_machines(cfg.kind, id, n_machines, proc_time, machine)
        }
        ProblemKind::Fjsp => {
            let eligible = (0..n_jobs)
                .map(|_| {
                    (0..n_ops)
                        .map(|_| {
                            let size = rng.gen_range(1..=n_machines);
                            let mut set = random_route(&mut rng, size, n_machines);
                            set.sort_unstable();
                            set
                        })
                        .collect()
                })
                .collect();
            Instance::with_eligible(id, n_machines, proc_time, eligible)
        }
    };
    Ok(inst)
}

/// Flat instance features padded to [`MAX_JOBS`] x [`PADDED_OPS`] slots of
/// `[p / 5, machine one-hot (or eligibility multi-hot) over MAX_MACHINES]`,
/// followed by `n_jobs / MAX_JOBS` and `n_machines / MAX_MACHINES`.
/// The mask is `true` on entries that describe real operations or counts.
pub fn encode_features(inst: &Instance) -> Result<(Vec<f64>, Vec<bool>)> {
    inst.check_padding()?;
    let slot = 1 + MAX_MACHINES;
    let mut feats = vec![0.0; FEATURE_LEN];
    let mut mask = vec![false; FEATURE_LEN];
    for j in 0..inst.n_jobs {
        for k in 0..inst.n_ops_per_job {
            let base = (j * PADDED_OPS + k) * slot;
            feats[base] = f64::from(inst.proc_time[j][k]) / f64::from(MAX_PROC_TIME);
            for &m in inst.eligible_machines(j, k) {
                feats[base + 1 + m] = 1.0;
            }
            mask[base..base + slot].iter_mut().for_each(|v| *v = true);
        }
    }
    let tail = FEATURE_LEN - 2;
    feats[tail] = inst.n_jobs as f64 / MAX_JOBS as f64;
    feats[tail + 1] = inst.n_machines as f64 / MAX_MACHINES as f64;
    mask[tail] = true;
    mask[tail + 1] = true;
    Ok((feats, mask))
}
