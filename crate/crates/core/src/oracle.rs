//! Feasible-schedule oracle and labelled dataset assembly.
//!
//! Schedules come from randomized priority dispatch (random keys fed to the
//! same dispatcher the decoder uses) or, for small instances, from an
//! exhaustive branch over every dispatch sequence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{generate_instance, GeneratorConfig, Instance};
use crate::schedule::{decode, dispatch, label_decision, objectives, DecisionMatrix, ObjectiveVector, Schedule, Time};

/// Largest operation count for which exhaustive enumeration is attempted.
pub const EXHAUSTIVE_MAX_OPS: usize = 9;

/// Re-dispatch in start order until the schedule is a fixed point of
/// `decode(label(.))`. Fixed-machine instances converge immediately.
fn canonicalize(sched: Schedule, inst: &Instance) -> Option<Schedule> {
    let mut cur = sched;
    for _ in 0..8 {
        let x = label_decision(&cur, inst).ok()?;
        let next = decode(&x.to_scores(), inst).ok()?;
        if next == cur {
            return Some(cur);
        }
        cur = next;
    }
    None
}

/// Distinct feasible schedules, de-duplicated on start-time vectors.
///
/// With `exhaustive` set and `K <= 9`, every semi-active schedule is
/// enumerated (in depth-first order) before truncation to `limit`;
/// otherwise random priority keys are drawn until `limit` distinct schedules
/// are found or the attempt budget runs out.
pub fn enumerate_feasible(inst: &Instance, limit: usize, seed: u64, exhaustive: bool) -> Vec<Schedule> {
    if limit == 0 {
        return Vec::new();
    }
    if exhaustive && inst.n_ops() <= EXHAUSTIVE_MAX_OPS {
        return enumerate_exhaustive(inst, limit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<Time>> = HashSet::new();
    let mut out = Vec::new();
    let k = inst.n_ops();
    let budget = 20 * limit + 200;
    let mut keys = vec![0.0; k];
    for _ in 0..budget {
        keys.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let Ok(s) = dispatch(inst, &keys, None) else {
            break;
        };
        let Some(s) = canonicalize(s, inst) else {
            continue;
        };
        if seen.insert(s.start_key()) {
            out.push(s);
            if out.len() == limit {
                break;
            }
        }
    }
    out
}

struct Branch<'a> {
    inst: &'a Instance,
    next: Vec<usize>,
    job_ready: Vec<Time>,
    machine_ready: Vec<Time>,
    start: Vec<Vec<Time>>,
    machine: Vec<Vec<usize>>,
    seen: HashSet<Vec<Time>>,
    out: Vec<Schedule>,
    limit: usize,
}

impl Branch<'_> {
    fn recurse(&mut self, placed: usize) {
        if self.out.len() >= self.limit {
            return;
        }
        let inst = self.inst;
        if placed == inst.n_ops() {
            let s = Schedule {
                instance_id: inst.id.clone(),
                start: self.start.clone(),
                machine: self.machine.clone(),
            };
            if self.seen.contains(&s.start_key()) {
                return;
            }
            // flexible assignments the decoder cannot reproduce are skipped
            if inst.kind.is_flexible() && canonicalize(s.clone(), inst).as_ref() != Some(&s) {
                return;
            }
            self.seen.insert(s.start_key());
            self.out.push(s);
            return;
        }
        for j in 0..inst.n_jobs {
            let k = self.next[j];
            if k == inst.n_ops_per_job {
                continue;
            }
            for &m in inst.eligible_machines(j, k) {
                let (jr, mr) = (self.job_ready[j], self.machine_ready[m]);
                let s = jr.max(mr);
                let end = s + inst.proc_time[j][k];
                self.start[j][k] = s;
                self.machine[j][k] = m;
                self.job_ready[j] = end;
                self.machine_ready[m] = end;
                self.next[j] += 1;
                self.recurse(placed + 1);
                self.next[j] -= 1;
                self.job_ready[j] = jr;
                self.machine_ready[m] = mr;
            }
        }
    }
}

fn enumerate_exhaustive(inst: &Instance, limit: usize) -> Vec<Schedule> {
    let mut b = Branch {
        inst,
        next: vec![0; inst.n_jobs],
        job_ready: vec![0; inst.n_jobs],
        machine_ready: vec![0; inst.n_machines],
        start: vec![vec![0; inst.n_ops_per_job]; inst.n_jobs],
        machine: vec![vec![0; inst.n_ops_per_job]; inst.n_jobs],
        seen: HashSet::new(),
        out: Vec::new(),
        limit,
    };
    b.recurse(0);
    b.out
}

/// Conditioning target `u = (C_max / sum p, R)`.
pub fn normalize_targets(obj: &ObjectiveVector, inst: &Instance) -> [f64; 2] {
    let total = f64::from(inst.total_proc_time().max(1));
    [obj.c_max / total, obj.resilience]
}

pub fn denormalize_targets(u: [f64; 2], inst: &Instance) -> ObjectiveVector {
    ObjectiveVector::new(u[0] * f64::from(inst.total_proc_time()), u[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Index into the owning shard's `instances`.
    pub instance: usize,
    pub x: DecisionMatrix,
    pub objectives: ObjectiveVector,
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub split: Split,
    pub instances: Vec<Instance>,
    pub samples: Vec<LabeledSample>,
}

/// On-disk sample record.
#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    instance: String,
    x: String,
    c_max: f64,
    resilience: f64,
    u: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub instances: String,
    pub samples: String,
    pub n_instances: usize,
    pub n_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub shards: Vec<ManifestEntry>,
}

fn oracle_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Labels the oracle schedules of one instance.
pub fn label_instance(inst: &Instance, limit: usize, seed: u64) -> Result<Vec<(DecisionMatrix, ObjectiveVector)>> {
    enumerate_feasible(inst, limit, seed, false)
        .iter()
        .map(|s| Ok((label_decision(s, inst)?, objectives(s, inst)?)))
        .collect()
}

fn build_range(cfg: &GeneratorConfig, indices: std::ops::Range<u64>, limit: usize, seed: u64, split: Split) -> Result<DatasetShard> {
    let mut shard = DatasetShard {
        split,
        instances: Vec::new(),
        samples: Vec::new(),
    };
    for index in indices {
        let inst = generate_instance(cfg, index)?;
        let slot = shard.instances.len();
        for (x, obj) in label_instance(&inst, limit, oracle_seed(seed, index))? {
            shard.samples.push(LabeledSample {
                instance: slot,
                target: normalize_targets(&obj, &inst),
                x,
                objectives: obj,
            });
        }
        shard.instances.push(inst);
    }
    Ok(shard)
}

/// `n_instances` generated instances (indices `0..n`), up to `limit`
/// labelled schedules each.
pub fn build_dataset(cfg: &GeneratorConfig, n_instances: usize, limit: usize, seed: u64) -> Result<DatasetShard> {
    build_range(cfg, 0..n_instances as u64, limit, seed, Split::Train)
}

/// Train and test shards over disjoint generator indices.
pub fn build_split(
    cfg: &GeneratorConfig,
    n_train: usize,
    n_test: usize,
    limit: usize,
    seed: u64,
) -> Result<(DatasetShard, DatasetShard)> {
    let n_train = n_train as u64;
    let train = build_range(cfg, 0..n_train, limit, seed, Split::Train)?;
    let test = build_range(cfg, n_train..n_train + n_test as u64, limit, seed, Split::Test)?;
    Ok((train, test))
}

impl DatasetShard {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn instance_of(&self, sample: &LabeledSample) -> &Instance {
        &self.instances[sample.instance]
    }

    /// Appends another shard, re-indexing its samples.
    pub fn extend(&mut self, other: DatasetShard) {
        let offset = self.instances.len();
        self.instances.extend(other.instances);
        self.samples.extend(other.samples.into_iter().map(|mut s| {
            s.instance += offset;
            s
        }));
    }

    pub fn write(&self, dir: &Path, tag: &str) -> Result<ManifestEntry> {
        std::fs::create_dir_all(dir)?;
        let inst_name = format!("instances-{}{tag}.jsonl", self.split.as_str());
        let samp_name = format!("samples-{}{tag}.jsonl", self.split.as_str());
        let mut w = BufWriter::new(File::create(dir.join(&inst_name))?);
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(&samp_name))?);
        for s in &self.samples {
            let rec = SampleRecord {
                instance: self.instances[s.instance].id.clone(),
                x: s.x.to_bit_string(),
                c_max: s.objectives.c_max,
                resilience: s.objectives.resilience,
                u: s.target,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(ManifestEntry {
            split: self.split,
            instances: inst_name,
            samples: samp_name,
            n_instances: self.instances.len(),
            n_samples: self.samples.len(),
        })
    }

    pub fn read(dir: &Path, entry: &ManifestEntry) -> Result<Self> {
        let instances: Vec<Instance> = read_jsonl(&dir.join(&entry.instances))?;
        let index: std::collections::HashMap<&str, usize> =
            instances.iter().enumerate().map(|(i, inst)| (inst.id.as_str(), i)).collect();
        let records: Vec<SampleRecord> = read_jsonl(&dir.join(&entry.samples))?;
        let mut samples = Vec::with_capacity(records.len());
        for r in records {
            let slot = *index
                .get(r.instance.as_str())
                .ok_or_else(|| Error::Config(format!("sample refers to unknown instance {}", r.instance)))?;
            let inst = &instances[slot];
            samples.push(LabeledSample {
                instance: slot,
                x: DecisionMatrix::from_bit_string(inst.id.clone(), inst.n_ops(), &r.x)?,
                objectives: ObjectiveVector::new(r.c_max, r.resilience),
                target: r.u,
            });
        }
        Ok(Self {
            split: entry.split,
            instances,
            samples,
        })
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes shards plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, shards: &[DatasetShard]) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for (i, shard) in shards.iter().enumerate() {
        let tag = if i == 0 { String::new() } else { format!("-{i}") };
        entries.push(shard.write(dir, &tag)?);
    }
    let path = dir.join("manifest.json");
    let manifest = Manifest {
        version: 1,
        shards: entries,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads every shard of one split listed in `dir/manifest.json`, merged.
pub fn read_dataset(dir: &Path, split: Split) -> Result<DatasetShard> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut out = DatasetShard {
        split,
        instances: Vec::new(),
        samples: Vec::new(),
    };
    for entry in manifest.shards.iter().filter(|e| e.split == split) {
        out.extend(DatasetShard::read(dir, entry)?);
    }
    Ok(out)
}
