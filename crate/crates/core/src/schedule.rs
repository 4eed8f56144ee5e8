//! Schedules, the decision-matrix bridge (labeling and priority-dispatch
//! decoding), objective functions and feasibility checking.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::instance::Instance;

pub type Time = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub instance_id: String,
    pub start: Vec<Vec<Time>>,
    pub machine: Vec<Vec<usize>>,
}

impl Schedule {
    /// Row-major start times, the key used for de-duplication.
    pub fn start_key(&self) -> Vec<Time> {
        self.start.iter().flatten().copied().collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.start.hash(&mut h);
        h.finish()
    }

    fn start_of(&self, inst: &Instance, op: usize) -> Time {
        let (j, k) = inst.op_coords(op);
        self.start[j][k]
    }

    fn machine_of(&self, inst: &Instance, op: usize) -> usize {
        let (j, k) = inst.op_coords(op);
        self.machine[j][k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub c_max: f64,
    pub resilience: f64,
}

impl ObjectiveVector {
    pub fn new(c_max: f64, resilience: f64) -> Self {
        Self { c_max, resilience }
    }
}

/// Binary `K x K` pairwise precedence matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub instance_id: String,
    k: usize,
    bits: Vec<u8>,
}

impl DecisionMatrix {
    pub fn zeros(instance_id: impl Into<String>, k: usize) -> Self {
        Self {
            instance_id: instance_id.into(),
            k,
            bits: vec![0; k * k],
        }
    }

    /// Builds a matrix from row-major bits; the diagonal is cleared.
    pub fn from_bits(instance_id: impl Into<String>, k: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != k * k {
            return Err(dim_err(k * k, bits.len()));
        }
        let mut m = Self::zeros(instance_id, k);
        for a in 0..k {
            for b in 0..k {
                if a != b && bits[a * k + b] {
                    m.bits[a * k + b] = 1;
                }
            }
        }
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.k + b] == 1
    }

    pub fn set(&mut self, a: usize, b: usize, value: bool) {
        if a != b {
            self.bits[a * self.k + b] = u8::from(value);
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.bits
            .chunks(self.k.max(1))
            .take(self.k)
            .map(|r| r.iter().map(|&b| usize::from(b)).sum())
            .collect()
    }

    pub fn to_scores(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    /// `'0'`/`'1'` characters, row-major.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(instance_id: impl Into<String>, k: usize, s: &str) -> Result<Self> {
        let bits: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!("invalid bit `{other}`"))),
            })
            .collect::<Result<_>>()?;
        Self::from_bits(instance_id, k, &bits)
    }

    pub fn decode(&self, inst: &Instance) -> Result<Schedule> {
        if self.k != inst.n_ops() {
            return Err(dim_err(format!("{0}x{0}", inst.n_ops()), format!("{0}x{0}", self.k)));
        }
        decode(&self.to_scores(), inst)
    }
}

/// List scheduling: repeatedly takes the ready operation (its job
/// predecessor already placed) with the highest priority, ties to the lowest
/// job index, and starts it at `max(job ready, machine ready)`. Flexible
/// operations go to the eligible machine giving the earliest start (ties to
/// the lowest machine index) unless `assignment` fixes the machine per op.
pub fn dispatch(inst: &Instance, priority: &[f64], assignment: Option<&[usize]>) -> Result<Schedule> {
    let k_total = inst.n_ops();
    if priority.len() != k_total {
        return Err(dim_err(k_total, priority.len()));
    }
    if let Some(a) = assignment {
        if a.len() != k_total {
            return Err(dim_err(k_total, a.len()));
        }
    }
    let n_ops = inst.n_ops_per_job;
    let mut next = vec![0usize; inst.n_jobs];
    let mut job_ready = vec![0 as Time; inst.n_jobs];
    let mut machine_ready = vec![0 as Time; inst.n_machines];
    let mut start = vec![vec![0 as Time; n_ops]; inst.n_jobs];
    let mut machine = vec![vec![0usize; n_ops]; inst.n_jobs];

    for _ in 0..k_total {
        let mut best: Option<(usize, f64)> = None;
        for (j, &k) in next.iter().enumerate() {
            if k == n_ops {
                continue;
            }
            let p = priority[inst.op_index(j, k)];
            if best.is_none_or(|(_, bp)| p.total_cmp(&bp).is_gt()) {
                best = Some((j, p));
            }
        }
        let (j, _) = best.ok_or_else(|| Error::Internal("dispatch ran out of operations".into()))?;
        let k = next[j];
        let op = inst.op_index(j, k);
        let m = match assignment {
            Some(a) => a[op],
            None => *inst
                .eligible_machines(j, k)
                .iter()
                .min_by_key(|&&m| (job_ready[j].max(machine_ready[m]), m))
                .ok_or_else(|| Error::Config(format!("operation ({j},{k}) has no eligible machine")))?,
        };
        if m >= inst.n_machines {
            return Err(Error::Config(format!("machine {m} out of range")));
        }
        let s = job_ready[j].max(machine_ready[m]);
        let end = s + inst.proc_time[j][k];
        start[j][k] = s;
        machine[j][k] = m;
        job_ready[j] = end;
        machine_ready[m] = end;
        next[j] += 1;
    }
    Ok(Schedule {
        instance_id: inst.id.clone(),
        start,
        machine,
    })
}

/// Decodes a real-valued or binary `K x K` matrix (row-major): an
/// operation's priority is its off-diagonal row sum, i.e. how many
/// operations it is predicted to precede.
pub fn decode(scores: &[f64], inst: &Instance) -> Result<Schedule> {
    let k = inst.n_ops();
    if scores.len() != k * k {
        return Err(dim_err(format!("{k}x{k}"), format!("{} entries", scores.len())));
    }
    let priority: Vec<f64> = (0..k)
        .map(|a| {
            scores[a * k..(a + 1) * k]
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, &v)| v)
                .sum()
        })
        .collect();
    dispatch(inst, &priority, None)
}

/// Operations sorted by `(start, job, position)`.
pub fn start_order(sched: &Schedule, inst: &Instance) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inst.n_ops()).collect();
    order.sort_by_key(|&op| (sched.start_of(inst, op), op));
    order
}

/// `x[a][b] = 1` iff `a` comes before `b` in the `(start, job, position)`
/// total order.
pub fn label_decision(sched: &Schedule, inst: &Instance) -> Result<DecisionMatrix> {
    let report = is_feasible(sched, inst);
    if !report.feasible {
        return Err(Error::Labeling(report.violations.join("; ")));
    }
    let k = inst.n_ops();
    let order = start_order(sched, inst);
    let mut x = DecisionMatrix::zeros(inst.id.clone(), k);
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            x.set(a, b, true);
        }
    }
    Ok(x)
}

pub fn makespan(sched: &Schedule, inst: &Instance) -> Time {
    (0..inst.n_ops())
        .map(|op| sched.start_of(inst, op) + inst.proc(op))
        .max()
        .unwrap_or(0)
}

/// Precedence digraph of a schedule: job chains plus consecutive operations
/// on each machine (ordered by start).
fn induced_successors(sched: &Schedule, inst: &Instance) -> Vec<Vec<usize>> {
    let k = inst.n_ops();
    let mut succ = vec![Vec::new(); k];
    for j in 0..inst.n_jobs {
        for pos in 1..inst.n_ops_per_job {
            succ[inst.op_index(j, pos - 1)].push(inst.op_index(j, pos));
        }
    }
    let mut per_machine: Vec<Vec<usize>> = vec![Vec::new(); inst.n_machines];
    for op in start_order(sched, inst) {
        let m = sched.machine_of(inst, op);
        if m < inst.n_machines {
            per_machine[m].push(op);
        }
    }
    for ops in &per_machine {
        for w in ops.windows(2) {
            if !succ[w[0]].contains(&w[1]) {
                succ[w[0]].push(w[1]);
            }
        }
    }
    succ
}

fn topological_order(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    let k = succ.len();
    let mut indeg = vec![0usize; k];
    for s in succ.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut stack: Vec<usize> = (0..k).rev().filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(k);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                stack.push(w);
            }
        }
    }
    (order.len() == k).then_some(order)
}

/// Earliest and latest start times from a critical-path pass over the
/// schedule's precedence digraph, with the deadline at the schedule's makespan.
pub fn slack_times(sched: &Schedule, inst: &Instance) -> Result<(Vec<Time>, Vec<Time>)> {
    let succ = induced_successors(sched, inst);
    let order = topological_order(&succ)
        .ok_or_else(|| Error::Internal("schedule induces a cyclic precedence graph".into()))?;
    let k = inst.n_ops();
    let mut es = vec![0 as Time; k];
    for &v in &order {
        let fin = es[v] + inst.proc(v);
        for &w in &succ[v] {
            es[w] = es[w].max(fin);
        }
    }
    let deadline = makespan(sched, inst).max(es.iter().enumerate().map(|(v, &e)| e + inst.proc(v)).max().unwrap_or(0));
    let mut ls: Vec<Time> = (0..k).map(|v| deadline - inst.proc(v)).collect();
    for &v in order.iter().rev() {
        for &w in &succ[v] {
            ls[v] = ls[v].min(ls[w] - inst.proc(v));
        }
    }
    Ok((es, ls))
}

/// `R = sum_k (LS_k - ES_k) / C_max`.
pub fn resilience(sched: &Schedule, inst: &Instance) -> Result<f64> {
    let c_max = makespan(sched, inst);
    if c_max == 0 {
        return Ok(0.0);
    }
    let (es, ls) = slack_times(sched, inst)?;
    let total: Time = ls.iter().zip(&es).map(|(l, e)| l - e).sum();
    Ok(f64::from(total) / f64::from(c_max))
}

pub fn objectives(sched: &Schedule, inst: &Instance) -> Result<ObjectiveVector> {
    Ok(ObjectiveVector {
        c_max: f64::from(makespan(sched, inst)),
        resilience: resilience(sched, inst)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<String>,
}

pub fn is_feasible(sched: &Schedule, inst: &Instance) -> FeasibilityReport {
    let mut v = Vec::new();
    fn shape_ok<T>(rows: &[Vec<T>], inst: &Instance) -> bool {
        rows.len() == inst.n_jobs && rows.iter().all(|r| r.len() == inst.n_ops_per_job)
    }
    if !shape_ok(&sched.start, inst) || !shape_ok(&sched.machine, inst) {
        v.push("schedule shape differs from instance".to_string());
        return FeasibilityReport {
            feasible: false,
            violations: v,
        };
    }
    for j in 0..inst.n_jobs {
        for k in 0..inst.n_ops_per_job {
            if !inst.eligible_machines(j, k).contains(&sched.machine[j][k]) {
                v.push(format!("operation ({j},{k}) assigned to ineligible machine {}", sched.machine[j][k]));
            }
            if k > 0 && sched.start[j][k] < sched.start[j][k - 1] + inst.proc_time[j][k - 1] {
                v.push(format!("operation ({j},{k}) starts before its job predecessor finishes"));
            }
        }
    }
    let mut per_machine: Vec<Vec<usize>> = vec![Vec::new(); inst.n_machines];
    for op in start_order(sched, inst) {
        let m = sched.machine_of(inst, op);
        if m < inst.n_machines {
            per_machine[m].push(op);
        }
    }
    for (m, ops) in per_machine.iter().enumerate() {
        for w in ops.windows(2) {
            let (a, b) = (w[0], w[1]);
            if sched.start_of(inst, b) < sched.start_of(inst, a) + inst.proc(a) {
                let (ja, ka) = inst.op_coords(a);
                let (jb, kb) = inst.op_coords(b);
                v.push(format!("operations ({ja},{ka}) and ({jb},{kb}) overlap on machine {m}"));
            }
        }
    }
    FeasibilityReport {
        feasible: v.is_empty(),
        violations: v,
    }
}
