//! Heterogeneous constraint graph over operation nodes. Each edge type is one
//! constraint class and defines its own message-passing neighbourhood.

use crate::instance::{Instance, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeType {
    JobPrecedence = 0,
    MachineConflict = 1,
    EligibilityOverlap = 2,
}

/// Edge types the denoiser reserves parameters for.
pub const NUM_EDGE_TYPES: usize = 3;

impl EdgeType {
    pub const ALL: [EdgeType; NUM_EDGE_TYPES] = [
        EdgeType::JobPrecedence,
        EdgeType::MachineConflict,
        EdgeType::EligibilityOverlap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Edge types that carry constraints for a problem kind.
    pub fn used_by(kind: ProblemKind) -> &'static [EdgeType] {
        match kind {
            ProblemKind::Fsp | ProblemKind::Jsp => &[EdgeType::JobPrecedence, EdgeType::MachineConflict],
            ProblemKind::Fjsp => &Self::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalGraph {
    k: usize,
    kind: ProblemKind,
    /// Directed `(k, k')` pairs per edge type, sorted.
    edges: [Vec<(usize, usize)>; NUM_EDGE_TYPES],
    /// Dense membership, `member[j][a * k + b]`.
    member: [Vec<bool>; NUM_EDGE_TYPES],
    job: Vec<usize>,
}

impl RelationalGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn edge_types(&self) -> &'static [EdgeType] {
        EdgeType::used_by(self.kind)
    }

    pub fn edges(&self, t: EdgeType) -> &[(usize, usize)] {
        &self.edges[t.index()]
    }

    pub fn has_edge(&self, t: EdgeType, a: usize, b: usize) -> bool {
        self.member[t.index()][a * self.k + b]
    }

    pub fn same_job(&self, a: usize, b: usize) -> bool {
        self.job[a] == self.job[b]
    }

    /// `K x 2J` row-major counts: for each edge type, in-degree then out-degree.
    pub fn degree_features(&self) -> Vec<f64> {
        let cols = 2 * NUM_EDGE_TYPES;
        let mut out = vec![0.0; self.k * cols];
        for (t, edges) in self.edges.iter().enumerate() {
            for &(a, b) in edges {
                out[a * cols + 2 * t + 1] += 1.0;
                out[b * cols + 2 * t] += 1.0;
            }
        }
        out
    }

    /// Membership bit per edge type followed by a same-job bit.
    pub fn structural_indicators(&self, a: usize, b: usize) -> [bool; NUM_EDGE_TYPES + 1] {
        let mut out = [false; NUM_EDGE_TYPES + 1];
        for (t, slot) in out.iter_mut().take(NUM_EDGE_TYPES).enumerate() {
            *slot = self.member[t][a * self.k + b];
        }
        out[NUM_EDGE_TYPES] = self.same_job(a, b);
        out
    }

    /// Graph with nodes relabelled so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut edges: [Vec<(usize, usize)>; NUM_EDGE_TYPES] = Default::default();
        let mut member: [Vec<bool>; NUM_EDGE_TYPES] = std::array::from_fn(|_| vec![false; k * k]);
        for t in 0..NUM_EDGE_TYPES {
            for &(a, b) in &self.edges[t] {
                let (pa, pb) = (perm[a], perm[b]);
                edges[t].push((pa, pb));
                member[t][pa * k + pb] = true;
            }
            edges[t].sort_unstable();
        }
        let mut job = vec![0; k];
        for v in 0..k {
            job[perm[v]] = self.job[v];
        }
        Self {
            k,
            kind: self.kind,
            edges,
            member,
            job,
        }
    }
}

/// Job-precedence edges join consecutive operations of a job in both
/// directions; machine-conflict edges join every ordered pair sharing a
/// fixed machine; eligibility-overlap edges join ordered pairs whose eligible
/// sets intersect (flexible instances only).
pub fn build_graph(inst: &Instance) -> RelationalGraph {
    let k = inst.n_ops();
    let mut edges: [Vec<(usize, usize)>; NUM_EDGE_TYPES] = Default::default();

    for j in 0..inst.n_jobs {
        for pos in 1..inst.n_ops_per_job {
            let (a, b) = (inst.op_index(j, pos - 1), inst.op_index(j, pos));
            edges[EdgeType::JobPrecedence.index()].push((a, b));
            edges[EdgeType::JobPrecedence.index()].push((b, a));
        }
    }

    let conflict = if inst.kind.is_flexible() {
        EdgeType::EligibilityOverlap
    } else {
        EdgeType::MachineConflict
    };
    for a in 0..k {
        let ea = inst.eligible_of(a);
        for b in 0..k {
            if a != b && inst.eligible_of(b).iter().any(|m| ea.contains(m)) {
                edges[conflict.index()].push((a, b));
            }
        }
    }

    let mut member: [Vec<bool>; NUM_EDGE_TYPES] = std::array::from_fn(|_| vec![false; k * k]);
    for t in 0..NUM_EDGE_TYPES {
        edges[t].sort_unstable();
        for &(a, b) in &edges[t] {
            member[t][a * k + b] = true;
        }
    }
    let job = (0..k).map(|op| inst.op_coords(op).0).collect();
    RelationalGraph {
        k,
        kind: inst.kind,
        edges,
        member,
        job,
    }
}
