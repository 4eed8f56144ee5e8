//! Per-instance graph context and the flattened multi-sample batch layout.
//!
//! Edges are the `K(K-1)` ordered off-diagonal pairs of each sample, laid out
//! source-major: local edge `a*(K-1) + b'` joins `a -> b` where `b'` skips
//! the diagonal.

use ndarray::Array2;

use crate::error::{dim_err, Result};
use crate::graph::{build_graph, EdgeType, RelationalGraph, NUM_EDGE_TYPES};
use crate::instance::{encode_features, Instance, ProblemKind, FEATURE_LEN};
use crate::numerics::Real;
use crate::schedule::DecisionMatrix;

/// Degree features (in/out per edge type).
pub const NODE_IN: usize = 2 * NUM_EDGE_TYPES;
/// Noisy bit plus structural indicators.
pub const EDGE_IN: usize = NUM_EDGE_TYPES + 2;

/// Everything the denoiser needs from one instance, independent of `x_t`.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub k: usize,
    pub kind: ProblemKind,
    pub instance_id: String,
    degree: Vec<f64>,
    indicators: Vec<[bool; NUM_EDGE_TYPES + 1]>,
    members: [Vec<usize>; NUM_EDGE_TYPES],
    features: Vec<f64>,
}

pub fn edge_index(k: usize, a: usize, b: usize) -> usize {
    debug_assert!(a != b);
    a * (k - 1) + if b < a { b } else { b - 1 }
}

pub fn edge_pair(k: usize, e: usize) -> (usize, usize) {
    let a = e / (k - 1);
    let r = e % (k - 1);
    (a, if r < a { r } else { r + 1 })
}

impl GraphContext {
    pub fn new(inst: &Instance) -> Result<Self> {
        let (features, _) = encode_features(inst)?;
        Ok(Self::from_graph(&build_graph(inst), inst.id.clone(), features))
    }

    /// Degree counts are divided by `max(K-1, 1)`.
    pub fn from_graph(g: &RelationalGraph, instance_id: String, features: Vec<f64>) -> Self {
        let k = g.k();
        let norm = (k.max(2) - 1) as f64;
        let degree = g.degree_features().into_iter().map(|d| d / norm).collect();
        let n_edges = k * k.saturating_sub(1);
        let mut indicators = Vec::with_capacity(n_edges);
        let mut members: [Vec<usize>; NUM_EDGE_TYPES] = Default::default();
        for e in 0..n_edges {
            let (a, b) = edge_pair(k, e);
            indicators.push(g.structural_indicators(a, b));
        }
        for t in EdgeType::ALL {
            members[t.index()] = g.edges(t).iter().map(|&(a, b)| edge_index(k, a, b)).collect();
        }
        Self {
            k,
            kind: g.kind(),
            instance_id,
            degree,
            indicators,
            members,
            features,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.k * self.k.saturating_sub(1)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = features;
        self
    }

    /// Off-diagonal bits of `x` in edge order.
    pub fn edge_bits(&self, x: &DecisionMatrix) -> Result<Vec<u8>> {
        if x.k() != self.k {
            return Err(dim_err(format!("{}x{}", self.k, self.k), format!("{}x{}", x.k(), x.k())));
        }
        Ok((0..self.num_edges())
            .map(|e| {
                let (a, b) = edge_pair(self.k, e);
                u8::from(x.get(a, b))
            })
            .collect())
    }

    /// Dense `K x K` row-major matrix from edge values, `diag` on the diagonal.
    pub fn to_dense(&self, edge_values: &[f64], diag: f64) -> Vec<f64> {
        let mut out = vec![diag; self.k * self.k];
        for (e, &v) in edge_values.iter().enumerate() {
            let (a, b) = edge_pair(self.k, e);
            out[a * self.k + b] = v;
        }
        out
    }
}

/// Structure of a batch of graphs flattened into node and edge rows.
#[derive(Debug, Clone)]
pub struct BatchLayout<R> {
    pub n_samples: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub ks: Vec<usize>,
    pub node_offset: Vec<usize>,
    pub edge_offset: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub node_sample: Vec<usize>,
    pub edge_sample: Vec<usize>,
    /// Global edge ids per relation.
    pub members: [Vec<usize>; NUM_EDGE_TYPES],
    pub degree: Array2<R>,
    pub indicators: Array2<R>,
    pub features: Array2<R>,
}

/// Per-step inputs: noisy bits in global edge order, timestep and
/// normalized target per sample.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub x_t: Vec<u8>,
    pub t: Vec<f64>,
    pub u: Vec<[f64; 2]>,
}

impl<R: Real> BatchLayout<R> {
    pub fn new(contexts: &[&GraphContext]) -> Self {
        let b = contexts.len();
        let ks: Vec<usize> = contexts.iter().map(|c| c.k).collect();
        let mut node_offset = Vec::with_capacity(b + 1);
        let mut edge_offset = Vec::with_capacity(b + 1);
        let (mut n, mut e) = (0, 0);
        for c in contexts {
            node_offset.push(n);
            edge_offset.push(e);
            n += c.k;
            e += c.num_edges();
        }
        node_offset.push(n);
        edge_offset.push(e);

        let mut src = Vec::with_capacity(e);
        let mut dst = Vec::with_capacity(e);
        let mut node_sample = Vec::with_capacity(n);
        let mut edge_sample = Vec::with_capacity(e);
        let mut members: [Vec<usize>; NUM_EDGE_TYPES] = Default::default();
        let mut degree = Array2::zeros((n, NODE_IN));
        let mut indicators = Array2::zeros((e, EDGE_IN - 1));
        let mut features = Array2::zeros((b, FEATURE_LEN));
        for (s, c) in contexts.iter().enumerate() {
            let (no, eo) = (node_offset[s], edge_offset[s]);
            node_sample.extend(std::iter::repeat_n(s, c.k));
            for local in 0..c.num_edges() {
                let (a, bb) = edge_pair(c.k, local);
                src.push(no + a);
                dst.push(no + bb);
                edge_sample.push(s);
                for (col, &bit) in c.indicators[local].iter().enumerate() {
                    if bit {
                        indicators[[eo + local, col]] = R::one();
                    }
                }
            }
            for (t, m) in c.members.iter().enumerate() {
                members[t].extend(m.iter().map(|&l| eo + l));
            }
            for v in 0..c.k {
                for col in 0..NODE_IN {
                    degree[[no + v, col]] = R::of(c.degree[v * NODE_IN + col]);
                }
            }
            for (col, &f) in c.features.iter().enumerate().take(FEATURE_LEN) {
                features[[s, col]] = R::of(f);
            }
        }
        Self {
            n_samples: b,
            n_nodes: n,
            n_edges: e,
            ks,
            node_offset,
            edge_offset,
            src,
            dst,
            node_sample,
            edge_sample,
            members,
            degree,
            indicators,
            features,
        }
    }

    /// Edge rows of sample `s`.
    pub fn edge_range(&self, s: usize) -> std::ops::Range<usize> {
        self.edge_offset[s]..self.edge_offset[s + 1]
    }
}
