//! Conditional relational message-passing network producing one logit per
//! ordered operation pair.
//!
//! Node state `h` (N x H) and per-relation edge state `e` (3E x H, relation
//! `j` in rows `jE..(j+1)E`) are updated residually; conditioning from the
//! timestep, instance and target is added before every normalization.

mod batch;

pub use batch::{edge_index, edge_pair, BatchLayout, GraphContext, StepInputs, EDGE_IN, NODE_IN};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NUM_EDGE_TYPES;
use crate::instance::FEATURE_LEN;
use crate::numerics::{bce_with_logits, gather_add, relu, scatter_add, sigmoid, silu, silu_grad, sinusoidal_embedding, BatchNorm, BnCache, Linear, Module, Param, Real};

/// Logit written on the diagonal; large enough to round to probability 0.
pub const DIAGONAL_LOGIT: f64 = -1e4;

const J: usize = NUM_EDGE_TYPES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub emb_dim: usize,
    pub cond_dim: usize,
    pub layers: usize,
    pub edge_types: usize,
    pub feature_len: usize,
    pub seed: u64,
}

impl DenoiserConfig {
    pub fn paper() -> Self {
        Self {
            hidden: 128,
            emb_dim: 256,
            cond_dim: 256,
            layers: 12,
            edge_types: J,
            feature_len: FEATURE_LEN,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden: 32,
            emb_dim: 64,
            cond_dim: 64,
            layers: 4,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.cond_dim == 0 || self.layers == 0 {
            return Err(Error::Config("hidden, cond_dim and layers must be positive".into()));
        }
        if self.emb_dim == 0 || self.emb_dim % 2 != 0 {
            return Err(Error::Config("emb_dim must be positive and even".into()));
        }
        if self.edge_types != J {
            return Err(Error::Config(format!("edge_types must be {J}")));
        }
        if self.feature_len != FEATURE_LEN {
            return Err(Error::Config(format!("feature_len must be {FEATURE_LEN}")));
        }
        Ok(())
    }
}

/// Linear layers with SiLU between them.
#[derive(Debug, Clone)]
struct SiluMlp<R> {
    layers: Vec<Linear<R>>,
}

struct SiluCache<R> {
    inputs: Vec<Array2<R>>,
    pre: Vec<Array2<R>>,
}

impl<R: Real> SiluMlp<R> {
    fn new(name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    fn forward(&self, x: Array2<R>) -> (Array2<R>, SiluCache<R>) {
        let mut cache = SiluCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut cur = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let y = l.forward(cur.view());
            cache.inputs.push(cur);
            if i == last {
                cur = y;
            } else {
                cur = y.mapv(silu);
                cache.pre.push(y);
            }
        }
        (cur, cache)
    }

    fn backward(&mut self, cache: &SiluCache<R>, dy: Array2<R>) {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            if i == 0 {
                self.layers[0].backward_params(cache.inputs[0].view(), d.view());
            } else {
                let mut dx = self.layers[i].backward(cache.inputs[i].view(), d.view());
                Zip::from(&mut dx).and(&cache.pre[i - 1]).for_each(|g, &p| *g *= silu_grad(p));
                d = dx;
            }
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

#[derive(Debug, Clone)]
struct Layer<R> {
    u: Linear<R>,
    /// `JH x H`, block `j` multiplies the relation-`j` aggregate.
    wm: Linear<R>,
    wt: Linear<R>,
    ws: Linear<R>,
    wo: Linear<R>,
    v: Vec<Linear<R>>,
    p: Vec<Linear<R>>,
    q: Vec<Linear<R>>,
    r: Vec<Linear<R>>,
    bn_node: BatchNorm<R>,
    bn_edge: Vec<BatchNorm<R>>,
    mlp1: Linear<R>,
    mlp2: Linear<R>,
}

struct LayerCache<R> {
    h: Array2<R>,
    e: Array2<R>,
    /// Per relation, rows aligned with `members[j]`.
    gate: Vec<Array2<R>>,
    hv: Vec<Array2<R>>,
    agg: Vec<Array2<R>>,
    bn_node: BnCache<R>,
    node_bn_out: Array2<R>,
    h_out: Array2<R>,
    bn_edge: Vec<BnCache<R>>,
    z: Array2<R>,
    m1: Array2<R>,
}

impl<R: Real> Layer<R> {
    fn new(l: usize, cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, dc) = (cfg.hidden, cfg.cond_dim);
        let n = |s: &str| format!("layer{l}.{s}");
        let per_rel = |s: &str, rng: &mut ChaCha8Rng| -> Vec<Linear<R>> {
            (0..J).map(|j| Linear::new(&n(&format!("{s}{j}")), h, h, false, rng)).collect()
        };
        let mut v = per_rel("v", rng);
        // the eligibility relation is empty on fixed-machine problems
        v[J - 1] = Linear::zeroed(&n(&format!("v{}", J - 1)), h, h, false);
        Self {
            u: Linear::new(&n("u"), h, h, false, rng),
            wm: Linear::new(&n("wm"), J * h, h, false, rng),
            wt: Linear::new(&n("wt"), dc, h, false, rng),
            ws: Linear::new(&n("ws"), dc, h, false, rng),
            wo: Linear::new(&n("wo"), dc, h, false, rng),
            v,
            p: per_rel("p", rng),
            q: per_rel("q", rng),
            r: per_rel("r", rng),
            bn_node: BatchNorm::new(&n("bn_node"), h),
            bn_edge: (0..J).map(|j| BatchNorm::new(&n(&format!("bn_edge{j}")), h)).collect(),
            mlp1: Linear::new(&n("mlp1"), h, h, true, rng),
            mlp2: Linear::new(&n("mlp2"), h, h, true, rng),
        }
    }

    fn conditioning(&self, et: &Array2<R>, es: &Array2<R>, eo: &Array2<R>) -> Array2<R> {
        let mut c = self.wt.forward(et.view());
        self.ws.forward_acc(es.view(), &mut c);
        self.wo.forward_acc(eo.view(), &mut c);
        c
    }

    fn forward(&self, lay: &BatchLayout<R>, h: Array2<R>, e: Array2<R>, c: &Array2<R>, train: bool) -> (Array2<R>, Array2<R>, Option<LayerCache<R>>) {
        let hid = h.ncols();
        let ne = lay.n_edges;
        let mut pre = self.u.forward(h.view());
        let mut gate = Vec::with_capacity(J);
        let mut hv = Vec::with_capacity(J);
        let mut agg = Vec::with_capacity(J);
        for j in 0..J {
            let hvj = self.v[j].forward(h.view());
            let members = &lay.members[j];
            // one gate row per member edge
            let mut gj = Array2::<R>::zeros((members.len(), hid));
            let mut aj = Array2::<R>::zeros((lay.n_nodes, hid));
            for (m, &ge) in members.iter().enumerate() {
                let (sn, dn) = (lay.src[ge], lay.dst[ge]);
                let g = gj.row_mut(m).into_slice().expect("contiguous row");
                let er = e.row(j * ne + ge);
                let er = er.as_slice().expect("contiguous row");
                let a = aj.row_mut(sn).into_slice().expect("contiguous row");
                let v = hvj.row(dn);
                let v = v.as_slice().expect("contiguous row");
                for c in 0..hid {
                    g[c] = sigmoid(er[c]);
                    a[c] += g[c] * v[c];
                }
            }
            gate.push(gj);
            let block = self.wm.w.value.slice(s![j * hid..(j + 1) * hid, ..]);
            general_mat_mul(R::one(), &aj, &block, R::one(), &mut pre);
            hv.push(hvj);
            agg.push(aj);
        }
        gather_add(&mut pre, c, |r| lay.node_sample[r]);
        let (node_bn_out, bn_node_cache) = if train {
            let (y, cache) = self.bn_node.forward_train(pre.view());
            (y, Some(cache))
        } else {
            (self.bn_node.forward_eval(pre.view()), None)
        };
        let mut h_out = h.clone();
        Zip::from(&mut h_out).and(&node_bn_out).for_each(|o, &y| *o += relu(y));

        let mut z = Array2::<R>::zeros((J * ne, hid));
        let mut bn_edge = Vec::new();
        for j in 0..J {
            let rows = s![j * ne..(j + 1) * ne, ..];
            let mut et = e.slice(rows).dot(&self.p[j].w.value);
            let hq = self.q[j].forward(h_out.view());
            let hr = self.r[j].forward(h_out.view());
            gather_add(&mut et, &hq, |ge| lay.src[ge]);
            gather_add(&mut et, &hr, |ge| lay.dst[ge]);
            let zj = if train {
                let (y, cache) = self.bn_edge[j].forward_train(et.view());
                bn_edge.push(cache);
                y
            } else {
                self.bn_edge[j].forward_eval(et.view())
            };
            z.slice_mut(rows).assign(&zj);
        }
        gather_add(&mut z, c, |i| lay.edge_sample[i % ne]);
        let m1 = self.mlp1.forward(z.view());
        let r1 = m1.mapv(relu);
        let mut e_out = self.mlp2.forward(r1.view());
        e_out += &e;

        let cache = bn_node_cache.map(|bn_node| LayerCache {
            h,
            e,
            gate,
            hv,
            agg,
            bn_node,
            node_bn_out,
            h_out: h_out.clone(),
            bn_edge,
            z,
            m1,
        });
        (h_out, e_out, cache)
    }

    /// Returns `(dh_in, de_in, dC)`.
    fn backward(&mut self, lay: &BatchLayout<R>, cache: LayerCache<R>, dh_out: Array2<R>, de_out: Array2<R>) -> (Array2<R>, Array2<R>, Array2<R>) {
        let hid = dh_out.ncols();
        let ne = lay.n_edges;
        let mut dc = Array2::<R>::zeros((lay.n_samples, hid));

        // edge MLP
        let r1 = cache.m1.mapv(relu);
        let mut dr1 = self.mlp2.backward(r1.view(), de_out.view());
        Zip::from(&mut dr1).and(&cache.m1).for_each(|g, &m| {
            if m <= R::zero() {
                *g = R::zero();
            }
        });
        let dz = self.mlp1.backward(cache.z.view(), dr1.view());
        scatter_add(&mut dc, dz.view(), |i| lay.edge_sample[i % ne]);

        let mut de = de_out;
        let mut dh = dh_out;
        for j in 0..J {
            let rows = s![j * ne..(j + 1) * ne, ..];
            let det = self.bn_edge[j].backward(&cache.bn_edge[j], dz.slice(rows));
            self.p[j].backward_params(cache.e.slice(rows), det.view());
            {
                let mut de_j = de.slice_mut(rows);
                general_mat_mul(R::one(), &det, &self.p[j].w.value.t(), R::one(), &mut de_j);
            }
            let mut dhq = Array2::<R>::zeros((lay.n_nodes, hid));
            let mut dhr = Array2::<R>::zeros((lay.n_nodes, hid));
            scatter_add(&mut dhq, det.view(), |ge| lay.src[ge]);
            scatter_add(&mut dhr, det.view(), |ge| lay.dst[ge]);
            self.q[j].backward_params(cache.h_out.view(), dhq.view());
            self.q[j].backward_input_acc(dhq.view(), &mut dh);
            self.r[j].backward_params(cache.h_out.view(), dhr.view());
            self.r[j].backward_input_acc(dhr.view(), &mut dh);
        }

        // node update
        let mut dy = dh.clone();
        Zip::from(&mut dy).and(&cache.node_bn_out).for_each(|g, &y| {
            if y <= R::zero() {
                *g = R::zero();
            }
        });
        let dpre = self.bn_node.backward(&cache.bn_node, dy.view());
        scatter_add(&mut dc, dpre.view(), |r| lay.node_sample[r]);
        self.u.backward_params(cache.h.view(), dpre.view());
        self.u.backward_input_acc(dpre.view(), &mut dh);

        for j in 0..J {
            let block = s![j * hid..(j + 1) * hid, ..];
            {
                let mut gw = self.wm.w.grad.slice_mut(block);
                general_mat_mul(R::one(), &cache.agg[j].t(), &dpre, R::one(), &mut gw);
            }
            let da = dpre.dot(&self.wm.w.value.slice(block).t());
            let mut dhv = Array2::<R>::zeros((lay.n_nodes, hid));
            let hvj = &cache.hv[j];
            for (m, &ge) in lay.members[j].iter().enumerate() {
                let (sn, dn) = (lay.src[ge], lay.dst[ge]);
                let a = da.row(sn);
                let a = a.as_slice().expect("contiguous row");
                let v = hvj.row(dn);
                let v = v.as_slice().expect("contiguous row");
                let g = cache.gate[j].row(m);
                let g = g.as_slice().expect("contiguous row");
                let d = de.row_mut(j * ne + ge).into_slice().expect("contiguous row");
                for c in 0..hid {
                    // d sigmoid = s (1 - s)
                    d[c] += a[c] * v[c] * g[c] * (R::one() - g[c]);
                }
                let dv = dhv.row_mut(dn).into_slice().expect("contiguous row");
                for c in 0..hid {
                    dv[c] += a[c] * g[c];
                }
            }
            self.v[j].backward_params(cache.h.view(), dhv.view());
            self.v[j].backward_input_acc(dhv.view(), &mut dh);
        }
        (dh, de, dc)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        for l in [&self.u, &self.wm, &self.wt, &self.ws, &self.wo] {
            l.visit(f);
        }
        for group in [&self.v, &self.p, &self.q, &self.r] {
            group.iter().for_each(|l| l.visit(f));
        }
        self.bn_node.visit(f);
        self.bn_edge.iter().for_each(|b| b.visit(f));
        self.mlp1.visit(f);
        self.mlp2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        for l in [&mut self.u, &mut self.wm, &mut self.wt, &mut self.ws, &mut self.wo] {
            l.visit_mut(f);
        }
        for group in [&mut self.v, &mut self.p, &mut self.q, &mut self.r] {
            group.iter_mut().for_each(|l| l.visit_mut(f));
        }
        self.bn_node.visit_mut(f);
        self.bn_edge.iter_mut().for_each(|b| b.visit_mut(f));
        self.mlp1.visit_mut(f);
        self.mlp2.visit_mut(f);
    }
}

/// Conditioning embeddings, each `B x d_c`.
#[derive(Debug, Clone)]
pub struct Conditioning<R> {
    pub time: Array2<R>,
    pub instance: Array2<R>,
    pub objective: Array2<R>,
}

struct CondCache<R> {
    time: SiluCache<R>,
    instance: SiluCache<R>,
    objective: SiluCache<R>,
}

struct ForwardCache<R> {
    cond: CondCache<R>,
    emb: Conditioning<R>,
    layers: Vec<LayerCache<R>>,
    e_final: Array2<R>,
    o_pre: Array2<R>,
    edge_in: Array2<R>,
}

#[derive(Debug, Clone)]
pub struct Denoiser<R> {
    cfg: DenoiserConfig,
    time: SiluMlp<R>,
    instance: SiluMlp<R>,
    objective: SiluMlp<R>,
    node_init: Linear<R>,
    edge_init: Linear<R>,
    layers: Vec<Layer<R>>,
    /// `JH x H` over the concatenated final edge features.
    out1: Linear<R>,
    out2: Linear<R>,
}

impl<R: Real> Denoiser<R> {
    pub fn new(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (h, de, dc) = (cfg.hidden, cfg.emb_dim, cfg.cond_dim);
        let time = SiluMlp::new("time", &[de, dc, dc], &mut rng);
        let instance = SiluMlp::new("instance", &[FEATURE_LEN, dc, dc, dc], &mut rng);
        let objective = SiluMlp::new("objective", &[2, dc, dc], &mut rng);
        let node_init = Linear::new("node_init", NODE_IN, h, true, &mut rng);
        let edge_init = Linear::new("edge_init", EDGE_IN, h, true, &mut rng);
        let layers = (0..cfg.layers).map(|l| Layer::new(l, &cfg, &mut rng)).collect();
        let out1 = Linear::new("out1", J * h, h, true, &mut rng);
        let mut out2 = Linear::new("out2", h, 1, true, &mut rng);
        // initial logits near zero, so the loss starts near ln 2
        out2.scale(0.05);
        Ok(Self {
            cfg,
            time,
            instance,
            objective,
            node_init,
            edge_init,
            layers,
            out1,
            out2,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Zeroes the per-layer conditioning projections of one stream
    /// (0 = time, 1 = instance, 2 = objective).
    pub fn zero_conditioning(&mut self, stream: usize) {
        for l in &mut self.layers {
            let lin = match stream {
                0 => &mut l.wt,
                1 => &mut l.ws,
                _ => &mut l.wo,
            };
            lin.w.value.fill(R::zero());
        }
    }

    pub fn embed_conditioning(&self, lay: &BatchLayout<R>, inp: &StepInputs) -> Conditioning<R> {
        self.embed_with_cache(lay, inp).0
    }

    fn embed_with_cache(&self, lay: &BatchLayout<R>, inp: &StepInputs) -> (Conditioning<R>, CondCache<R>) {
        let b = lay.n_samples;
        let de = self.cfg.emb_dim;
        let mut te = Array2::<R>::zeros((b, de));
        for (s, &t) in inp.t.iter().enumerate() {
            for (c, v) in sinusoidal_embedding(t, de).into_iter().enumerate() {
                te[[s, c]] = R::of(v);
            }
        }
        let mut ue = Array2::<R>::zeros((b, 2));
        for (s, u) in inp.u.iter().enumerate() {
            ue[[s, 0]] = R::of(u[0]);
            ue[[s, 1]] = R::of(u[1]);
        }
        let (time, tc) = self.time.forward(te);
        let (instance, ic) = self.instance.forward(lay.features.clone());
        let (objective, oc) = self.objective.forward(ue);
        (
            Conditioning {
                time,
                instance,
                objective,
            },
            CondCache {
                time: tc,
                instance: ic,
                objective: oc,
            },
        )
    }

    fn check_inputs(&self, lay: &BatchLayout<R>, inp: &StepInputs) -> Result<()> {
        if inp.x_t.len() != lay.n_edges {
            return Err(crate::error::dim_err(lay.n_edges, inp.x_t.len()));
        }
        if inp.t.len() != lay.n_samples || inp.u.len() != lay.n_samples {
            return Err(crate::error::dim_err(lay.n_samples, inp.t.len().min(inp.u.len())));
        }
        Ok(())
    }

    fn run(&self, lay: &BatchLayout<R>, inp: &StepInputs, train: bool) -> Result<(Vec<R>, Option<ForwardCache<R>>)> {
        self.check_inputs(lay, inp)?;
        let ne = lay.n_edges;
        let hid = self.cfg.hidden;
        let (emb, cond_cache) = self.embed_with_cache(lay, inp);

        let h = self.node_init.forward(lay.degree.view());
        let mut edge_in = Array2::<R>::zeros((ne, EDGE_IN));
        for (i, mut row) in edge_in.axis_iter_mut(Axis(0)).enumerate() {
            row[0] = if inp.x_t[i] != 0 { R::one() } else { R::zero() };
            row.slice_mut(s![1..]).assign(&lay.indicators.row(i));
        }
        let e0 = self.edge_init.forward(edge_in.view());
        let mut e = Array2::<R>::zeros((J * ne, hid));
        for j in 0..J {
            e.slice_mut(s![j * ne..(j + 1) * ne, ..]).assign(&e0);
        }

        let mut h = h;
        let mut caches = Vec::new();
        for layer in &self.layers {
            let c = layer.conditioning(&emb.time, &emb.instance, &emb.objective);
            let (h2, e2, cache) = layer.forward(lay, h, e, &c, train);
            h = h2;
            e = e2;
            if let Some(cache) = cache {
                caches.push(cache);
            }
        }

        let mut o_pre = Array2::<R>::zeros((ne, hid));
        if let Some(b) = &self.out1.b {
            o_pre += &b.value.row(0);
        }
        for j in 0..J {
            let block = self.out1.w.value.slice(s![j * hid..(j + 1) * hid, ..]);
            general_mat_mul(R::one(), &e.slice(s![j * ne..(j + 1) * ne, ..]), &block, R::one(), &mut o_pre);
        }
        let o = o_pre.mapv(relu);
        let logits = self.out2.forward(o.view()).into_raw_vec_and_offset().0;
        let cache = train.then(|| ForwardCache {
            cond: cond_cache,
            emb,
            layers: caches,
            e_final: e,
            o_pre,
            edge_in,
        });
        Ok((logits, cache))
    }

    /// Edge logits in global edge order, using running batch-norm statistics.
    pub fn forward_eval(&self, lay: &BatchLayout<R>, inp: &StepInputs) -> Result<Vec<R>> {
        Ok(self.run(lay, inp, false)?.0)
    }

    /// Edge logits using batch statistics (updates running estimates).
    pub fn forward_train(&mut self, lay: &BatchLayout<R>, inp: &StepInputs) -> Result<Vec<R>> {
        let (logits, cache) = self.run(lay, inp, true)?;
        if let Some(cache) = &cache {
            self.update_running(cache);
        }
        Ok(logits)
    }

    fn update_running(&mut self, cache: &ForwardCache<R>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            layer.bn_node.update_running(&lc.bn_node);
            for (bn, c) in layer.bn_edge.iter_mut().zip(&lc.bn_edge) {
                bn.update_running(c);
            }
        }
    }

    /// Mean BCE over all edges with batch statistics; no state changes.
    pub fn loss(&self, lay: &BatchLayout<R>, inp: &StepInputs, targets: &[u8]) -> Result<f64> {
        let logits = self.run(lay, inp, true)?.0;
        let y: Vec<R> = targets.iter().map(|&b| R::of(f64::from(b))).collect();
        Ok(bce_with_logits(&logits, &y)?.0.f64())
    }

    /// Mean BCE over all edges; accumulates gradients into every parameter.
    pub fn loss_and_backward(&mut self, lay: &BatchLayout<R>, inp: &StepInputs, targets: &[u8]) -> Result<f64> {
        let (logits, cache) = self.run(lay, inp, true)?;
        let cache = cache.ok_or_else(|| Error::Internal("missing forward cache".into()))?;
        self.update_running(&cache);
        let y: Vec<R> = targets.iter().map(|&b| R::of(f64::from(b))).collect();
        let (loss, dlogit) = bce_with_logits(&logits, &y)?;
        self.backward(lay, cache, dlogit);
        Ok(loss.f64())
    }

    fn backward(&mut self, lay: &BatchLayout<R>, cache: ForwardCache<R>, dlogit: Vec<R>) {
        let ne = lay.n_edges;
        let hid = self.cfg.hidden;
        let dl = Array2::from_shape_vec((ne, 1), dlogit).expect("one logit per edge");
        let o = cache.o_pre.mapv(relu);
        let mut d_o = self.out2.backward(o.view(), dl.view());
        Zip::from(&mut d_o).and(&cache.o_pre).for_each(|g, &p| {
            if p <= R::zero() {
                *g = R::zero();
            }
        });
        let mut de = Array2::<R>::zeros((J * ne, hid));
        if let Some(b) = &mut self.out1.b {
            let mut g = b.grad.row_mut(0);
            g += &d_o.sum_axis(Axis(0));
        }
        for j in 0..J {
            let rows = s![j * ne..(j + 1) * ne, ..];
            let block = s![j * hid..(j + 1) * hid, ..];
            {
                let mut gw = self.out1.w.grad.slice_mut(block);
                general_mat_mul(R::one(), &cache.e_final.slice(rows).t(), &d_o, R::one(), &mut gw);
            }
            let mut dej = de.slice_mut(rows);
            general_mat_mul(R::one(), &d_o, &self.out1.w.value.slice(block).t(), R::zero(), &mut dej);
        }

        let dc_dim = self.cfg.cond_dim;
        let b = lay.n_samples;
        let mut d_time = Array2::<R>::zeros((b, dc_dim));
        let mut d_inst = Array2::<R>::zeros((b, dc_dim));
        let mut d_obj = Array2::<R>::zeros((b, dc_dim));
        let mut dh = Array2::<R>::zeros((lay.n_nodes, hid));
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers).rev() {
            let (dh2, de2, dc) = layer.backward(lay, lc, dh, de);
            dh = dh2;
            de = de2;
            layer.wt.backward_params(cache.emb.time.view(), dc.view());
            layer.wt.backward_input_acc(dc.view(), &mut d_time);
            layer.ws.backward_params(cache.emb.instance.view(), dc.view());
            layer.ws.backward_input_acc(dc.view(), &mut d_inst);
            layer.wo.backward_params(cache.emb.objective.view(), dc.view());
            layer.wo.backward_input_acc(dc.view(), &mut d_obj);
        }
        self.node_init.backward_params(lay.degree.view(), dh.view());
        let mut de0 = de.slice(s![0..ne, ..]).to_owned();
        for j in 1..J {
            de0 += &de.slice(s![j * ne..(j + 1) * ne, ..]);
        }
        self.edge_init.backward_params(cache.edge_in.view(), de0.view());
        self.time.backward(&cache.cond.time, d_time);
        self.instance.backward(&cache.cond.instance, d_inst);
        self.objective.backward(&cache.cond.objective, d_obj);
    }

    /// Dense `K x K` logits per sample with the diagonal masked.
    pub fn dense_logits(lay: &BatchLayout<R>, logits: &[R]) -> Vec<Vec<f64>> {
        (0..lay.n_samples)
            .map(|s| {
                let k = lay.ks[s];
                let mut out = vec![DIAGONAL_LOGIT; k * k];
                for (local, &l) in logits[lay.edge_range(s)].iter().enumerate() {
                    let (a, b) = edge_pair(k, local);
                    out[a * k + b] = l.f64();
                }
                out
            })
            .collect()
    }

    /// Converts to another scalar type (values only).
    pub fn cast<S: Real>(&self) -> Denoiser<S> {
        let mut out = Denoiser::<S>::new(self.cfg.clone()).expect("config already validated");
        let mut vals = Vec::new();
        self.visit(&mut |p| vals.push(p.value.mapv(|v| S::of(v.f64()))));
        let mut it = vals.into_iter();
        out.visit_mut(&mut |p| p.value = it.next().expect("same parameter layout"));
        out
    }
}

impl<R: Real> Module<R> for Denoiser<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.time.visit(f);
        self.instance.visit(f);
        self.objective.visit(f);
        self.node_init.visit(f);
        self.edge_init.visit(f);
        self.layers.iter().for_each(|l| l.visit(f));
        self.out1.visit(f);
        self.out2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.time.visit_mut(f);
        self.instance.visit_mut(f);
        self.objective.visit_mut(f);
        self.node_init.visit_mut(f);
        self.edge_init.visit_mut(f);
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.out1.visit_mut(f);
        self.out2.visit_mut(f);
    }
}

/// Per-parameter comparison of analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub len: usize,
    /// `|g_a - g_n| / max(|g_a|, |g_n|)` over the whole tensor; 0 when both vanish.
    pub rel_error: f64,
}

/// Finite-difference check of every trainable parameter of a 64-bit model.
pub fn gradient_check(
    model: &mut Denoiser<f64>,
    lay: &BatchLayout<f64>,
    inp: &StepInputs,
    targets: &[u8],
    step: f64,
) -> Result<Vec<GradCheckEntry>> {
    model.zero_grad();
    model.loss_and_backward(lay, inp, targets)?;
    let mut analytic = Vec::new();
    model.visit(&mut |p| analytic.push((p.name.clone(), p.trainable, p.grad.clone())));

    let mut out = Vec::new();
    for (idx, (name, trainable, grad)) in analytic.into_iter().enumerate() {
        if !trainable {
            continue;
        }
        let n = grad.len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let mut evals = [0.0; 2];
            for (slot, sign) in [(0, 1.0), (1, -1.0)] {
                nudge(model, idx, i, sign * step);
                evals[slot] = model.loss(lay, inp, targets)?;
                nudge(model, idx, i, -sign * step);
            }
            numeric.push((evals[0] - evals[1]) / (2.0 * step));
        }
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        out.push(GradCheckEntry {
            name,
            len: n,
            rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
        });
    }
    Ok(out)
}

fn nudge(model: &mut Denoiser<f64>, param: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_mut(&mut |p| {
        if k == param {
            let v = p.value.as_slice_mut().expect("contiguous parameter");
            v[index] += delta;
        }
        k += 1;
    });
}
