//! Bernoulli forward corruption, the skip-step reverse posterior, training
//! with conditioning dropout, and guided sampling over a timestep subsequence.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{BatchLayout, Denoiser, GraphContext, StepInputs};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::numerics::{clip_grad_norm, sigmoid, AdamW, Module, Real};
use crate::oracle::DatasetShard;
use crate::schedule::{objectives, DecisionMatrix, ObjectiveVector, Schedule};

/// Linear beta table with `alpha_bar_t = prod_{s<=t} (1 - beta_s)`; index 0
/// is the clean state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(horizon: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(0.0 < beta_1 && beta_1 <= beta_t && beta_t < 1.0) {
            return Err(Error::Config(format!("invalid beta range [{beta_1}, {beta_t}]")));
        }
        let mut beta = vec![0.0; horizon + 1];
        let mut alpha_bar = vec![1.0; horizon + 1];
        for t in 1..=horizon {
            beta[t] = if horizon == 1 {
                beta_1
            } else {
                beta_1 + (beta_t - beta_1) * (t - 1) as f64 / (horizon - 1) as f64
            };
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        Ok(Self { beta, alpha_bar })
    }

    /// `beta_1 = 1e-4`, `beta_T = 0.02`.
    pub fn standard(horizon: usize) -> Result<Self> {
        Self::linear(horizon, 1e-4, 0.02)
    }

    pub fn horizon(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Flip probability of the composite kernel from step `a` to `b > a`.
    pub fn flip(&self, a: usize, b: usize) -> f64 {
        (1.0 - self.alpha_bar[b] / self.alpha_bar[a]) / 2.0
    }

    /// `P(x_t = 1 | x_0)`.
    pub fn marginal(&self, x0: u8, t: usize) -> f64 {
        self.alpha_bar[t] * f64::from(x0) + (1.0 - self.alpha_bar[t]) / 2.0
    }

    /// Keeps each bit with probability `(1 + alpha_bar_t) / 2`.
    pub fn q_sample(&self, x0: &[u8], t: usize, rng: &mut impl Rng) -> Vec<u8> {
        let f = self.flip(0, t);
        x0.iter().map(|&b| if rng.gen::<f64>() < f { 1 - b } else { b }).collect()
    }

    /// `P(x_a = 1 | x_b, x0 ~ Bern(p))` for `a < b`.
    pub fn posterior(&self, x_b: u8, p: f64, a: usize, b: usize) -> Result<f64> {
        if a >= b {
            return Err(Error::Ordering { a, b });
        }
        let u = self.flip(a, b);
        let v = self.flip(0, a);
        Ok(posterior_with_flips(x_b, p, u, v))
    }
}

/// `f + (1 - 2f) [y = z]`.
pub fn kernel(y: u8, z: u8, f: f64) -> f64 {
    if y == z {
        1.0 - f
    } else {
        f
    }
}

/// Posterior over `x_a` with step flip `u` (a -> b) and clean flip `v`
/// (0 -> a), mixing the two clean states by `p`.
pub fn posterior_with_flips(x_b: u8, p: f64, u: f64, v: f64) -> f64 {
    // P(x_a = 1 | x0, x_b); None when x_b is impossible under x0
    let given = |x0: u8| {
        let joint = |xa: u8| kernel(x_b, xa, u) * kernel(xa, x0, v);
        let z = joint(0) + joint(1);
        (z > 0.0).then(|| joint(1) / z)
    };
    match (given(0).filter(|_| p < 1.0), given(1).filter(|_| p > 0.0)) {
        (Some(q0), Some(q1)) => q0 + p * (q1 - q0),
        (Some(q), None) | (None, Some(q)) => q,
        (None, None) => f64::from(x_b),
    }
}

/// `uncond + gamma (cond - uncond)`; exactly `cond` when `gamma == 1`.
pub fn cfg_combine(cond: f64, uncond: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        cond
    } else {
        uncond + gamma * (cond - uncond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauKind {
    Linear,
    Cosine,
}

impl FromStr for TauKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Increasing timestep subsequence ending at `horizon`, with `c_i = i/M`.
/// Cosine spacing is `T - floor(cos(c_i pi/2) T)`, which is denser near
/// `t = 1`.
pub fn tau_schedule(kind: TauKind, steps: usize, horizon: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > horizon {
        return Err(Error::Config(format!("steps must lie in [1, {horizon}], got {steps}")));
    }
    let tf = horizon as f64;
    let mut out: Vec<usize> = (1..=steps)
        .map(|i| {
            let c = i as f64 / steps as f64;
            let v = match kind {
                TauKind::Linear => (c * tf).round(),
                TauKind::Cosine => tf - ((c * std::f64::consts::FRAC_PI_2).cos() * tf).floor(),
            };
            (v as usize).clamp(1, horizon)
        })
        .collect();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub schedule: TauKind,
    pub guidance: f64,
    pub threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            schedule: TauKind::Cosine,
            guidance: 2.0,
            threshold: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.guidance >= 1.0) {
            return Err(Error::Config(format!("guidance must be >= 1, got {}", self.guidance)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        tau_schedule(self.schedule, self.steps, horizon).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub x: DecisionMatrix,
    pub schedule: Schedule,
    pub objectives: ObjectiveVector,
}

/// Generates `n` candidates for target `u` (normalized). Candidate `c` draws
/// all its noise from stream `c` of a generator seeded with `seed`.
#[allow(clippy::too_many_arguments)]
pub fn sample<R: Real>(
    model: &Denoiser<R>,
    inst: &Instance,
    ctx: &GraphContext,
    u: [f64; 2],
    noise: &NoiseSchedule,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    sampler.validate(noise.horizon())?;
    let taus = tau_schedule(sampler.schedule, sampler.steps, noise.horizon())?;
    let guided = sampler.guidance != 1.0;
    let ne = ctx.num_edges();
    let copies = if guided { 2 * n } else { n };
    let contexts: Vec<&GraphContext> = std::iter::repeat_n(ctx, copies).collect();
    let lay = BatchLayout::<R>::new(&contexts);

    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|c| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(c as u64);
            r
        })
        .collect();
    let mut x: Vec<Vec<u8>> = rngs.iter_mut().map(|r| (0..ne).map(|_| u8::from(r.gen::<bool>())).collect()).collect();
    let mut us = vec![u; n];
    if guided {
        us.extend(std::iter::repeat_n([0.0, 0.0], n));
    }

    for (step, &t) in taus.iter().enumerate().rev() {
        let mut x_t = Vec::with_capacity(copies * ne);
        for _ in 0..copies / n {
            x.iter().for_each(|xc| x_t.extend_from_slice(xc));
        }
        let inp = StepInputs {
            x_t,
            t: vec![t as f64; copies],
            u: us.clone(),
        };
        let logits = model.forward_eval(&lay, &inp)?;
        for c in 0..n {
            let cond = &logits[c * ne..(c + 1) * ne];
            let probs = (0..ne).map(|e| {
                let l = if guided {
                    cfg_combine(cond[e].f64(), logits[(n + c) * ne + e].f64(), sampler.guidance)
                } else {
                    cond[e].f64()
                };
                sigmoid(l)
            });
            if step == 0 {
                x[c] = probs.map(|p| u8::from(p > sampler.threshold)).collect();
            } else {
                let prev = taus[step - 1];
                let rng = &mut rngs[c];
                for (bit, p) in x[c].iter_mut().zip(probs.collect::<Vec<_>>()) {
                    let p1 = noise.posterior(*bit, p, prev, t)?;
                    *bit = u8::from(rng.gen::<f64>() < p1);
                }
            }
        }
    }

    x.into_iter()
        .map(|bits| {
            let dense: Vec<bool> = ctx.to_dense(&bits.iter().map(|&b| f64::from(b)).collect::<Vec<_>>(), 0.0).into_iter().map(|v| v > 0.5).collect();
            let xm = DecisionMatrix::from_bits(inst.id.clone(), ctx.k, &dense)?;
            let schedule = xm.decode(inst)?;
            let objectives = objectives(&schedule, inst)?;
            Ok(Candidate {
                x: xm,
                schedule,
                objectives,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub p_drop: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            p_drop: 0.1,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
    pub seconds: f64,
}

/// Per-epoch progress callback: `(epoch, mean loss)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, f64);

/// Fits the denoiser to the shard's decision matrices.
pub fn train<R: Real>(
    model: &mut Denoiser<R>,
    data: &DatasetShard,
    noise: &NoiseSchedule,
    cfg: &TrainConfig,
    progress: Option<Progress<'_>>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let started = std::time::Instant::now();
    let contexts = data.instances.iter().map(GraphContext::new).collect::<Result<Vec<_>>>()?;
    let clean: Vec<Vec<u8>> = data
        .samples
        .iter()
        .map(|s| contexts[s.instance].edge_bits(&s.x))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::<R>::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut progress = progress;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let ctxs: Vec<&GraphContext> = chunk.iter().map(|&i| &contexts[data.samples[i].instance]).collect();
            let lay = BatchLayout::<R>::new(&ctxs);
            let mut inp = StepInputs {
                x_t: Vec::with_capacity(lay.n_edges),
                t: Vec::with_capacity(chunk.len()),
                u: Vec::with_capacity(chunk.len()),
            };
            let mut targets = Vec::with_capacity(lay.n_edges);
            for &i in chunk {
                let t = rng.gen_range(1..=noise.horizon());
                inp.x_t.extend(noise.q_sample(&clean[i], t, &mut rng));
                inp.t.push(t as f64);
                let drop = rng.gen::<f64>() < cfg.p_drop;
                inp.u.push(if drop { [0.0, 0.0] } else { data.samples[i].target });
                targets.extend_from_slice(&clean[i]);
            }
            model.zero_grad();
            total += model.loss_and_backward(&lay, &inp, &targets)?;
            clip_grad_norm(model, cfg.clip_norm);
            opt.step(model);
            batches += 1;
        }
        let mean = total / batches as f64;
        report.epoch_loss.push(mean);
        if let Some(cb) = progress.as_mut() {
            cb(epoch, mean);
        }
    }
    report.steps = opt.steps();
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = NoiseSchedule::standard(1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!((s.flip(t - 1, t) - s.beta(t) / 2.0).abs() < 1e-15);
            let f = s.flip(0, t);
            assert!((0.0..0.5).contains(&f));
        }
        assert!(s.marginal(1, 1000) - 0.5 < 1e-4 && s.marginal(0, 1000) > 0.4999);
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err());
    }

    #[test]
    fn composed_kernels_match_marginal() {
        let s = NoiseSchedule::standard(1000).unwrap();
        for x0 in [0u8, 1] {
            let mut p = f64::from(x0);
            for t in 1..=1000 {
                let f = s.beta(t) / 2.0;
                p = p * (1.0 - f) + (1.0 - p) * f;
                assert!((p - s.marginal(x0, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q_sample_flip_rate_at_first_step() {
        let s = NoiseSchedule::standard(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let flips = s.q_sample(&vec![1u8; n], 1, &mut rng).iter().filter(|&&b| b == 0).count() as f64;
        let f = 5e-5;
        let sigma = (n as f64 * f * (1.0 - f)).sqrt();
        assert!((flips - n as f64 * f).abs() < 3.0 * sigma, "{flips}");
    }

    #[test]
    fn posterior_limits_and_normalization() {
        let s = NoiseSchedule::standard(100).unwrap();
        assert!(s.posterior(1, 0.3, 5, 5).is_err());
        assert!(matches!(s.posterior(1, 0.3, 6, 5), Err(Error::Ordering { a: 6, b: 5 })));
        for xb in [0u8, 1] {
            assert_eq!(posterior_with_flips(xb, 0.7, 0.0, 0.2), f64::from(xb));
        }
        for p in [0.0, 1.0] {
            for xb in [0u8, 1] {
                assert_eq!(posterior_with_flips(xb, p, 0.3, 0.0), p);
            }
        }
        for a in 0..20 {
            for b in a + 1..21 {
                for xb in [0u8, 1] {
                    let p1 = s.posterior(xb, 0.37, a, b).unwrap();
                    assert!((0.0..=1.0).contains(&p1));
                }
            }
        }
    }

    #[test]
    fn posterior_chain_identity_on_grid() {
        let s = NoiseSchedule::standard(1000).unwrap();
        let grid: Vec<usize> = (0..10).map(|i| i * 100).collect();
        for &a in &grid {
            for &b in grid.iter().filter(|&&b| b > a) {
                let (u, v, fb) = (s.flip(a, b), s.flip(0, a), s.flip(0, b));
                for p in (0..10).map(|i| i as f64 / 9.0) {
                    for xb in [0u8, 1] {
                        let mut lhs = 0.0;
                        let mut rhs = 0.0;
                        for (x0, w) in [(0u8, 1.0 - p), (1u8, p)] {
                            lhs += w * (0..2u8).map(|xa| kernel(xb, xa, u) * kernel(xa, x0, v)).sum::<f64>();
                            rhs += w * kernel(xb, x0, fb);
                        }
                        assert!((lhs - rhs).abs() < 1e-12);
                        let p1 = s.posterior(xb, p, a.max(0), b).unwrap();
                        assert!(((1.0 - p1) + p1 - 1.0).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn cfg_combine_identities() {
        assert_eq!(cfg_combine(0.1 + 0.2, -7.3, 1.0), 0.1 + 0.2);
        for g in [1.0, 2.0, 5.5] {
            assert_eq!(cfg_combine(1.25, 1.25, g), 1.25);
        }
        assert_eq!(cfg_combine(3.0, 1.0, 2.0), 5.0);
    }

    #[test]
    fn tau_schedules() {
        assert_eq!(tau_schedule(TauKind::Linear, 1000, 1000).unwrap(), (1..=1000).collect::<Vec<_>>());
        let lin = tau_schedule(TauKind::Linear, 5, 100).unwrap();
        assert_eq!(lin, vec![20, 40, 60, 80, 100]);
        assert_eq!(tau_schedule(TauKind::Cosine, 1, 1000).unwrap(), vec![1000]);
        let cos = tau_schedule(TauKind::Cosine, 4, 1000).unwrap();
        assert_eq!(cos, vec![77, 293, 618, 1000]);
        let gaps: Vec<usize> = cos.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.windows(2).all(|g| g[0] < g[1]));
        assert!(tau_schedule(TauKind::Cosine, 1001, 1000).is_err());
        assert!(tau_schedule(TauKind::Linear, 0, 10).is_err());
        let c = tau_schedule(TauKind::Cosine, 50, 200).unwrap();
        assert_eq!((c[0], *c.last().unwrap()), (1, 200));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sampler_validation() {
        let mut s = SamplerConfig::default();
        assert!(s.validate(200).is_ok());
        s.guidance = 0.5;
        assert!(s.validate(200).is_err());
        s.guidance = 2.0;
        s.threshold = 1.0;
        assert!(s.validate(200).is_err());
        s.threshold = 0.5;
        s.steps = 201;
        assert!(s.validate(200).is_err());
        assert_eq!("COSINE".parse::<TauKind>().unwrap(), TauKind::Cosine);
    }
}
