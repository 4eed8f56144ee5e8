use ndarray::{Array2, Zip};

use super::{Module, Real};

/// Adam with decoupled weight decay. Moment buffers follow the module's
/// visit order over trainable parameters.
#[derive(Debug, Clone)]
pub struct AdamW<R> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<R>>,
    v: Vec<Array2<R>>,
}

impl<R: Real> AdamW<R> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, module: &mut impl Module<R>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = R::of(1.0 - b1.powi(t));
        let bc2 = R::of(1.0 - b2.powi(t));
        let lr = R::of(self.lr);
        let decay = R::of(1.0 - self.lr * self.weight_decay);
        let (b1, b2, eps) = (R::of(b1), R::of(b2), R::of(self.eps));
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut i = 0;
        module.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if m_all.len() == i {
                m_all.push(Array2::zeros(p.value.raw_dim()));
                v_all.push(Array2::zeros(p.value.raw_dim()));
            }
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut m_all[i])
                .and(&mut v_all[i])
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (R::one() - b1) * g;
                    *v = b2 * *v + (R::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
                });
            i += 1;
        });
    }
}

pub fn global_grad_norm<R: Real>(module: &impl Module<R>) -> f64 {
    let mut sq = 0.0;
    module.visit(&mut |p| {
        if p.trainable {
            sq += p.grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>();
        }
    });
    sq.sqrt()
}

/// Rescales all gradients so their joint l2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<R: Real>(module: &mut impl Module<R>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(module);
    if norm > max_norm {
        let s = R::of(max_norm / norm);
        module.visit_mut(&mut |p| {
            if p.trainable {
                p.grad.mapv_inplace(|g| g * s);
            }
        });
    }
    norm
}
