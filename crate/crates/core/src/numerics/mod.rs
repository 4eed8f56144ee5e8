//! Dense arithmetic with hand-derived adjoints for the denoiser's layers.
//!
//! Matrices are row-major `Array2`; rows index nodes or edges, columns
//! features. Every layer exposes `forward` returning a cache and `backward`
//! consuming it, accumulating parameter gradients in place.

mod checkpoint;
mod layers;
mod optim;

pub use checkpoint::{content_id, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointFile};
pub use layers::{BatchNorm, BnCache, Linear};
pub use optim::{clip_grad_norm, global_grad_norm, AdamW};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;

/// Scalar type the network is generic over.
pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// A learnable tensor with its gradient accumulator. Non-trainable entries
/// (running statistics) share the storage and checkpoint path.
#[derive(Debug, Clone)]
pub struct Param<R> {
    pub name: String,
    pub value: Array2<R>,
    pub grad: Array2<R>,
    pub trainable: bool,
}

impl<R: Real> Param<R> {
    pub fn new(name: impl Into<String>, value: Array2<R>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Array2<R>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Array2::zeros((rows, cols)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let value = Array2::from_shape_simple_fn((rows, cols), || R::of(rng.gen_range(-bound..=bound)));
        Self::new(name, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(R::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Visitor over every parameter in a fixed order.
pub trait Module<R: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.len();
            }
        });
        n
    }
}

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

pub fn relu<R: Real>(x: R) -> R {
    x.max(R::zero())
}

pub fn silu<R: Real>(x: R) -> R {
    x * sigmoid(x)
}

/// `d silu / dx`.
pub fn silu_grad<R: Real>(x: R) -> R {
    let s = sigmoid(x);
    s * (R::one() + x * (R::one() - s))
}

/// `log(1 + e^x)` without overflow.
pub fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

/// Mean of `softplus(l) - y l` and its gradient `(sigmoid(l) - y) / n`.
pub fn bce_with_logits<R: Real>(logits: &[R], targets: &[R]) -> crate::error::Result<(R, Vec<R>)> {
    if logits.len() != targets.len() {
        return Err(crate::error::dim_err(logits.len(), targets.len()));
    }
    if logits.is_empty() {
        return Ok((R::zero(), Vec::new()));
    }
    let n = R::of(logits.len() as f64);
    let mut loss = R::zero();
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&l, &y)| {
            loss += softplus(l) - y * l;
            (sigmoid(l) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Interleaved `[sin(t w_0), cos(t w_0), sin(t w_1), ...]` with
/// `w_i = 10000^(-2i/d)`. `d` must be even.
pub fn sinusoidal_embedding(t: f64, d: usize) -> Vec<f64> {
    assert!(d % 2 == 0, "embedding dimension must be even");
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let w = 10000f64.powf(-2.0 * i as f64 / d as f64);
        out.push((t * w).sin());
        out.push((t * w).cos());
    }
    out
}

/// `out[r] += x[index(r)]` for every row of `out`.
pub fn gather_add<R: Real>(out: &mut Array2<R>, x: &Array2<R>, index: impl Fn(usize) -> usize) {
    let f = x.ncols();
    debug_assert_eq!(out.ncols(), f);
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for (r, o) in os.chunks_exact_mut(f.max(1)).enumerate() {
        let i = index(r) * f;
        for (o, &v) in o.iter_mut().zip(&xs[i..i + f]) {
            *o += v;
        }
    }
}

/// `out[index(r)] += x[r]` for every row of `x`.
pub fn scatter_add<R: Real>(out: &mut Array2<R>, x: ArrayView2<R>, index: impl Fn(usize) -> usize) {
    let f = x.ncols();
    debug_assert_eq!(out.ncols(), f);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for (r, v) in xs.chunks_exact(f.max(1)).enumerate() {
        let i = index(r) * f;
        for (o, &v) in os[i..i + f].iter_mut().zip(v) {
            *o += v;
        }
    }
}

/// `out[r] = x[index[r]]`.
pub fn gather_rows<R: Real>(x: ArrayView2<R>, index: &[usize]) -> Array2<R> {
    let mut out = Array2::zeros((index.len(), x.ncols()));
    for (mut row, &i) in out.axis_iter_mut(Axis(0)).zip(index) {
        row.assign(&x.row(i));
    }
    out
}

/// `out[index[r]] += x[r]`, with `rows` output rows.
pub fn scatter_add_rows<R: Real>(x: ArrayView2<R>, index: &[usize], rows: usize) -> Array2<R> {
    let mut out = Array2::zeros((rows, x.ncols()));
    for (row, &i) in x.axis_iter(Axis(0)).zip(index) {
        let mut o = out.row_mut(i);
        o += &row;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(silu(0.0f64), 0.0);
        assert!(sigmoid(-800.0f64).is_finite() && sigmoid(800.0f64) == 1.0);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let x = array![[1.0f64, -2.0], [3.5, 0.25]];
        assert_eq!(&x * &Array2::<f64>::ones((2, 2)), x);
    }

    #[test]
    fn silu_derivative_matches_finite_difference() {
        for x in [-3.0f64, -0.4, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn bce_reference_values() {
        let (l, g) = bce_with_logits(&[0.0f64], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, vec![-0.5]);
        let (l, _) = bce_with_logits(&[40.0f64], &[1.0]).unwrap();
        assert!(l.is_finite() && l < 1e-15);
        let (l, _) = bce_with_logits(&[-1000.0f64, 1000.0], &[0.0, 1.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(bce_with_logits(&[0.0f64], &[]).is_err());
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_target() {
        let logits = [-2.0f64, 0.3, 1.7];
        let targets = [1.0, 0.0, 1.0];
        let (_, g) = bce_with_logits(&logits, &targets).unwrap();
        for i in 0..3 {
            assert!((g[i] * 3.0 - (sigmoid(logits[i]) - targets[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn sinusoidal_properties() {
        let e0 = sinusoidal_embedding(0.0, 8);
        for i in 0..4 {
            assert_eq!(e0[2 * i], 0.0);
            assert_eq!(e0[2 * i + 1], 1.0);
        }
        let embs: Vec<_> = (0..200).map(|t| sinusoidal_embedding(t as f64, 16)).collect();
        for a in 0..embs.len() {
            let norm: f64 = embs[a].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 4.0 + 1e-12);
            for b in a + 1..embs.len() {
                assert_ne!(embs[a], embs[b]);
            }
        }
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        let x = array![[1.0f64, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let idx = [2, 0, 2, 1];
        let g = gather_rows(x.view(), &idx);
        assert_eq!(g.row(0), x.row(2));
        let y = array![[1.0f64, 0.0], [0.0, 1.0], [2.0, 2.0], [1.0, 1.0]];
        // <gather(x), y> = <x, scatter(y)>
        let lhs = (&g * &y).sum();
        let rhs = (&x * &scatter_add_rows(y.view(), &idx, 3)).sum();
        assert_eq!(lhs, rhs);

        let mut acc = Array2::<f64>::zeros((4, 2));
        gather_add(&mut acc, &x, |r| idx[r]);
        assert_eq!(acc, g);
        let mut back = Array2::<f64>::zeros((3, 2));
        scatter_add(&mut back, y.view(), |r| idx[r]);
        assert_eq!(back, scatter_add_rows(y.view(), &idx, 3));
    }
}
