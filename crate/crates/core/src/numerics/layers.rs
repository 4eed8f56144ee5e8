use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{Module, Param, Real};

/// `y = x W + b`, weight stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear<R> {
    pub w: Param<R>,
    pub b: Option<Param<R>>,
}

impl<R: Real> Linear<R> {
    /// Uniform init in `±1/sqrt(in)`.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self {
            w: Param::uniform(format!("{name}.w"), fan_in, fan_out, bound, rng),
            b: bias.then(|| Param::uniform(format!("{name}.b"), 1, fan_out, bound, rng)),
        }
    }

    pub fn zeroed(name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            w: Param::zeros(format!("{name}.w"), fan_in, fan_out),
            b: bias.then(|| Param::zeros(format!("{name}.b"), 1, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn scale(&mut self, s: f64) {
        self.w.value.mapv_inplace(|v| v * R::of(s));
        if let Some(b) = &mut self.b {
            b.value.mapv_inplace(|v| v * R::of(s));
        }
    }

    pub fn forward(&self, x: ArrayView2<R>) -> Array2<R> {
        let mut y = x.dot(&self.w.value);
        if let Some(b) = &self.b {
            y += &b.value.row(0);
        }
        y
    }

    /// `out += x W` (no bias).
    pub fn forward_acc(&self, x: ArrayView2<R>, out: &mut Array2<R>) {
        general_mat_mul(R::one(), &x, &self.w.value, R::one(), out);
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&mut self, x: ArrayView2<R>, dy: ArrayView2<R>) {
        general_mat_mul(R::one(), &x.t(), &dy, R::one(), &mut self.w.grad);
        if let Some(b) = &mut self.b {
            let mut g = b.grad.row_mut(0);
            g += &dy.sum_axis(Axis(0));
        }
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<R>, dy: ArrayView2<R>) -> Array2<R> {
        self.backward_params(x, dy);
        dy.dot(&self.w.value.t())
    }

    /// `dx += dy W^T`.
    pub fn backward_input_acc(&self, dy: ArrayView2<R>, dx: &mut Array2<R>) {
        general_mat_mul(R::one(), &dy, &self.w.value.t(), R::one(), dx);
    }
}

impl<R: Real> Module<R> for Linear<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        f(&self.w);
        if let Some(b) = &self.b {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

/// Per-feature normalization over all rows of the input.
#[derive(Debug, Clone)]
pub struct BatchNorm<R> {
    pub gamma: Param<R>,
    pub beta: Param<R>,
    pub running_mean: Param<R>,
    pub running_var: Param<R>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<R> {
    pub xhat: Array2<R>,
    pub inv_std: Array1<R>,
    /// Batch mean and biased variance, for the running estimates.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl<R: Real> BatchNorm<R> {
    pub fn new(name: &str, n: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Array2::ones((1, n))),
            beta: Param::zeros(format!("{name}.beta"), 1, n),
            running_mean: Param::buffer(format!("{name}.running_mean"), Array2::zeros((1, n))),
            running_var: Param::buffer(format!("{name}.running_var"), Array2::ones((1, n))),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with batch statistics; running estimates are left alone.
    pub fn forward_train(&self, x: ArrayView2<R>) -> (Array2<R>, BnCache<R>) {
        let (n, f) = x.dim();
        let x = x.as_standard_layout();
        let flat = x.as_slice().expect("standard layout");
        let mut mean = vec![0.0f64; f];
        for row in flat.chunks_exact(f.max(1)) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0f64; f];
        for row in flat.chunks_exact(f.max(1)) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.f64() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= n.max(1) as f64);

        let inv_std: Vec<R> = var.iter().map(|v| R::of(1.0 / (v + self.eps).sqrt())).collect();
        let mean_r: Vec<R> = mean.iter().map(|&m| R::of(m)).collect();
        let g = self.gamma.value.as_slice().expect("contiguous");
        let b = self.beta.value.as_slice().expect("contiguous");
        let mut xhat = vec![R::zero(); n * f];
        let mut y = vec![R::zero(); n * f];
        let rows = flat.chunks_exact(f.max(1)).zip(xhat.chunks_exact_mut(f.max(1))).zip(y.chunks_exact_mut(f.max(1)));
        for ((xr, hr), yr) in rows {
            for (((((&x, h), y), &m), &s), (&g, &b)) in xr.iter().zip(hr).zip(yr).zip(&mean_r).zip(&inv_std).zip(g.iter().zip(b)) {
                *h = (x - m) * s;
                *y = *h * g + b;
            }
        }
        let shape = (n, f);
        let cache = BnCache {
            xhat: Array2::from_shape_vec(shape, xhat).expect("n x f"),
            inv_std: Array1::from(inv_std),
            mean,
            var,
        };
        (Array2::from_shape_vec(shape, y).expect("n x f"), cache)
    }

    /// Exponential update of the running estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<R>) {
        let n = cache.xhat.nrows();
        let mom = self.momentum;
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        for c in 0..cache.mean.len() {
            let rm = &mut self.running_mean.value[[0, c]];
            *rm = R::of((1.0 - mom) * rm.f64() + mom * cache.mean[c]);
            let rv = &mut self.running_var.value[[0, c]];
            *rv = R::of((1.0 - mom) * rv.f64() + mom * cache.var[c] * unbias);
        }
    }

    /// Running statistics only.
    pub fn forward_eval(&self, x: ArrayView2<R>) -> Array2<R> {
        let eps = R::of(self.eps);
        let mean = self.running_mean.value.row(0);
        let inv_std = self.running_var.value.row(0).mapv(|v| R::one() / (v + eps).sqrt());
        let mut xhat = x.to_owned();
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row).and(&mean).and(&inv_std).for_each(|v, &m, &s| *v = (*v - m) * s);
        }
        self.affine(&xhat)
    }

    fn affine(&self, xhat: &Array2<R>) -> Array2<R> {
        let g = self.gamma.value.row(0);
        let b = self.beta.value.row(0);
        let mut y = xhat.clone();
        for mut row in y.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row).and(&g).and(&b).for_each(|v, &g, &b| *v = *v * g + b);
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<R>, dy: ArrayView2<R>) -> Array2<R> {
        let (n, f) = dy.dim();
        let nf = R::of(n as f64);
        let dy = dy.as_standard_layout();
        let dy = dy.as_slice().expect("standard layout");
        let xhat = cache.xhat.as_slice().expect("standard layout");
        let mut sum_dy = vec![R::zero(); f];
        let mut sum_dy_xhat = vec![R::zero(); f];
        for (d, xh) in dy.chunks_exact(f.max(1)).zip(xhat.chunks_exact(f.max(1))) {
            for (((s, sx), &d), &x) in sum_dy.iter_mut().zip(&mut sum_dy_xhat).zip(d).zip(xh) {
                *s += d;
                *sx += d * x;
            }
        }
        let gg = self.gamma.grad.as_slice_mut().expect("contiguous");
        let bg = self.beta.grad.as_slice_mut().expect("contiguous");
        for c in 0..f {
            gg[c] += sum_dy_xhat[c];
            bg[c] += sum_dy[c];
        }
        // dx = gamma * inv_std / n * (n dy - sum dy - xhat sum(dy xhat))
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let scale: Vec<R> = (0..f).map(|c| gamma[c] * cache.inv_std[c] / nf).collect();
        let mut dx = vec![R::zero(); n * f];
        let rows = dx.chunks_exact_mut(f.max(1)).zip(dy.chunks_exact(f.max(1))).zip(xhat.chunks_exact(f.max(1)));
        for ((o, d), xh) in rows {
            for ((((o, &d), &x), &s), (&sd, &sdx)) in o.iter_mut().zip(d).zip(xh).zip(&scale).zip(sum_dy.iter().zip(&sum_dy_xhat)) {
                *o = s * (nf * d - sd - x * sdx);
            }
        }
        Array2::from_shape_vec((n, f), dx).expect("n x f")
    }
}

impl<R: Real> Module<R> for BatchNorm<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
    }

    /// Loss `sum(y * w)` with a fixed random weighting `w`.
    fn weighted(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
        (y * w).sum()
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::<f64>::new("l", 4, 3, true, &mut rng);
        let x = rand_matrix(5, 4, 1.0, &mut rng);
        let w = rand_matrix(5, 3, 1.0, &mut rng);
        let dx = lin.backward(x.view(), w.view());
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (weighted(&lin.forward(xp.view()), &w) - weighted(&lin.forward(xm.view()), &w)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-8);
            }
        }
        let gw = lin.w.grad.clone();
        for i in 0..4 {
            for j in 0..3 {
                let orig = lin.w.value[[i, j]];
                lin.w.value[[i, j]] = orig + h;
                let lp = weighted(&lin.forward(x.view()), &w);
                lin.w.value[[i, j]] = orig - h;
                let lm = weighted(&lin.forward(x.view()), &w);
                lin.w.value[[i, j]] = orig;
                assert!(((lp - lm) / (2.0 * h) - gw[[i, j]]).abs() < 1e-8);
            }
        }
        let gb = lin.b.as_ref().unwrap().grad.row(0).to_owned();
        assert!((gb[0] - w.column(0).sum()).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_normalizes_in_training_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::<f64>::new("bn", 3);
        let x = rand_matrix(64, 3, 20.0, &mut rng) + 7.0;
        let (_, cache) = bn.forward_train(x.view());
        bn.update_running(&cache);
        assert!((bn.running_mean.value[[0, 0]] - 0.1 * cache.mean[0]).abs() < 1e-12);
        for c in 0..3 {
            let col = cache.xhat.column(c);
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bn = BatchNorm::<f64>::new("bn", 3);
        bn.gamma.value = rand_matrix(1, 3, 2.0, &mut rng);
        bn.beta.value = rand_matrix(1, 3, 1.0, &mut rng);
        let x = rand_matrix(7, 3, 1.5, &mut rng);
        let w = rand_matrix(7, 3, 1.0, &mut rng);
        let (_, cache) = bn.forward_train(x.view());
        let dx = bn.backward(&cache, w.view());
        let h = 1e-6;
        let probe = bn.clone();
        for i in 0..7 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let lp = weighted(&probe.forward_train(xp.view()).0, &w);
                let lm = weighted(&probe.forward_train(xm.view()).0, &w);
                assert!(((lp - lm) / (2.0 * h) - dx[[i, j]]).abs() < 1e-7, "{i},{j}");
            }
        }
        for j in 0..3 {
            let expect: f64 = (0..7).map(|i| w[[i, j]] * cache.xhat[[i, j]]).sum();
            assert!((bn.gamma.grad[[0, j]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        bn.running_mean.value = ndarray::array![[1.0, -1.0]];
        bn.running_var.value = ndarray::array![[4.0 - 1e-5, 1.0 - 1e-5]];
        let y = bn.forward_eval(ndarray::array![[3.0, 0.0]].view());
        assert!((y[[0, 0]] - 1.0).abs() < 1e-12 && (y[[0, 1]] - 1.0).abs() < 1e-12);
    }
}
