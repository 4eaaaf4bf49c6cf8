//! Exact Gaussian-process regression of the decision loss.
//!
//! The surrogate uses a zero prior mean on standardized targets, a Matérn
//! kernel with one lengthscale per parameter, and a Cholesky factorization of
//! `K + σ_n² I`. Posterior moments are returned in original loss units.

mod fit;
mod kernel;

pub use fit::{fit, fit_with, FitOptions};
pub use kernel::{KernelConfig, Matern, JITTER_CEILING, JITTER_FLOOR};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Past loss evaluations with the standardization used for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    mean: f64,
    scale: f64,
}

impl EvaluationDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        check_dim(inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Err(Error::Input("evaluation dataset needs at least one point".into()));
        }
        let d = inputs[0].len();
        for x in &inputs {
            check_dim(d, x.len())?;
        }
        if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Input("evaluation dataset contains non-finite values".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        Ok(Self {
            inputs,
            targets,
            mean,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalized_targets(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.targets.iter().map(|y| (y - self.mean) / self.scale),
        )
    }
}

/// Kernel matrix `K_f` (without noise) over a set of inputs.
pub fn kernel_matrix(kernel: &KernelConfig, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let t = inputs.len();
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        k[(i, i)] = kernel.signal_variance;
        for j in 0..i {
            let v = kernel.eval_unchecked(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K_f + σ² I`, escalating the diagonal term by ×10 from the
/// noise variance up to [`JITTER_CEILING`] when the factorization fails.
pub(crate) fn factorize(kf: &DMatrix<f64>, noise: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut diag = noise.max(JITTER_FLOOR);
    loop {
        let mut k = kf.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += diag;
        }
        if let Some(chol) = k.cholesky() {
            let l = chol.unpack();
            if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok((l, diag));
            }
        }
        if diag >= JITTER_CEILING {
            return Err(Error::Numerical(format!(
                "kernel matrix ({n}×{n}) is not positive definite even with diagonal {diag:e}",
                n = kf.nrows()
            )));
        }
        diag = (diag * 10.0).min(JITTER_CEILING).max(noise * 10.0);
    }
}

fn forward_substitute(l_rows: &[f64], t: usize, b: &mut [f64]) {
    for i in 0..t {
        let row = &l_rows[i * t..i * t + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, v)| a * v).sum();
        b[i] = (b[i] - s) / l_rows[i * t + i];
    }
}

/// A fitted (or prior-only) GP surrogate. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelConfig,
    data: Option<EvaluationDataset>,
    /// Row-major lower Cholesky factor of `K_f + diag·I`.
    l_rows: Vec<f64>,
    /// Solution of `(K_f + diag·I) α = y` for normalized targets.
    alpha: Vec<f64>,
    diag: f64,
    fit_warning: bool,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on a dataset.
    pub fn condition(kernel: KernelConfig, data: EvaluationDataset) -> Result<Self> {
        if !kernel.is_valid() {
            return Err(Error::Input(format!("invalid kernel configuration: {kernel:?}")));
        }
        check_dim(kernel.dim(), data.dim())?;
        let kf = kernel_matrix(&kernel, data.inputs());
        let (l, diag) = factorize(&kf, kernel.noise_variance)?;
        let t = data.len();
        let mut l_rows = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..=i {
                l_rows[i * t + j] = l[(i, j)];
            }
        }
        let y = data.normalized_targets();
        let mut alpha: Vec<f64> = y.iter().copied().collect();
        forward_substitute(&l_rows, t, &mut alpha);
        // Back substitution with Lᵀ.
        for i in (0..t).rev() {
            let mut s = alpha[i];
            for k in i + 1..t {
                s -= l_rows[k * t + i] * alpha[k];
            }
            alpha[i] = s / l_rows[i * t + i];
        }
        Ok(Self {
            kernel,
            data: Some(data),
            l_rows,
            alpha,
            diag,
            fit_warning: false,
        })
    }

    /// A surrogate with no data: zero mean and constant variance.
    pub fn prior(kernel: KernelConfig) -> Self {
        Self {
            kernel,
            data: None,
            l_rows: Vec::new(),
            alpha: Vec::new(),
            diag: 0.0,
            fit_warning: false,
        }
    }

    pub(crate) fn with_warning(mut self, warning: bool) -> Self {
        self.fit_warning = warning;
        self
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn data(&self) -> Option<&EvaluationDataset> {
        self.data.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn len(&self) -> usize {
        self.data.as_ref().map_or(0, |d| d.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diagonal term actually used in the factorization (noise plus any
    /// escalated jitter).
    pub fn diagonal(&self) -> f64 {
        self.diag
    }

    /// True when every hyperparameter restart failed its line search.
    pub fn fit_warning(&self) -> bool {
        self.fit_warning
    }

    /// Lower Cholesky factor as a dense matrix.
    pub fn factor(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_fn(t, t, |i, j| if j <= i { self.l_rows[i * t + j] } else { 0.0 })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Posterior mean and variance in original loss units.
    pub fn posterior(&self, query: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), query.len())?;
        Ok(self.posterior_unchecked(query))
    }

    pub(crate) fn posterior_unchecked(&self, query: &[f64]) -> (f64, f64) {
        let Some(data) = &self.data else {
            return (0.0, self.kernel.signal_variance);
        };
        let t = data.len();
        let mut k: Vec<f64> = data
            .inputs()
            .iter()
            .map(|x| self.kernel.eval_unchecked(query, x))
            .collect();
        let mean_n: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward_substitute(&self.l_rows, t, &mut k);
        let explained: f64 = k.iter().map(|v| v * v).sum();
        let var_n = (self.kernel.signal_variance - explained).max(0.0);
        let s = data.scale();
        (data.mean() + s * mean_n, s * s * var_n)
    }

    /// Log marginal likelihood of the normalized targets and its gradient
    /// w.r.t. `[log ℓ.., log σ_f², log σ_n²]`.
    pub fn log_marginal_likelihood(&self) -> Result<(f64, Vec<f64>)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Input("log marginal likelihood of a prior-only model".into()))?;
        Ok(lml_with_gradient(&self.kernel, data, &self.factor(), self.diag, &self.alpha))
    }
}

pub(crate) fn lml_value(l: &DMatrix<f64>, alpha: &[f64], y: &DVector<f64>) -> f64 {
    let t = y.len() as f64;
    let fit: f64 = y.iter().zip(alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
    -0.5 * fit - logdet - 0.5 * t * (2.0 * std::f64::consts::PI).ln()
}

/// `K⁻¹ = L⁻ᵀL⁻¹` as a row-major buffer; only entries `(a, b)` with `b ≤ a`
/// are filled.
fn cholesky_inverse(l: &DMatrix<f64>) -> Vec<f64> {
    let t = l.nrows();
    let mut rows = vec![0.0; t * t];
    for i in 0..t {
        for k in 0..=i {
            rows[i * t + k] = l[(i, k)];
        }
    }
    // Row j of `cols` holds column j of L⁻¹, which is zero before index j.
    let mut cols = vec![0.0; t * t];
    for j in 0..t {
        let x = &mut cols[j * t..(j + 1) * t];
        x[j] = 1.0 / rows[j * t + j];
        for i in j + 1..t {
            let li = &rows[i * t..i * t + i];
            let s: f64 = li[j..].iter().zip(&x[j..i]).map(|(a, b)| a * b).sum();
            x[i] = -s / rows[i * t + i];
        }
    }
    let mut kinv = vec![0.0; t * t];
    for a in 0..t {
        let ca = &cols[a * t..(a + 1) * t];
        for b in 0..=a {
            let cb = &cols[b * t..(b + 1) * t];
            kinv[a * t + b] = ca[a..].iter().zip(&cb[a..]).map(|(x, y)| x * y).sum();
        }
    }
    kinv
}

pub(crate) fn lml_with_gradient(
    kernel: &KernelConfig,
    data: &EvaluationDataset,
    l: &DMatrix<f64>,
    diag: f64,
    alpha: &[f64],
) -> (f64, Vec<f64>) {
    let y = data.normalized_targets();
    let value = lml_value(l, alpha, &y);
    let t = data.len();
    let d = kernel.dim();

    let kinv = cholesky_inverse(l);

    let mut grad = vec![0.0; d + 2];
    let mut trace_w = 0.0;
    let inputs = data.inputs();
    for a in 0..t {
        let waa = alpha[a] * alpha[a] - kinv[a * t + a];
        trace_w += waa;
        grad[d] += 0.5 * waa * kernel.signal_variance;
        for b in 0..a {
            let wab = alpha[a] * alpha[b] - kinv[a * t + b];
            let r = kernel.scaled_distance(&inputs[a], &inputs[b]);
            let kf = kernel.signal_variance * kernel.family.correlation(r);
            // Off-diagonal pairs appear twice in the trace.
            grad[d] += wab * kf;
            let factor = wab * kernel.signal_variance * kernel.family.lengthscale_factor(r);
            for (i, g) in grad.iter_mut().enumerate().take(d) {
                let s = (inputs[a][i] - inputs[b][i]) / kernel.lengthscales[i];
                *g += factor * s * s;
            }
        }
    }
    grad[d + 1] = 0.5 * trace_w * diag;
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use rand::Rng;

    fn k52(ls: Vec<f64>, sf: f64, noise: f64) -> KernelConfig {
        KernelConfig::new(Matern::FiveHalves, ls, sf, noise)
    }

    #[test]
    fn single_point_likelihood() {
        let data = EvaluationDataset::new(vec![vec![0.3]], vec![5.0]).unwrap();
        let m = GpModel::condition(k52(vec![0.2], 1.0, JITTER_FLOOR), data).unwrap();
        let (v, g) = m.log_marginal_likelihood().unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 + JITTER_FLOOR).ln();
        assert!((v - expected).abs() < 1e-14);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn single_point_interpolation() {
        let data = EvaluationDataset::new(vec![vec![0.4, 0.1]], vec![2.0]).unwrap();
        let m = GpModel::condition(k52(vec![0.3, 0.3], 1.0, JITTER_FLOOR), data).unwrap();
        let (mu, var) = m.posterior(&[0.4, 0.1]).unwrap();
        assert!((mu - 2.0).abs() < 1e-6);
        assert!(var <= 1e-6);
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let inputs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let targets = vec![1.0, 4.0, 2.5];
        let data = EvaluationDataset::new(inputs, targets).unwrap();
        let (mean, scale) = (data.mean(), data.scale());
        let m = GpModel::condition(k52(vec![0.1], 1.3, 1e-6), data).unwrap();
        let (mu, var) = m.posterior(&[1e3]).unwrap();
        assert!((mu - mean).abs() < 1e-12);
        assert!((var - 1.3 * scale * scale).abs() < 1e-12);
    }

    #[test]
    fn two_point_posterior_matches_explicit_inverse() {
        let kernel = k52(vec![0.35], 1.4, 1e-3);
        let x = [0.1, 0.6];
        let l = [3.0, -1.0];
        let data = EvaluationDataset::new(vec![vec![x[0]], vec![x[1]]], l.to_vec()).unwrap();
        let (mean, scale) = (data.mean(), data.scale());
        let m = GpModel::condition(kernel.clone(), data).unwrap();

        // Hand-built 2×2 system in normalized units.
        let kk = |a: f64, b: f64| kernel.eval(&[a], &[b]).unwrap();
        let a11 = kk(x[0], x[0]) + 1e-3;
        let a22 = kk(x[1], x[1]) + 1e-3;
        let a12 = kk(x[0], x[1]);
        let det = a11 * a22 - a12 * a12;
        let inv = [[a22 / det, -a12 / det], [-a12 / det, a11 / det]];
        let y = [(l[0] - mean) / scale, (l[1] - mean) / scale];
        for q in [0.0, 0.33, 0.6, 0.9] {
            let kv = [kk(q, x[0]), kk(q, x[1])];
            let w = [
                inv[0][0] * kv[0] + inv[0][1] * kv[1],
                inv[1][0] * kv[0] + inv[1][1] * kv[1],
            ];
            let mu_n = w[0] * y[0] + w[1] * y[1];
            let var_n = kk(q, q) - (w[0] * kv[0] + w[1] * kv[1]);
            let (mu, var) = m.posterior(&[q]).unwrap();
            assert!((mu - (mean + scale * mu_n)).abs() < 1e-10);
            assert!((var - scale * scale * var_n).abs() < 1e-10);
        }
    }

    #[test]
    fn query_dimension_checked() {
        let data = EvaluationDataset::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let m = GpModel::condition(k52(vec![1.0, 1.0], 1.0, 1e-6), data).unwrap();
        assert!(matches!(m.posterior(&[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = keyed_rng(3, 99, 0);
        for trial in 0..5 {
            let inputs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let targets: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 3.0).collect();
            let data = EvaluationDataset::new(inputs, targets).unwrap();
            let kernel = k52(vec![0.3 + 0.1 * trial as f64, 0.5], 0.8, 1e-2);
            let base = kernel.to_log_params();
            let m = GpModel::condition(kernel, data.clone()).unwrap();
            let (_, grad) = m.log_marginal_likelihood().unwrap();
            let h = 1e-5;
            for i in 0..base.len() {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p[i] += delta;
                    let k = KernelConfig::from_log_params(Matern::FiveHalves, &p);
                    GpModel::condition(k, data.clone()).unwrap().log_marginal_likelihood().unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "trial {trial} param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn more_noise_helps_on_pure_noise_data() {
        let mut rng = keyed_rng(5, 99, 1);
        let inputs: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 / 14.0]).collect();
        let targets: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        let data = EvaluationDataset::new(inputs, targets).unwrap();
        let lml = |noise: f64| {
            GpModel::condition(k52(vec![0.05], 1.0, noise), data.clone())
                .unwrap()
                .log_marginal_likelihood()
                .unwrap()
                .0
        };
        assert!(lml(2e-3) > lml(1e-3));
    }
}
