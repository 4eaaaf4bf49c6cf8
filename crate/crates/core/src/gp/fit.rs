use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use super::{factorize, kernel_matrix, lml_value, lml_with_gradient, EvaluationDataset, GpModel, KernelConfig, Matern};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Result};
use crate::rng::{keyed_rng, tag};

const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e2);
const SIGNAL_BOUNDS: (f64, f64) = (1e-2, 1e2);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);
/// Lengthscale used without fitting, as a fraction of the domain width.
const DEFAULT_LENGTHSCALE: f64 = 0.2;
const ARMIJO: f64 = 1e-4;

/// Settings for maximum-likelihood hyperparameter calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub family: Matern,
    pub restarts: usize,
    pub max_iters: usize,
    /// Run restarts on the rayon pool.
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            family: Matern::FiveHalves,
            restarts: 8,
            max_iters: 60,
            parallel: true,
        }
    }
}

/// Fits hyperparameters with default options.
pub fn fit(data: EvaluationDataset, domain: &ParameterDomain, seed: u64) -> Result<GpModel> {
    fit_with(data, domain, seed, &FitOptions::default())
}

/// Multi-start maximum marginal likelihood; the best restart wins and ties go
/// to the lower restart index.
pub fn fit_with(data: EvaluationDataset, domain: &ParameterDomain, seed: u64, opts: &FitOptions) -> Result<GpModel> {
    check_dim(domain.dim(), data.dim())?;
    let (lo, hi) = domain.effective_bounds();
    let widths: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
    let d = widths.len();
    let default_kernel = KernelConfig::new(
        opts.family,
        widths.iter().map(|w| DEFAULT_LENGTHSCALE * w).collect(),
        1.0,
        if data.len() == 1 { super::JITTER_FLOOR } else { 1e-3 },
    );
    if data.len() == 1 {
        return GpModel::condition(default_kernel, data);
    }

    let mut lower = Vec::with_capacity(d + 2);
    let mut upper = Vec::with_capacity(d + 2);
    for w in &widths {
        lower.push((LENGTHSCALE_BOUNDS.0 * w).ln());
        upper.push((LENGTHSCALE_BOUNDS.1 * w).ln());
    }
    lower.extend([SIGNAL_BOUNDS.0.ln(), NOISE_BOUNDS.0.ln()]);
    upper.extend([SIGNAL_BOUNDS.1.ln(), NOISE_BOUNDS.1.ln()]);
    let bounds = Bounds { lower, upper };

    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                return default_kernel.to_log_params();
            }
            let mut rng = keyed_rng(seed, tag::FIT, r as u64);
            let mut p: Vec<f64> = widths
                .iter()
                .map(|w| rng.random_range((0.05 * w).ln()..(2.0 * w).ln()))
                .collect();
            p.push(rng.random_range(0.2f64.ln()..5f64.ln()));
            p.push(rng.random_range(1e-6f64.ln()..1e-1f64.ln()));
            p
        })
        .collect();

    let run = |p0: &Vec<f64>| ascend(opts.family, &data, &bounds, p0.clone(), opts.max_iters);
    let outcomes: Vec<Option<Ascent>> = if opts.parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };

    let mut best: Option<&Ascent> = None;
    for a in outcomes.iter().flatten() {
        if best.is_none_or(|b| a.value > b.value) {
            best = Some(a);
        }
    }
    let warning = outcomes.iter().all(|o| o.as_ref().is_none_or(|a| a.line_search_failed));
    match best {
        Some(a) => {
            let kernel = KernelConfig::from_log_params(opts.family, &a.params);
            Ok(GpModel::condition(kernel, data)?.with_warning(warning))
        }
        None => {
            log::warn!("every hyperparameter restart failed; using default kernel");
            Ok(GpModel::condition(default_kernel, data)?.with_warning(true))
        }
    }
}

struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, p: &mut [f64]) {
        for ((v, l), u) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Gradient with components pointing out of an active bound removed.
    fn projected_gradient(&self, p: &[f64], g: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((v, gi), (l, u))| {
                if (*v <= *l && *gi < 0.0) || (*v >= *u && *gi > 0.0) {
                    0.0
                } else {
                    *gi
                }
            })
            .collect()
    }
}

struct Ascent {
    params: Vec<f64>,
    value: f64,
    line_search_failed: bool,
}

/// Factorization state at one hyperparameter vector.
struct Point {
    kernel: KernelConfig,
    l: DMatrix<f64>,
    diag: f64,
    alpha: DVector<f64>,
    value: f64,
}

fn factor_at(family: Matern, data: &EvaluationDataset, p: &[f64]) -> Option<Point> {
    let kernel = KernelConfig::from_log_params(family, p);
    let kf = kernel_matrix(&kernel, data.inputs());
    let (l, diag) = factorize(&kf, kernel.noise_variance).ok()?;
    let y = data.normalized_targets();
    let z = l.solve_lower_triangular(&y)?;
    let alpha = l.tr_solve_lower_triangular(&z)?;
    let value = lml_value(&l, alpha.as_slice(), &y);
    value.is_finite().then_some(Point {
        kernel,
        l,
        diag,
        alpha,
        value,
    })
}

fn gradient_at(data: &EvaluationDataset, pt: &Point) -> Option<Vec<f64>> {
    let (_, g) = lml_with_gradient(&pt.kernel, data, &pt.l, pt.diag, pt.alpha.as_slice());
    g.iter().all(|x| x.is_finite()).then_some(g)
}

fn evaluate(family: Matern, data: &EvaluationDataset, p: &[f64]) -> Option<(f64, Vec<f64>)> {
    let pt = factor_at(family, data, p)?;
    let g = gradient_at(data, &pt)?;
    Some((pt.value, g))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking.
fn ascend(family: Matern, data: &EvaluationDataset, bounds: &Bounds, mut p: Vec<f64>, max_iters: usize) -> Option<Ascent> {
    bounds.project(&mut p);
    let (mut f, mut g) = evaluate(family, data, &p)?;
    let mut step = 0.1 / g.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    let mut failed = false;
    for _ in 0..max_iters {
        let pg = bounds.projected_gradient(&p, &g);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-5 {
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..30 {
            let mut q: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x + alpha * gi).collect();
            bounds.project(&mut q);
            let moved: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
            if let Some(pt) = factor_at(family, data, &q) {
                if pt.value >= f + ARMIJO * dot(&g, &moved) && dot(&moved, &moved) > 0.0 {
                    if let Some(gq) = gradient_at(data, &pt) {
                        accepted = Some((q, pt.value, gq, moved));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((q, fq, gq, s)) = accepted else {
            failed = pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 1e-3;
            break;
        };
        let y: Vec<f64> = gq.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        // Ascent on f is descent on -f, whose curvature pair is (s, -y).
        step = if sy < 0.0 { (dot(&s, &s) / -sy).clamp(1e-6, 1e3) } else { (alpha * 2.0).min(1e3) };
        let gain = fq - f;
        p = q;
        f = fq;
        g = gq;
        if gain.abs() < 1e-10 * f.abs().max(1.0) {
            break;
        }
    }
    Some(Ascent {
        params: p,
        value: f,
        line_search_failed: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use nalgebra::DVector;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_point_uses_default_hyperparameters() {
        let data = EvaluationDataset::new(vec![vec![1.0, 2.0]], vec![3.0]).unwrap();
        let domain = ParameterDomain::new(vec![0.0, 0.0], vec![2.0, 4.0], false).unwrap();
        let m = fit(data, &domain, 1).unwrap();
        assert_eq!(m.kernel().lengthscales, vec![0.4, 0.8]);
        assert_eq!(m.kernel().signal_variance, 1.0);
    }

    #[test]
    fn recovers_known_lengthscale() {
        let t = 40;
        let xs: Vec<f64> = (0..t).map(|i| (i as f64 + 0.5) / t as f64).collect();
        let truth = KernelConfig::new(Matern::FiveHalves, vec![0.2], 1.0, 1e-8);
        let inputs: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let mut k = kernel_matrix(&truth, &inputs);
        for i in 0..t {
            k[(i, i)] += 1e-6;
        }
        let l = k.cholesky().unwrap().unpack();
        let domain = ParameterDomain::unit_box(1);
        let mut recovered = Vec::new();
        for s in 0..5 {
            let mut rng = keyed_rng(100 + s, 99, 0);
            let z = DVector::from_iterator(t, (0..t).map(|_| StandardNormal.sample(&mut rng)));
            let y: DVector<f64> = &l * z;
            let data = EvaluationDataset::new(inputs.clone(), y.iter().copied().collect()).unwrap();
            let m = fit(data, &domain, s).unwrap();
            recovered.push(m.kernel().lengthscales[0]);
        }
        recovered.sort_by(f64::total_cmp);
        let median = recovered[2];
        assert!((0.1..=0.4).contains(&median), "{recovered:?}");
    }

    #[test]
    fn duplicate_inputs_force_positive_noise() {
        let inputs = vec![vec![0.2], vec![0.2], vec![0.7], vec![0.7], vec![0.5]];
        let targets = vec![1.0, 2.0, -1.0, 0.5, 0.3];
        let data = EvaluationDataset::new(inputs, targets).unwrap();
        let m = fit(data, &ParameterDomain::unit_box(1), 4).unwrap();
        assert!(m.kernel().noise_variance > 1e-6);
    }

    #[test]
    fn fitting_is_deterministic() {
        let mut rng = keyed_rng(8, 99, 0);
        let inputs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
        let targets: Vec<f64> = inputs.iter().map(|x| (3.0 * x[0]).sin() + x[1] * x[1]).collect();
        let data = EvaluationDataset::new(inputs, targets).unwrap();
        let domain = ParameterDomain::unit_box(2);
        let a = fit(data.clone(), &domain, 5).unwrap();
        let b = fit(data.clone(), &domain, 5).unwrap();
        let serial = fit_with(data, &domain, 5, &FitOptions { parallel: false, ..Default::default() }).unwrap();
        assert_eq!(a.kernel(), b.kernel());
        assert_eq!(a.kernel(), serial.kernel());
    }

    #[test]
    fn fitted_likelihood_beats_default_start() {
        let inputs: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 / 14.0]).collect();
        let targets: Vec<f64> = inputs.iter().map(|x| (x[0] - 0.3).powi(2)).collect();
        let data = EvaluationDataset::new(inputs, targets).unwrap();
        let domain = ParameterDomain::unit_box(1);
        let fitted = fit(data.clone(), &domain, 0).unwrap();
        let start = KernelConfig::new(Matern::FiveHalves, vec![0.2], 1.0, 1e-3);
        let base = GpModel::condition(start, data).unwrap();
        let lf = fitted.log_marginal_likelihood().unwrap().0;
        let lb = base.log_marginal_likelihood().unwrap().0;
        assert!(lf >= lb - 1e-9, "{lf} < {lb}");
    }
}
