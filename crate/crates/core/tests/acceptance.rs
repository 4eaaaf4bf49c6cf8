//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so every line reaches the terminal. Pass criterion
//! numbers to run a subset: `cargo test --test acceptance -- 1 3 7`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bo4io::bo::{self, BoConfig, BoResult, FnObjective, TraceFiles};
use bo4io::dataset::Case;
use bo4io::datagen::{generate, GenSpec, Generated};
use bo4io::fop::document::bundled;
use bo4io::fop::lp::{LpBuilder, Sense};
use bo4io::fop::{FbaProblem, ForwardProblem, PoolingOptions, PoolingProblem, SolveStatus};
use bo4io::gp::{self, EvaluationDataset, GpModel, KernelConfig, Matern, JITTER_FLOOR};
use bo4io::loss::{parameter_error, LossConfig, LossEvaluator, Weights};
use bo4io::profile::{chi2_quantile, nested, profile, Identifiability, Interval, ProfileConfig};
use bo4io::rng::{keyed_rng, Halton};
use bo4io::ParameterDomain;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    /// A failure counts against the exit code.
    enforced: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, enforced: true, detail }
    }
}

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let all: [(usize, &str, Criterion); 11] = [
        (1, "GP exactness", gp_exactness),
        (2, "MLE gradient", mle_gradient),
        (3, "solver oracles", solver_oracles),
        (4, "toy FBA end to end", fba_end_to_end),
        (5, "dimensionality trend", dimensionality_trend),
        (6, "noise trend", noise_trend),
        (7, "profile likelihood", profile_likelihood),
        (8, "identifiability classes", identifiability_classes),
        (9, "pooling end to end", pooling_end_to_end),
        (10, "parallel speedup", parallel_speedup),
        (11, "determinism and resume", determinism_and_resume),
    ];
    let mut failures = 0;
    for (n, name, f) in all {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let clock = Instant::now();
        let o = f();
        let verdict = match (o.pass, o.enforced) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (not enforced)",
        };
        println!("criterion {n} ({name}): {verdict} [{:.1}s] {}", clock.elapsed().as_secs_f64(), o.detail);
        if !o.pass && o.enforced {
            failures += 1;
        }
    }
    if failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

// ---------------------------------------------------------------- GP oracles

fn matern(family: Matern, r: f64) -> f64 {
    match family {
        Matern::Half => (-r).exp(),
        Matern::ThreeHalves => (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp(),
        Matern::FiveHalves => (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp(),
    }
}

fn cov(k: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    let r = a
        .iter()
        .zip(b)
        .zip(&k.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt();
    k.signal_variance * matern(k.family, r)
}

/// Dense-LU posterior and log marginal likelihood, with targets standardized
/// by their mean and population standard deviation.
struct DenseGp {
    kernel: KernelConfig,
    x: Vec<Vec<f64>>,
    mean: f64,
    scale: f64,
    k_noisy: DMatrix<f64>,
    y: DVector<f64>,
}

impl DenseGp {
    fn new(kernel: &KernelConfig, x: &[Vec<f64>], y: &[f64]) -> Self {
        let t = y.len();
        let mean = y.iter().sum::<f64>() / t as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        let k_noisy = DMatrix::from_fn(t, t, |i, j| cov(kernel, &x[i], &x[j]) + if i == j { kernel.noise_variance } else { 0.0 });
        Self {
            kernel: kernel.clone(),
            x: x.to_vec(),
            mean,
            scale,
            k_noisy,
            y: DVector::from_iterator(t, y.iter().map(|v| (v - mean) / scale)),
        }
    }

    fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let lu = self.k_noisy.clone().lu();
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|x| cov(&self.kernel, q, x)));
        let alpha = lu.solve(&self.y).unwrap();
        let w = lu.solve(&ks).unwrap();
        let s = self.scale;
        (self.mean + s * ks.dot(&alpha), s * s * (self.kernel.signal_variance - ks.dot(&w)))
    }

    fn lml(&self) -> f64 {
        let lu = self.k_noisy.clone().lu();
        let alpha = lu.solve(&self.y).unwrap();
        let t = self.y.len() as f64;
        -0.5 * self.y.dot(&alpha) - 0.5 * lu.determinant().ln() - 0.5 * t * (2.0 * std::f64::consts::PI).ln()
    }
}

fn random_dataset(seed: u64, i: u64, t_max: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = keyed_rng(seed, 100, i);
    let d = rng.random_range(1..=4);
    let t = rng.random_range(2..=t_max);
    let x: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = x
        .iter()
        .map(|p| p.iter().zip(&w).map(|(a, b)| (a * b).sin()).sum::<f64>() + 0.1 * rng.random::<f64>())
        .collect();
    (x, y)
}

fn random_kernel(seed: u64, i: u64, d: usize, noise: (f64, f64)) -> KernelConfig {
    let mut rng = keyed_rng(seed, 101, i);
    let family = [Matern::Half, Matern::ThreeHalves, Matern::FiveHalves][i as usize % 3];
    let ls = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
    let log_noise = rng.random_range(noise.0.ln()..noise.1.ln());
    KernelConfig::new(family, ls, rng.random_range(0.5..2.0), log_noise.exp())
}

fn gp_exactness() -> Outcome {
    let clock = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (x, y) = random_dataset(1, i, 20);
        let d = x[0].len();
        let kernel = random_kernel(1, i, d, (1e-6, 1e-2));
        let model = GpModel::condition(kernel.clone(), EvaluationDataset::new(x.clone(), y.clone()).unwrap()).unwrap();
        let oracle = DenseGp::new(&kernel, &x, &y);
        let mut rng = keyed_rng(1, 102, i);
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..1.2)).collect();
            let (m, v) = model.posterior(&q).unwrap();
            let (mo, vo) = oracle.posterior(&q);
            worst = worst.max((m - mo).abs()).max((v - vo).abs());
        }
    }

    // Noise-floor interpolation on well-spread designs.
    let mut worst_interp = 0.0f64;
    for i in 0..20u64 {
        let d = 1 + (i as usize % 4);
        let t = 8 + (i as usize % 13);
        let halton = Halton::new(d, i);
        let x: Vec<Vec<f64>> = (0..t).map(|j| halton.point(j)).collect();
        let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| (4.0 * v).cos()).sum()).collect();
        let kernel = KernelConfig::new(Matern::FiveHalves, vec![0.05 * d as f64; d], 1.0, JITTER_FLOOR);
        let model = GpModel::condition(kernel, EvaluationDataset::new(x.clone(), y.clone()).unwrap()).unwrap();
        for (p, v) in x.iter().zip(&y) {
            worst_interp = worst_interp.max((model.posterior(p).unwrap().0 - v).abs());
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-8 && worst_interp <= 1e-6 && secs < 5.0,
        format!("max posterior deviation {worst:.2e} (tol 1e-8), max interpolation error {worst_interp:.2e} (tol 1e-6), {secs:.2}s (limit 5s)"),
    )
}

fn mle_gradient() -> Outcome {
    let clock = Instant::now();
    let mut worst_rel = 0.0f64;
    let mut worst_value = 0.0f64;
    for i in 0..20 {
        let (x, y) = random_dataset(2, i, 20);
        let d = x[0].len();
        let kernel = random_kernel(2, i, d, (1e-3, 1e-1));
        let data = EvaluationDataset::new(x.clone(), y.clone()).unwrap();
        let lml_at = |p: &[f64]| {
            GpModel::condition(KernelConfig::from_log_params(kernel.family, p), data.clone())
                .unwrap()
                .log_marginal_likelihood()
                .unwrap()
                .0
        };
        let model = GpModel::condition(kernel.clone(), data.clone()).unwrap();
        let (value, grad) = model.log_marginal_likelihood().unwrap();
        let oracle = DenseGp::new(&kernel, &x, &y).lml();
        worst_value = worst_value.max((value - oracle).abs() / oracle.abs().max(1.0));

        let p0 = kernel.to_log_params();
        let h = 1e-5;
        let fd: Vec<f64> = (0..p0.len())
            .map(|j| {
                let (mut a, mut b) = (p0.clone(), p0.clone());
                a[j] += h;
                b[j] -= h;
                (lml_at(&a) - lml_at(&b)) / (2.0 * h)
            })
            .collect();
        let norm = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (g, f) in grad.iter().zip(&fd) {
            worst_rel = worst_rel.max((g - f).abs() / f.abs().max(1e-2 * norm).max(1e-12));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        worst_rel <= 1e-4 && worst_value <= 1e-8 && secs < 10.0,
        format!("max relative gradient error {worst_rel:.2e} (tol 1e-4), LML value vs dense oracle {worst_value:.2e}, {secs:.2}s (limit 10s)"),
    )
}

// ------------------------------------------------------------ solver oracles

/// `min cᵀx` over `{x : G x ≤ h}` by enumerating every basis of `n` active
/// constraints.
fn vertex_enumeration(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<f64> {
    let n = c.len();
    let m = g.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, j| g[idx[r]][j]);
        let b = DVector::from_iterator(n, idx.iter().map(|&r| h[r]));
        if a.determinant().abs() > 1e-10 {
            if let Some(x) = a.lu().solve(&b) {
                let feasible = g.iter().zip(h).all(|(row, hi)| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= hi + 1e-9);
                if feasible {
                    let v: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        // Next n-combination of 0..m.
        let mut k = n;
        while k > 0 && idx[k - 1] == m - n + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn lp_versus_vertices() -> f64 {
    let mut worst = 0.0f64;
    for i in 0..50 {
        let mut rng = keyed_rng(3, 100, i);
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..=4);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ub: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let mut b = LpBuilder::new();
        for j in 0..n {
            b.add_var(c[j], 0.0, ub[j]);
        }
        let mut g = Vec::new();
        let mut h = Vec::new();
        for _ in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let coeffs = row.iter().copied().enumerate().collect();
            if rng.random_bool(0.3) {
                // a x ≥ −r keeps the origin feasible.
                let r = rng.random_range(0.5..3.0);
                b.add_row(coeffs, Sense::Ge, -r);
                g.push(row.iter().map(|v| -v).collect());
                h.push(r);
            } else {
                let r = rng.random_range(1.0..5.0);
                b.add_row(coeffs, Sense::Le, r);
                g.push(row);
                h.push(r);
            }
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            g.push(e.clone());
            h.push(ub[j]);
            e[j] = -1.0;
            g.push(e);
            h.push(0.0);
        }
        let sol = b.solve().unwrap();
        let oracle = vertex_enumeration(&c, &g, &h).expect("origin is feasible");
        assert_eq!(sol.status, SolveStatus::Optimal);
        worst = worst.max((sol.objective - oracle).abs() / oracle.abs().max(1.0));
    }
    worst
}

/// Largest scaled KKT residual of the FBA QP solution, with multipliers
/// recovered by an L1 stationarity fit.
fn fba_kkt(problem: &FbaProblem, lower: &[f64], upper: &[f64], weights: &[f64], v: &[f64]) -> f64 {
    let s = problem.stoichiometry();
    let lambda = problem.network().lambda;
    let c = problem.objective_coefficients(weights);
    let n = v.len();
    let g: Vec<f64> = (0..n).map(|k| c[k] + 2.0 * lambda * v[k]).collect();
    let gscale = g.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let vscale = upper.iter().chain(lower).fold(1.0f64, |m, x| m.max(x.abs()));

    let primal = (0..s.nrows())
        .map(|i| (0..n).map(|k| s[(i, k)] * v[k]).sum::<f64>().abs())
        .chain((0..n).map(|k| (lower[k] - v[k]).max(v[k] - upper[k]).max(0.0)))
        .fold(0.0f64, f64::max)
        / vscale;

    let tol = 1e-7 * vscale;
    let mut b = LpBuilder::new();
    let y: Vec<usize> = (0..s.nrows()).map(|_| b.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY)).collect();
    let mut mu = Vec::new();
    for k in 0..n {
        let mut row: Vec<(usize, f64)> = y.iter().enumerate().map(|(i, &yi)| (yi, s[(i, k)])).collect();
        if v[k] - lower[k] <= tol {
            let m = b.add_var(0.0, 0.0, f64::INFINITY);
            row.push((m, -1.0));
            mu.push((m, v[k] - lower[k]));
        }
        if upper[k] - v[k] <= tol {
            let m = b.add_var(0.0, 0.0, f64::INFINITY);
            row.push((m, 1.0));
            mu.push((m, upper[k] - v[k]));
        }
        let ep = b.add_var(1.0, 0.0, f64::INFINITY);
        let em = b.add_var(1.0, 0.0, f64::INFINITY);
        row.push((ep, -1.0));
        row.push((em, 1.0));
        b.add_row(row, Sense::Eq, -g[k]);
    }
    let sol = b.solve().unwrap();
    let stationarity = sol.objective / gscale;
    let complementarity = mu.iter().map(|(m, gap)| sol.x[*m] * gap).fold(0.0f64, f64::max) / (gscale * vscale);
    primal.max(stationarity).max(complementarity)
}

fn qp_kkt() -> f64 {
    let net = bundled::toy_fba();
    let spec = GenSpec {
        case: Case::Fba,
        network: "toy-fba".into(),
        d: Some(3),
        n_train: 50,
        n_test: 0,
        sigma: 0.0,
        seed: 3,
    };
    let g = generate(&spec, &bo4io::fop::document::Network::Fba(net.clone()), &PoolingOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for (i, obs) in g.train.observations.iter().enumerate() {
        let d = 1 + i % 3;
        let problem = FbaProblem::new(net.clone(), d).unwrap();
        let mut rng = keyed_rng(3, 103, i as u64);
        let raw: Vec<f64> = (0..=d).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let sol = problem.solve_weights(&obs.input, &weights).unwrap();
        assert!(sol.status.has_point());
        worst = worst.max(fba_kkt(&problem, &obs.input["lower"], &obs.input["upper"], &weights, &sol.x));
    }
    worst
}

fn solver_oracles() -> Outcome {
    let clock = Instant::now();
    let lp = lp_versus_vertices();
    let kkt = qp_kkt();
    let net = bundled::haverly1();
    let p = PoolingProblem::new(
        net.clone(),
        PoolingOptions {
            grid_intervals: 2000,
            ..PoolingOptions::default()
        },
    )
    .unwrap();
    let haverly = p.solve(&net.nominal_input(), &net.nominal_demands()).unwrap().objective;
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        lp <= 1e-8 && kkt <= 1e-6 && (haverly + 400.0).abs() <= 0.5 && secs < 60.0,
        format!(
            "LP vs vertices {lp:.2e} (tol 1e-8), QP KKT residual {kkt:.2e} (tol 1e-6), Haverly1 objective {haverly:.4} (−400 ± 0.5), {secs:.1}s (limit 60s)"
        ),
    )
}

// ------------------------------------------------------------ BO pipelines

struct Study {
    generated: Generated,
    train: LossEvaluator,
    test: Option<LossEvaluator>,
    domain: ParameterDomain,
}

fn study(case: Case, network: &str, d: usize, n: usize, sigma: f64, seed: u64, workers: usize) -> Study {
    let net = bundled::network(network).unwrap();
    let opts = PoolingOptions::default();
    let spec = GenSpec {
        case,
        network: network.into(),
        d: Some(d),
        n_train: n,
        n_test: n,
        sigma,
        seed,
    };
    let generated = generate(&spec, &net, &opts).unwrap();
    let problem = net.build(d, &opts).unwrap();
    let loss = LossConfig {
        weights: Weights::inverse_noise(sigma).unwrap(),
        penalty: None,
        workers,
    };
    let train = LossEvaluator::new(problem.clone(), Arc::new(generated.train.clone()), loss.clone()).unwrap();
    let test = LossEvaluator::new(problem.clone(), Arc::new(generated.test.clone()), loss).ok();
    Study {
        domain: problem.default_domain(),
        generated,
        train,
        test,
    }
}

impl Study {
    fn run(&self, iterations: usize, seed: u64, refit_every: usize, stop_below: Option<f64>, files: Option<&TraceFiles>, resume: bool) -> BoResult {
        let mut cfg = BoConfig::new(self.domain.clone(), iterations, seed);
        cfg.refit_every = refit_every;
        cfg.stop_below = stop_below;
        bo::run(&self.train, &cfg, files, resume).unwrap()
    }

    fn parameter_error(&self, r: &BoResult) -> f64 {
        let full = self.train.problem().full_parameters(&r.incumbent);
        parameter_error(&self.generated.theta_full, &full).unwrap()
    }

    fn train_error(&self, r: &BoResult) -> f64 {
        self.train.decision_error(&r.incumbent).unwrap().unwrap_or(f64::INFINITY)
    }

    fn test_error(&self, r: &BoResult) -> f64 {
        let t = self.test.as_ref().expect("test set");
        t.decision_error(&r.incumbent).unwrap().unwrap_or(f64::INFINITY)
    }

    /// Loss value corresponding to a mean squared decision error, for
    /// inverse-noise weights.
    fn loss_for_error(&self, err: f64, sigma: f64) -> f64 {
        let components: usize = self.generated.train.observations.iter().map(|o| o.x.len()).sum();
        err * components as f64 / (sigma * sigma)
    }
}

fn fba_end_to_end() -> Outcome {
    let clock = Instant::now();
    let sigma = 0.01;
    let mut perr = Vec::new();
    let mut terr = Vec::new();
    for seed in 0..5 {
        let s = study(Case::Fba, "toy-fba", 2, 20, sigma, seed, 4);
        let r = s.run(100, seed, 1, None, None, false);
        perr.push(s.parameter_error(&r));
        terr.push(s.test_error(&r));
    }
    let (mp, mt) = (median(&perr), median(&terr));
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        mp <= 0.05 && mt <= 3.0 * sigma * sigma && secs < 600.0,
        format!(
            "median parameter error {mp:.4} (≤ 0.05), median test decision error {mt:.2e} (≤ 3σ² = {:.1e}), per seed {perr:.4?}, {secs:.0}s (limit 600s)",
            3.0 * sigma * sigma
        ),
    )
}

fn dimensionality_trend() -> Outcome {
    let sigma = 0.01;
    let cap = 100;
    let mut medians = Vec::new();
    let mut all = Vec::new();
    for d in 1..=3 {
        let mut iters = Vec::new();
        for seed in 0..5 {
            let s = study(Case::Fba, "toy-fba", d, 20, sigma, seed, 1);
            let target = s.loss_for_error(2.0 * sigma * sigma, sigma);
            let r = s.run(cap, seed, 1, Some(target), None, false);
            let reached = r.trace.iter().find(|row| row.loss <= target).map(|row| row.iter as f64);
            // Runs that never reach the target count as one past the budget.
            iters.push(reached.unwrap_or(cap as f64 + 1.0));
        }
        medians.push(median(&iters));
        all.push(iters);
    }
    Outcome::new(
        non_decreasing(&medians),
        format!("median iterations to 2σ² training error for d = 1, 2, 3: {medians:?} (per seed {all:?})"),
    )
}

fn total_oa_width(s: &Study, r: &BoResult, seed: u64) -> f64 {
    let (k, l_star) = (r.incumbent.clone(), r.incumbent_loss);
    (0..s.domain.dim())
        .map(|j| {
            let cfg = ProfileConfig {
                k: j,
                seed,
                ..ProfileConfig::default()
            };
            let p = profile(&r.model, &s.domain, &cfg, l_star, Some(&k)).unwrap();
            bo4io::profile::total_width(&p.oa_ci)
        })
        .sum()
}

fn noise_trend() -> Outcome {
    let sigmas = [0.01, 0.05, 0.1];
    let mut test_medians = Vec::new();
    let mut widths = Vec::new();
    for &sigma in &sigmas {
        let mut errs = Vec::new();
        for seed in 0..5 {
            let s = study(Case::Fba, "toy-fba", 2, 20, sigma, seed, 1);
            let r = s.run(150, seed, 1, None, None, false);
            errs.push(s.test_error(&r));
            if seed == 0 {
                widths.push(total_oa_width(&s, &r, seed));
            }
        }
        test_medians.push(median(&errs));
    }
    Outcome::new(
        non_decreasing(&test_medians) && non_decreasing(&widths),
        format!("median test error by σ {}, summed OA-CI width on seed 0 by σ {widths:.4?}", list(&test_medians)),
    )
}

// ------------------------------------------------------- profile likelihood

fn fitted_model(f: &dyn Fn(&[f64]) -> f64, domain: &ParameterDomain, n: usize, seed: u64) -> (GpModel, Vec<f64>, f64) {
    let halton = Halton::new(domain.dim(), seed);
    let x: Vec<Vec<f64>> = (0..n).map(|i| domain.from_unit_cube(&halton.point(i))).collect();
    let y: Vec<f64> = x.iter().map(|p| f(p)).collect();
    let (i, l_star) = y.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let inc = x[i].clone();
    let model = gp::fit(EvaluationDataset::new(x, y).unwrap(), domain, seed).unwrap();
    (model, inc, l_star)
}

/// OA intervals by brute force: the lower profile on a fine grid in `θ_k`,
/// each point minimized over a dense grid of the other coordinate.
fn brute_force_oa(model: &GpModel, k: usize, rho: f64, threshold: f64) -> Vec<Interval> {
    let n_k = 2000;
    let n_o = 2000;
    let mut inside = Vec::with_capacity(n_k + 1);
    for i in 0..=n_k {
        let a = i as f64 / n_k as f64;
        let pl = (0..=n_o)
            .map(|j| {
                let mut q = [0.0; 2];
                q[k] = a;
                q[1 - k] = j as f64 / n_o as f64;
                let (m, v) = model.posterior(&q).unwrap();
                m - (rho * v).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        inside.push((a, pl <= threshold));
    }
    let mut out: Vec<Interval> = Vec::new();
    let mut open: Option<f64> = None;
    for (i, &(a, yes)) in inside.iter().enumerate() {
        match (yes, open) {
            (true, None) => open = Some(a),
            (false, Some(lo)) => {
                out.push(Interval { lo, hi: inside[i - 1].0 });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(lo) = open {
        out.push(Interval { lo, hi: 1.0 });
    }
    out
}

fn profile_likelihood() -> Outcome {
    let clock = Instant::now();
    let domain = ParameterDomain::unit_box(2);
    let step = 0.01;
    let bowl = |p: &[f64]| 40.0 * (p[0] - 0.45).powi(2) + 25.0 * (p[1] - 0.55).powi(2) + 20.0 * (p[0] - 0.45) * (p[1] - 0.55) + 1.0;
    let banana = |p: &[f64]| 30.0 * (p[1] - (p[0] - 0.5).powi(2) - 0.3).powi(2) + 8.0 * (p[0] - 0.6).powi(2);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for (i, f) in [&bowl as &dyn Fn(&[f64]) -> f64, &banana].into_iter().enumerate() {
        let (model, _, l_star) = fitted_model(f, &domain, 30, i as u64);
        for k in 0..2 {
            let cfg = ProfileConfig {
                k,
                step,
                ..ProfileConfig::default()
            };
            let r = profile(&model, &domain, &cfg, l_star, None).unwrap();
            let bf = brute_force_oa(&model, k, cfg.rho, r.oa_threshold());
            if bf.len() != r.oa_ci.len() {
                mismatched += 1;
                continue;
            }
            for (a, b) in bf.iter().zip(&r.oa_ci) {
                worst = worst.max((a.lo - b.lo).abs()).max((a.hi - b.hi).abs());
            }
        }
    }

    let mut not_nested = 0;
    let mut profiles = 0;
    for i in 0..20u64 {
        let mut rng = keyed_rng(7, 100, i);
        let d = 2 + (i as usize % 2);
        let dom = ParameterDomain::unit_box(d);
        let centre: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..0.8)).collect();
        let curv: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..60.0)).collect();
        let f = move |p: &[f64]| p.iter().zip(&centre).zip(&curv).map(|((x, c), a)| a * (x - c).powi(2)).sum::<f64>();
        let (model, inc, l_star) = fitted_model(&f, &dom, 8 * d, 100 + i);
        for k in 0..d {
            let cfg = ProfileConfig {
                k,
                step: 0.02,
                seed: i,
                ..ProfileConfig::default()
            };
            let r = profile(&model, &dom, &cfg, l_star, Some(&inc)).unwrap();
            profiles += 1;
            if !nested(&r.ia_ci, &r.oa_ci) || !r.oa_ci.iter().any(|iv| iv.contains(inc[k])) {
                not_nested += 1;
            }
        }
    }
    let chi2 = chi2_quantile(0.05, 1).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 2.0 * step && mismatched == 0 && not_nested == 0 && (chi2 - 3.84).abs() <= 0.005 && secs < 120.0,
        format!(
            "OA endpoints vs dense grid {worst:.4} (≤ 2δ = {:.2}), interval-count mismatches {mismatched}, non-nested profiles {not_nested}/{profiles}, χ²(0.05,1) = {chi2:.5}, {secs:.1}s (limit 120s)",
            2.0 * step
        ),
    )
}

/// Posterior conditioned with a fixed kernel on a regular grid.
fn constructed(f: &dyn Fn(&[f64]) -> f64, lengthscales: Vec<f64>) -> GpModel {
    let x: Vec<Vec<f64>> = (0..=8).flat_map(|i| (0..=8).map(move |j| vec![i as f64 / 8.0, j as f64 / 8.0])).collect();
    let y = x.iter().map(|p| f(p)).collect();
    let kernel = KernelConfig::new(Matern::FiveHalves, lengthscales, 1.0, 1e-6);
    GpModel::condition(kernel, EvaluationDataset::new(x, y).unwrap()).unwrap()
}

fn identifiability_classes() -> Outcome {
    let domain = ParameterDomain::unit_box(2);
    let bowl = |p: &[f64]| 200.0 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2));
    let plateau = |p: &[f64]| {
        let a = p[0] - 0.6;
        (if a > 0.0 { 300.0 * a * a } else { 4.0 * a * a }) + 100.0 * (p[1] - 0.5).powi(2)
    };
    let flat = |p: &[f64]| 100.0 * (p[1] - 0.5).powi(2);
    let cases: [(&str, GpModel, Identifiability); 3] = [
        ("bowl", constructed(&bowl, vec![0.3, 0.3]), Identifiability::StructurallyIdentifiable),
        ("plateau", constructed(&plateau, vec![0.3, 0.3]), Identifiability::PracticallyNonIdentifiable),
        ("flat", constructed(&flat, vec![100.0, 0.3]), Identifiability::NonIdentifiableWithinRange),
    ];
    let mut pass = true;
    let mut got = Vec::new();
    for (name, model, want) in &cases {
        let l_star = model.data().unwrap().targets().iter().copied().fold(f64::INFINITY, f64::min);
        let r = profile(model, &domain, &ProfileConfig::for_parameter(0), l_star, None).unwrap();
        pass &= r.classification == *want;
        got.push(format!("{name} → {}", r.classification.as_str()));
    }
    Outcome::new(pass, got.join(", "))
}

fn pooling_end_to_end() -> Outcome {
    let clock = Instant::now();
    let sigma = 0.05;
    let mut errs = Vec::new();
    for seed in 0..5 {
        let s = study(Case::Pooling, "haverly1", 2, 20, sigma, seed, 4);
        let r = s.run(100, seed, 1, None, None, false);
        errs.push(s.train_error(&r));
    }
    let m = median(&errs);
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        m <= 3.0 * sigma * sigma && secs < 900.0,
        format!(
            "median training decision error {m:.2e} (≤ 3σ² = {:.1e}), per seed {}, {secs:.0}s (limit 900s)",
            3.0 * sigma * sigma,
            list(&errs)
        ),
    )
}

fn fop_time(s: &Study, points: &[Vec<f64>]) -> Duration {
    points.iter().map(|p| s.train.evaluate(p).unwrap().fop_time).sum()
}

fn parallel_speedup() -> Outcome {
    let single = study(Case::Pooling, "haverly1", 2, 20, 0.05, 0, 1);
    let quad = study(Case::Pooling, "haverly1", 2, 20, 0.05, 0, 4);
    let halton = Halton::new(2, 0);
    let points: Vec<Vec<f64>> = (0..30).map(|i| single.domain.from_unit_cube(&halton.point(i))).collect();
    let mut ratios = Vec::new();
    for _ in 0..3 {
        let t1 = fop_time(&single, &points).as_secs_f64();
        let t4 = fop_time(&quad, &points).as_secs_f64();
        ratios.push(t4 / t1);
    }
    let ratio = median(&ratios);
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut o = Outcome::new(
        ratio <= 0.6,
        format!("4-worker / 1-worker FOP time {ratio:.3} (≤ 0.6), repeats {ratios:.3?}, {cpus} CPU(s) available"),
    );
    // Four workers cannot beat one on fewer than four cores.
    if cpus < 4 {
        o.enforced = false;
    }
    o
}

fn determinism_and_resume() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = study(Case::Fba, "toy-fba", 2, 20, 0.01, 0, 4);
    let files = |name: &str| {
        let p = dir.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        TraceFiles::in_dir(&p)
    };
    let (a, b) = (files("a"), files("b"));
    s.run(100, 0, 1, None, Some(&a), false);
    s.run(100, 0, 1, None, Some(&b), false);
    let first = std::fs::read(&a.trace).unwrap();
    let rerun_identical = first == std::fs::read(&b.trace).unwrap();

    // Cut mid-row about two thirds in, then resume.
    let cut = first.len() * 2 / 3;
    std::fs::write(&b.trace, &first[..cut]).unwrap();
    s.run(100, 0, 1, None, Some(&b), true);
    let resume_identical = first == std::fs::read(&b.trace).unwrap();

    let objective = FnObjective::new(2, |p: &[f64]| (p[0] - 0.2).powi(2) + (p[1] - 0.7).powi(2));
    let cfg = BoConfig::new(ParameterDomain::unit_box(2), 20, 9);
    let (x, y) = (bo::run(&objective, &cfg, None, false).unwrap(), bo::run(&objective, &cfg, None, false).unwrap());
    let same_fn = x.trace.iter().zip(&y.trace).all(|(p, q)| p.theta == q.theta && p.loss == q.loss);
    Outcome::new(
        rerun_identical && resume_identical && same_fn,
        format!(
            "rerun byte-identical {rerun_identical}, truncate-resume byte-identical {resume_identical} ({} bytes, cut at {cut}), in-memory rerun identical {same_fn}",
            first.len()
        ),
    )
}
