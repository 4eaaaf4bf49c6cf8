use std::sync::Arc;

use bo4io::acquisition::lcb;
use bo4io::bo::{self, BoConfig, FnObjective};
use bo4io::dataset::{Case, Standardization};
use bo4io::datagen::{generate, GenSpec};
use bo4io::fop::document::bundled;
use bo4io::fop::PoolingOptions;
use bo4io::gp::{EvaluationDataset, GpModel, KernelConfig, Matern};
use bo4io::loss::{LossConfig, LossEvaluator, Weights};
use bo4io::profile::{chi2_quantile, nested, profile, ProfileConfig};
use bo4io::ParameterDomain;
use proptest::prelude::*;

fn points(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), 2..12)
}

fn model_strategy() -> impl Strategy<Value = (GpModel, usize)> {
    (1usize..4)
        .prop_flat_map(|d| (points(d), prop::collection::vec(0.05f64..2.0, d), 0.1f64..3.0, -8.0f64..-1.0, Just(d)))
        .prop_flat_map(|(x, ls, sf2, log_noise, d)| {
            let n = x.len();
            (Just(x), prop::collection::vec(-5.0f64..5.0, n), Just(ls), Just(sf2), Just(log_noise), Just(d))
        })
        .prop_map(|(x, y, ls, sf2, log_noise, d)| {
            let k = KernelConfig::new(Matern::FiveHalves, ls, sf2, 10f64.powf(log_noise));
            (GpModel::condition(k, EvaluationDataset::new(x, y).unwrap()).unwrap(), d)
        })
}

/// Quadratic bowl on the unit box with its minimum at `c`.
fn bowl_model(c: [f64; 2], curv: [f64; 2]) -> (GpModel, Vec<f64>, f64) {
    let x: Vec<Vec<f64>> = (0..=4).flat_map(|i| (0..=4).map(move |j| vec![i as f64 / 4.0, j as f64 / 4.0])).collect();
    let y: Vec<f64> = x.iter().map(|p| curv[0] * (p[0] - c[0]).powi(2) + curv[1] * (p[1] - c[1]).powi(2)).collect();
    let (i, l) = y.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let inc = x[i].clone();
    let k = KernelConfig::new(Matern::FiveHalves, vec![0.4, 0.4], 1.0, 1e-4);
    (GpModel::condition(k, EvaluationDataset::new(x, y).unwrap()).unwrap(), inc, l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_is_bounded((model, d) in model_strategy(), q in prop::collection::vec(-0.5f64..1.5, 3)) {
        let q = &q[..d];
        let (_, var) = model.posterior(q).unwrap();
        let data = model.data().unwrap();
        let cap = data.scale().powi(2) * model.kernel().signal_variance;
        prop_assert!(var >= 0.0);
        prop_assert!(var <= cap * (1.0 + 1e-12));
    }

    #[test]
    fn lcb_never_exceeds_mean((model, d) in model_strategy(), q in prop::collection::vec(0.0f64..1.0, 3), beta in 0.01f64..10.0) {
        let q = &q[..d];
        let (mu, _) = model.posterior(q).unwrap();
        prop_assert!(lcb(&model, q, beta).unwrap() <= mu);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_spread(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 3..20)) {
        let s = Standardization::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        let m = z.len() as f64;
        for j in 0..3 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / m;
            prop_assert!(mean.abs() < 1e-9);
            if s.scale[j] != 1.0 {
                let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m;
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_quadratic_is_non_negative_and_scales(r in prop::collection::vec(-10.0f64..10.0, 1..8), c in 0.01f64..100.0) {
        let plain = Weights::Identity.quadratic(&r);
        prop_assert!(plain >= 0.0);
        let scaled = Weights::Scaled(c).quadratic(&r);
        prop_assert!((scaled - c * plain).abs() <= 1e-12 * scaled.max(1.0));
        let diag = Weights::Diagonal(vec![c; r.len()]).quadratic(&r);
        prop_assert!((diag - scaled).abs() <= 1e-12 * scaled.max(1.0));
    }

    #[test]
    fn chi2_quantile_orders(a in 0.001f64..0.5, b in 0.001f64..0.5, df in 1usize..6) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(chi2_quantile(lo, df).unwrap() >= chi2_quantile(hi, df).unwrap());
        prop_assert!(chi2_quantile(a, df + 1).unwrap() > chi2_quantile(a, df).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn best_so_far_is_the_running_minimum(cx in 0.0f64..1.0, cy in 0.0f64..1.0, seed in 0u64..1000) {
        let f = FnObjective::new(2, move |p: &[f64]| (p[0] - cx).powi(2) + 3.0 * (p[1] - cy).powi(2));
        let r = bo::run(&f, &BoConfig::new(ParameterDomain::unit_box(2), 4, seed), None, false).unwrap();
        let mut running = f64::INFINITY;
        for row in &r.trace {
            running = running.min(row.loss);
            prop_assert_eq!(row.best, running);
        }
        prop_assert_eq!(r.incumbent_loss, running);
        prop_assert!(ParameterDomain::unit_box(2).contains(&r.incumbent));
    }

    #[test]
    fn inner_set_nests_and_outer_set_widens_with_rho(
        cx in 0.2f64..0.8, cy in 0.2f64..0.8, ax in 2.0f64..80.0, ay in 2.0f64..80.0, k in 0usize..2,
    ) {
        let (model, inc, l_star) = bowl_model([cx, cy], [ax, ay]);
        let domain = ParameterDomain::unit_box(2);
        let cfg = |rho: f64| ProfileConfig { k, rho, step: 0.05, restarts: 4, ..ProfileConfig::default() };
        let narrow = profile(&model, &domain, &cfg(1.0), l_star, Some(&inc)).unwrap();
        let wide = profile(&model, &domain, &cfg(9.0), l_star, Some(&inc)).unwrap();
        prop_assert!(nested(&narrow.ia_ci, &narrow.oa_ci));
        prop_assert!(nested(&wide.ia_ci, &wide.oa_ci));
        // Endpoints are refined to step/100.
        let slack = 0.05 / 50.0;
        for iv in &narrow.oa_ci {
            prop_assert!(wide.oa_ci.iter().any(|w| w.lo <= iv.lo + slack && w.hi >= iv.hi - slack), "{:?} not in {:?}", iv, wide.oa_ci);
        }
        prop_assert!(narrow.oa_ci.iter().any(|iv| iv.contains(inc[k])));
    }

    #[test]
    fn loss_ignores_observation_order(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), t0 in 0.05f64..0.45, t1 in 0.05f64..0.45) {
        let spec = GenSpec { case: Case::Fba, network: "toy-fba".into(), d: Some(2), n_train: 8, n_test: 0, sigma: 0.01, seed: 4 };
        let net = bundled::network("toy-fba").unwrap();
        let g = generate(&spec, &net, &PoolingOptions::default()).unwrap();
        let problem = net.build(2, &PoolingOptions::default()).unwrap();
        let mut shuffled = g.train.clone();
        shuffled.observations = perm.iter().map(|&i| g.train.observations[i].clone()).collect();
        let a = LossEvaluator::new(problem.clone(), Arc::new(g.train), LossConfig::default()).unwrap();
        let b = LossEvaluator::new(problem, Arc::new(shuffled), LossConfig::default()).unwrap();
        let (la, lb) = (a.evaluate(&[t0, t1]).unwrap().value, b.evaluate(&[t0, t1]).unwrap().value);
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
    }
}

#[test]
fn chi2_quantile_matches_tables() {
    for (alpha, df, want) in [(0.05, 1, 3.841), (0.05, 2, 5.991), (0.01, 1, 6.635), (0.05, 3, 7.815), (0.1, 4, 7.779)] {
        let got = chi2_quantile(alpha, df).unwrap();
        assert!((got - want).abs() < 1e-3, "χ²({alpha}, {df}) = {got}, table {want}");
    }
}

#[test]
fn halving_the_step_moves_outer_endpoints_by_at_most_one_step() {
    let domain = ParameterDomain::unit_box(2);
    for (c, a) in [([0.4, 0.6], [30.0, 10.0]), ([0.7, 0.3], [5.0, 60.0]), ([0.5, 0.5], [80.0, 80.0])] {
        let (model, inc, l_star) = bowl_model(c, a);
        for k in 0..2 {
            let run = |step: f64| profile(&model, &domain, &ProfileConfig { k, step, ..ProfileConfig::default() }, l_star, Some(&inc)).unwrap();
            let (coarse, fine) = (run(0.04), run(0.02));
            assert_eq!(coarse.oa_ci.len(), fine.oa_ci.len());
            for (p, q) in coarse.oa_ci.iter().zip(&fine.oa_ci) {
                assert!((p.lo - q.lo).abs() <= 0.04 && (p.hi - q.hi).abs() <= 0.04, "{p:?} vs {q:?}");
            }
        }
    }
}

#[test]
fn outer_width_shrinks_as_evaluations_accumulate() {
    use bo4io::profile::total_width;
    use bo4io::rng::Halton;
    let domain = ParameterDomain::unit_box(2);
    let kernel = KernelConfig::new(Matern::FiveHalves, vec![0.3, 0.3], 1.0, 1e-4);
    let f = |p: &[f64]| 20.0 * (p[0] - 0.4).powi(2) + 12.0 * (p[1] - 0.55).powi(2);
    let sizes = [8, 16, 32];
    let mut medians = Vec::new();
    for &t in &sizes {
        let mut widths: Vec<f64> = (0..5u64)
            .map(|seed| {
                let h = Halton::new(2, seed);
                let x: Vec<Vec<f64>> = (0..t).map(|i| h.point(i)).collect();
                let y: Vec<f64> = x.iter().map(|p| f(p)).collect();
                let (i, l) = y.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
                let inc = x[i].clone();
                let model = GpModel::condition(kernel.clone(), EvaluationDataset::new(x, y).unwrap()).unwrap();
                let cfg = ProfileConfig { step: 0.02, ..ProfileConfig::default() };
                total_width(&profile(&model, &domain, &cfg, l, Some(&inc)).unwrap().oa_ci)
            })
            .collect();
        widths.sort_by(f64::total_cmp);
        medians.push(widths[2]);
    }
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
}
