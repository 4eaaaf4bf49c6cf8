//! Synthetic inverse-optimization datasets.
//!
//! Ground truth, per-dataset prices, per-observation inputs and noise come
//! from separate keyed streams, so train and test sets are reproducible
//! independently and redraws never shift other draws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Case, Observation, ObservationSet, Standardization};
use crate::error::{Error, Result};
use crate::fop::document::Network;
use crate::fop::fba::Sampling;
use crate::fop::{simplex_weights, FbaProblem, ForwardProblem, GenPoolingProblem, InstanceInput, PoolingOptions, PoolingProblem};
use crate::rng::{keyed_rng, tag};

/// Attempts per observation before giving up on a feasible draw.
pub const MAX_REDRAWS: usize = 100;
/// Range of sampled FBA flux bounds.
pub const FBA_BOUND_RANGE: (f64, f64) = (10.0, 100.0);
/// Ground-truth demand caps for standard pooling.
pub const POOLING_THETA_RANGE: (f64, f64) = (0.5, 1.0);
/// Feed availabilities for standard pooling.
pub const POOLING_AVAILABILITY_RANGE: (f64, f64) = (0.5, 1.0);
/// Ground-truth first-quality limits for generalized pooling.
pub const GENPOOLING_THETA_RANGE: (f64, f64) = (0.2, 0.6);
/// Feed availabilities and product demands for generalized pooling.
pub const GENPOOLING_INPUT_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub case: Case,
    /// Bundled network name or path, recorded in the datasets.
    pub network: String,
    /// Unknown-parameter dimension; defaults to the network's natural one.
    #[serde(default)]
    pub d: Option<usize>,
    pub n_train: usize,
    #[serde(default)]
    pub n_test: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be a non-negative number (got {})", self.sigma)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be at least 1".into()));
        }
        if self.d == Some(0) {
            return Err(Error::Config("d must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Free parameters.
    pub theta_true: Vec<f64>,
    /// Full parameter vector (e.g. all simplex weights).
    pub theta_full: Vec<f64>,
    pub train: ObservationSet,
    pub test: ObservationSet,
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn tags(self) -> (u64, u64) {
        match self {
            Split::Train => (tag::TRAIN, tag::NOISE_TRAIN),
            Split::Test => (tag::TEST, tag::NOISE_TEST),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

/// Generates ground truth plus train and test sets for `network`.
pub fn generate(spec: &GenSpec, network: &Network, options: &PoolingOptions) -> Result<Generated> {
    spec.validate()?;
    let kind_matches = matches!(
        (spec.case, network),
        (Case::Fba, Network::Fba(_)) | (Case::Pooling, Network::Pooling(_)) | (Case::Genpooling, Network::Genpooling(_))
    );
    if !kind_matches {
        return Err(Error::Config(format!(
            "case '{}' does not match {} network '{}'",
            spec.case.as_str(),
            network.kind(),
            network.name()
        )));
    }
    let d = spec.d.unwrap_or_else(|| network.default_dim());
    match network {
        Network::Fba(net) => Fba::new(spec, FbaProblem::new(net.clone(), d)?).run(),
        Network::Pooling(net) => {
            let problem = PoolingProblem::new(net.clone(), options.clone())?;
            if d != problem.param_dim() {
                return Err(Error::Config(format!("pooling d must equal the number of products ({})", problem.param_dim())));
            }
            pooling(spec, &problem)
        }
        Network::Genpooling(net) => {
            let problem = GenPoolingProblem::new(net.clone(), options.clone(), Default::default())?;
            if d != problem.param_dim() {
                return Err(Error::Config(format!(
                    "generalized pooling d must equal the number of products ({})",
                    problem.param_dim()
                )));
            }
            genpooling(spec, &problem)
        }
    }
}

fn empty_set(spec: &GenSpec, d: usize, observed: &[&str]) -> ObservationSet {
    ObservationSet {
        case: spec.case,
        network: spec.network.clone(),
        d,
        sigma: Some(spec.sigma),
        observed: observed.iter().map(|s| s.to_string()).collect(),
        standardization: None,
        observations: Vec::new(),
    }
}

/// Solves one observation, redrawing its input until the forward problem is
/// feasible. Returns the input and the observed components of the solution.
fn solve_with_redraws<P, D>(problem: &P, theta: &[f64], mask: &[usize], rng: &mut ChaCha8Rng, mut draw: D) -> Result<(InstanceInput, Vec<f64>)>
where
    P: ForwardProblem + ?Sized,
    D: FnMut(&mut ChaCha8Rng) -> InstanceInput,
{
    for _ in 0..MAX_REDRAWS {
        let input = draw(rng);
        let sol = problem.solve(&input, theta)?;
        if sol.status.has_point() {
            return Ok((input, mask.iter().map(|&k| sol.x[k]).collect()));
        }
    }
    Err(Error::Numerical(format!(
        "no feasible instance after {MAX_REDRAWS} draws; check the network bounds"
    )))
}

fn add_noise(spec: &GenSpec, noise_tag: u64, i: usize, x: &mut [f64]) {
    if spec.sigma > 0.0 {
        let mut rng = keyed_rng(spec.seed, noise_tag, i as u64);
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += spec.sigma * e;
        }
    }
}

struct Fba<'a> {
    spec: &'a GenSpec,
    problem: FbaProblem,
}

impl<'a> Fba<'a> {
    fn new(spec: &'a GenSpec, problem: FbaProblem) -> Self {
        Self { spec, problem }
    }

    fn draw_input(&self, rng: &mut ChaCha8Rng) -> InstanceInput {
        let mut input = self.problem.network().nominal_input();
        for (k, r) in self.problem.network().reactions.iter().enumerate() {
            if r.sampled == Sampling::None {
                continue;
            }
            let a = uniform(rng, FBA_BOUND_RANGE);
            let b = uniform(rng, FBA_BOUND_RANGE);
            let (lo, hi) = (a.min(b), a.max(b));
            let (lo, hi) = if r.sampled == Sampling::Reverse { (-hi, -lo) } else { (lo, hi) };
            input.get_mut("lower").expect("nominal")[k] = lo;
            input.get_mut("upper").expect("nominal")[k] = hi;
        }
        input
    }

    fn split(&self, theta: &[f64], split: Split, n: usize) -> Result<ObservationSet> {
        let (input_tag, noise_tag) = split.tags();
        let mask = self.problem.layout().mask_indices(&["v".to_string()])?;
        let solved: Vec<(InstanceInput, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = keyed_rng(self.spec.seed, input_tag, i as u64);
                solve_with_redraws(&self.problem, theta, &mask, &mut rng, |r| self.draw_input(r))
            })
            .collect::<Result<_>>()?;
        let mut set = empty_set(self.spec, self.problem.param_dim(), &["v"]);
        if n == 0 {
            return Ok(set);
        }
        let rows: Vec<Vec<f64>> = solved.iter().map(|s| s.1.clone()).collect();
        let st = Standardization::fit(&rows)?;
        for (i, (input, x)) in solved.into_iter().enumerate() {
            let mut z = st.apply(&x);
            add_noise(self.spec, noise_tag, i, &mut z);
            set.observations.push(Observation { input, x: z });
        }
        set.standardization = Some(st);
        Ok(set)
    }

    fn run(&self) -> Result<Generated> {
        let d = self.problem.param_dim();
        let mut rng = keyed_rng(self.spec.seed, tag::GROUND_TRUTH, 0);
        let g: Vec<f64> = (0..=d).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = g.iter().sum();
        let theta_true: Vec<f64> = g[..d].iter().map(|v| v / total).collect();
        let theta_full = simplex_weights(&theta_true);
        Ok(Generated {
            train: self.split(&theta_true, Split::Train, self.spec.n_train)?,
            test: self.split(&theta_true, Split::Test, self.spec.n_test)?,
            theta_true,
            theta_full,
        })
    }
}

fn pooling_split(
    spec: &GenSpec,
    problem: &dyn ForwardProblem,
    theta: &[f64],
    observed: &[&str],
    split: Split,
    n: usize,
    draw: &(dyn Fn(&mut ChaCha8Rng) -> InstanceInput + Sync),
) -> Result<ObservationSet> {
    let (input_tag, noise_tag) = split.tags();
    let names: Vec<String> = observed.iter().map(|s| s.to_string()).collect();
    let mask = problem.layout().mask_indices(&names)?;
    let mut set = empty_set(spec, problem.param_dim(), observed);
    set.observations = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(spec.seed, input_tag, i as u64);
            let (input, mut x) = solve_with_redraws(problem, theta, &mask, &mut rng, draw)?;
            add_noise(spec, noise_tag, i, &mut x);
            Ok(Observation { input, x })
        })
        .collect::<Result<_>>()?;
    Ok(set)
}

fn pooling(spec: &GenSpec, problem: &PoolingProblem) -> Result<Generated> {
    let net = problem.network();
    let mut rng = keyed_rng(spec.seed, tag::GROUND_TRUTH, 0);
    let theta: Vec<f64> = (0..problem.param_dim()).map(|_| uniform(&mut rng, POOLING_THETA_RANGE)).collect();

    // Costs and revenues are drawn once per dataset between the nominal
    // extremes; availabilities vary per observation.
    let mut rng = keyed_rng(spec.seed, tag::INSTANCE, 0);
    let cost_range = min_max(net.feeds.iter().map(|f| f.cost));
    let price_range = min_max(net.pool_product.iter().chain(&net.feed_product).map(|s| s.price));
    let cost: Vec<f64> = net.feeds.iter().map(|_| uniform(&mut rng, cost_range)).collect();
    let price_y: Vec<f64> = net.pool_product.iter().map(|_| uniform(&mut rng, price_range)).collect();
    let price_z: Vec<f64> = net.feed_product.iter().map(|_| uniform(&mut rng, price_range)).collect();
    let ns = net.feeds.len();
    let draw = move |r: &mut ChaCha8Rng| {
        InstanceInput::from([
            ("availability".to_string(), (0..ns).map(|_| uniform(r, POOLING_AVAILABILITY_RANGE)).collect()),
            ("cost".to_string(), cost.clone()),
            ("price_y".to_string(), price_y.clone()),
            ("price_z".to_string(), price_z.clone()),
        ])
    };
    let observed = ["f", "y"];
    Ok(Generated {
        train: pooling_split(spec, problem, &theta, &observed, Split::Train, spec.n_train, &draw)?,
        test: pooling_split(spec, problem, &theta, &observed, Split::Test, spec.n_test, &draw)?,
        theta_full: problem.full_parameters(&theta),
        theta_true: theta,
    })
}

fn genpooling(spec: &GenSpec, problem: &GenPoolingProblem) -> Result<Generated> {
    let net = &problem.network().0;
    let mut rng = keyed_rng(spec.seed, tag::GROUND_TRUTH, 0);
    let theta: Vec<f64> = (0..problem.param_dim())
        .map(|_| uniform(&mut rng, GENPOOLING_THETA_RANGE))
        .collect();

    let mut rng = keyed_rng(spec.seed, tag::INSTANCE, 0);
    let (pmin, pmax) = min_max(net.pool_product.iter().chain(&net.feed_product).map(|s| s.price));
    let range = (0.5 * pmin, 1.5 * pmax);
    let price_y: Vec<f64> = net.pool_product.iter().map(|_| uniform(&mut rng, range)).collect();
    let price_z: Vec<f64> = net.feed_product.iter().map(|_| uniform(&mut rng, range)).collect();
    let (ns, nj) = (net.feeds.len(), net.products.len());
    let draw = move |r: &mut ChaCha8Rng| {
        InstanceInput::from([
            ("availability".to_string(), (0..ns).map(|_| uniform(r, GENPOOLING_INPUT_RANGE)).collect()),
            ("demand".to_string(), (0..nj).map(|_| uniform(r, GENPOOLING_INPUT_RANGE)).collect()),
            ("price_y".to_string(), price_y.clone()),
            ("price_z".to_string(), price_z.clone()),
        ])
    };
    let observed = ["f"];
    Ok(Generated {
        train: pooling_split(spec, problem, &theta, &observed, Split::Train, spec.n_train, &draw)?,
        test: pooling_split(spec, problem, &theta, &observed, Split::Test, spec.n_test, &draw)?,
        theta_full: problem.full_parameters(&theta),
        theta_true: theta,
    })
}
