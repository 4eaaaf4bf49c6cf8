//! Decision loss `l(θ) = Σ_i (x_i − x̂_i(θ))ᵀ W (x_i − x̂_i(θ))` and the
//! reporting metrics built on the same forward solves.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSet;
use crate::error::{check_dim, Error, Result};
use crate::fop::SharedProblem;

/// Per-observation penalty factor applied when a forward problem has no
/// solution at the queried parameters.
pub const DEFAULT_PENALTY_PER_OBSERVATION: f64 = 1e6;

/// Weight matrix of the residual quadratic form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weights {
    #[default]
    Identity,
    /// `c · I`.
    Scaled(f64),
    /// `diag(w)`.
    Diagonal(Vec<f64>),
    /// Dense symmetric positive definite matrix, row by row.
    Dense(Vec<Vec<f64>>),
}

impl Weights {
    /// Inverse noise variance `σ⁻² I`.
    pub fn inverse_noise(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("inverse-noise weights need sigma > 0 (got {sigma})")));
        }
        Ok(Weights::Scaled(1.0 / (sigma * sigma)))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Weights::Identity => Ok(()),
            Weights::Scaled(c) if *c > 0.0 && c.is_finite() => Ok(()),
            Weights::Scaled(c) => Err(Error::Config(format!("weight scale must be positive (got {c})"))),
            Weights::Diagonal(w) => {
                check_dim(n, w.len())?;
                if w.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Config("diagonal weights must be positive".into()))
                }
            }
            Weights::Dense(rows) => {
                check_dim(n, rows.len())?;
                for r in rows {
                    check_dim(n, r.len())?;
                }
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                if (0..n).any(|i| (0..i).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * m.amax().max(1.0))) {
                    return Err(Error::Config("weight matrix must be symmetric".into()));
                }
                if m.cholesky().is_none() {
                    return Err(Error::Config("weight matrix must be positive definite".into()));
                }
                Ok(())
            }
        }
    }

    /// `rᵀ W r`.
    pub fn quadratic(&self, r: &[f64]) -> f64 {
        match self {
            Weights::Identity => r.iter().map(|v| v * v).sum(),
            Weights::Scaled(c) => c * r.iter().map(|v| v * v).sum::<f64>(),
            Weights::Diagonal(w) => r.iter().zip(w).map(|(v, w)| w * v * v).sum(),
            Weights::Dense(rows) => rows
                .iter()
                .zip(r)
                .map(|(row, ri)| ri * row.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weights: Weights,
    /// Loss reported when any forward problem is infeasible; defaults to
    /// `1e6 · |I|`.
    pub penalty: Option<f64>,
    /// Concurrent forward solves.
    pub workers: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: Weights::Identity,
            penalty: None,
            workers: 1,
        }
    }
}

/// Outcome of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Observations without a forward solution; non-zero means `value` is
    /// the penalty.
    pub infeasible: usize,
    /// Wall time spent in forward solves.
    pub fop_time: Duration,
}

impl LossValue {
    pub fn penalized(&self) -> bool {
        self.infeasible > 0
    }
}

/// Forward predictions for each observation, in observed units; `None`
/// where the forward problem has no solution.
pub type Predictions = Vec<Option<Vec<f64>>>;

/// Evaluates losses for one dataset and forward problem.
pub struct LossEvaluator {
    problem: SharedProblem,
    data: Arc<ObservationSet>,
    mask: Vec<usize>,
    config: LossConfig,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for LossEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossEvaluator")
            .field("problem", &self.problem)
            .field("observations", &self.data.len())
            .field("config", &self.config)
            .finish()
    }
}

impl LossEvaluator {
    pub fn new(problem: SharedProblem, data: Arc<ObservationSet>, config: LossConfig) -> Result<Self> {
        data.validate()?;
        if data.is_empty() {
            return Err(Error::Input("loss needs at least one observation".into()));
        }
        let mask = problem.layout().mask_indices(&data.observed)?;
        for (i, o) in data.observations.iter().enumerate() {
            if o.x.len() != mask.len() {
                return Err(Error::Input(format!(
                    "observation {i} has {} decision entries but the observed families ({}) cover {}",
                    o.x.len(),
                    data.observed.join(", "),
                    mask.len()
                )));
            }
        }
        config.weights.validate(mask.len())?;
        if config.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(p) = config.penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("penalty must be finite and non-negative (got {p})")));
            }
        }
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?,
            )
        } else {
            None
        };
        Ok(Self {
            problem,
            data,
            mask,
            config,
            pool,
        })
    }

    pub fn problem(&self) -> &SharedProblem {
        &self.problem
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn penalty(&self) -> f64 {
        self.config
            .penalty
            .unwrap_or(DEFAULT_PENALTY_PER_OBSERVATION * self.data.len() as f64)
    }

    fn predict_one(&self, i: usize, theta: &[f64]) -> Result<Option<Vec<f64>>> {
        let obs = &self.data.observations[i];
        match self.problem.solve(&obs.input, theta) {
            Ok(s) if s.status.has_point() => {
                let picked: Vec<f64> = self.mask.iter().map(|&k| s.x[k]).collect();
                Ok(Some(self.data.to_observed_units(&picked)))
            }
            Ok(_) => Ok(None),
            Err(Error::Numerical(msg)) => {
                log::warn!("forward solve {i} failed numerically at {theta:?}: {msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Forward predictions for every observation, solved concurrently up to
    /// the worker limit and returned in observation order.
    pub fn predictions(&self, theta: &[f64]) -> Result<Predictions> {
        check_dim(self.problem.param_dim(), theta.len())?;
        let n = self.data.len();
        let run = || -> Result<Predictions> {
            (0..n)
                .into_par_iter()
                .map(|i| self.predict_one(i, theta))
                .collect()
        };
        match &self.pool {
            Some(pool) => pool.install(run),
            None => (0..n).map(|i| self.predict_one(i, theta)).collect(),
        }
    }

    /// Weighted loss with a fixed-order sum over observations.
    pub fn evaluate(&self, theta: &[f64]) -> Result<LossValue> {
        let start = Instant::now();
        let preds = self.predictions(theta)?;
        let fop_time = start.elapsed();
        Ok(self.loss_from(&preds, fop_time))
    }

    pub fn loss_from(&self, preds: &Predictions, fop_time: Duration) -> LossValue {
        let infeasible = preds.iter().filter(|p| p.is_none()).count();
        if infeasible > 0 {
            return LossValue {
                value: self.penalty(),
                infeasible,
                fop_time,
            };
        }
        let mut value = 0.0;
        for (obs, p) in self.data.observations.iter().zip(preds) {
            let r: Vec<f64> = obs.x.iter().zip(p.as_ref().expect("feasible")).map(|(a, b)| a - b).collect();
            value += self.config.weights.quadratic(&r);
        }
        LossValue {
            value,
            infeasible: 0,
            fop_time,
        }
    }

    /// Mean squared decision error per observed component, in observed
    /// units: `Σ_i Σ_k (x_ik − x̂_ik)² / |I| / n`. `None` if any forward
    /// problem is infeasible.
    pub fn decision_error(&self, theta: &[f64]) -> Result<Option<f64>> {
        let preds = self.predictions(theta)?;
        Ok(decision_error_from(&self.data, &preds))
    }
}

pub fn decision_error_from(data: &ObservationSet, preds: &Predictions) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (obs, p) in data.observations.iter().zip(preds) {
        let p = p.as_ref()?;
        total += obs.x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += obs.x.len();
    }
    (count > 0).then(|| total / count as f64)
}

/// Euclidean distance between full parameter vectors.
pub fn parameter_error(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_dim(truth.len(), estimate.len())?;
    Ok(truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}
