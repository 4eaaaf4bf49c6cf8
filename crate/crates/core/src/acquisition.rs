//! Lower-confidence-bound acquisition and its minimization over the domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::optim::local_minimize;
use crate::rng::Halton;

/// Scatter candidates per parameter dimension.
pub const CANDIDATES_PER_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub beta: f64,
    pub restarts: usize,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            restarts: 5,
            local_steps: 40,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("acquisition.beta must be positive (got {})", self.beta)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("acquisition.restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// `μ(θ) − √β·σ(θ)`.
pub fn lcb(model: &GpModel, query: &[f64], beta: f64) -> Result<f64> {
    check_dim(model.dim(), query.len())?;
    Ok(lcb_unchecked(model, query, beta.sqrt()))
}

#[inline]
pub(crate) fn lcb_unchecked(model: &GpModel, query: &[f64], sqrt_beta: f64) -> f64 {
    let (mu, var) = model.posterior_unchecked(query);
    mu - sqrt_beta * var.sqrt()
}

/// Result of minimizing the acquisition.
#[derive(Debug, Clone)]
pub struct AcquisitionOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    /// Scatter candidates with their acquisition values, best first (ties by
    /// scatter index).
    pub ranked_scatter: Vec<(Vec<f64>, f64)>,
}

/// Minimizes the LCB over the domain: a shifted Halton scatter of
/// `512·d` candidates, then projected local descent from the best
/// `restarts` candidates. The returned value never exceeds the scatter
/// minimum.
pub fn minimize_acquisition(model: &GpModel, domain: &ParameterDomain, cfg: &AcquisitionConfig) -> Result<AcquisitionOutcome> {
    cfg.validate()?;
    domain.validate()?;
    check_dim(domain.dim(), model.dim())?;
    let d = domain.dim();
    let sqrt_beta = cfg.beta.sqrt();
    let f = |x: &[f64]| lcb_unchecked(model, x, sqrt_beta);

    let halton = Halton::new(d, cfg.seed);
    let candidates: Vec<Vec<f64>> = (0..CANDIDATES_PER_DIM * d)
        .map(|i| domain.from_unit_cube(&halton.point(i)))
        .collect();
    let values: Vec<f64> = candidates.par_iter().map(|x| f(x)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let scale = domain.widths();
    let project = |x: &[f64]| domain.project(x).expect("validated domain");
    let refined: Vec<(Vec<f64>, f64)> = order
        .iter()
        .take(cfg.restarts)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&i| local_minimize(f, project, candidates[i].clone(), values[i], &scale, cfg.local_steps))
        .collect();

    let best = order[0];
    let mut point = candidates[best].clone();
    let mut value = values[best];
    for (x, v) in refined {
        if v < value {
            point = x;
            value = v;
        }
    }
    let ranked_scatter = order.into_iter().map(|i| (candidates[i].clone(), values[i])).collect();
    Ok(AcquisitionOutcome {
        point,
        value,
        ranked_scatter,
    })
}
