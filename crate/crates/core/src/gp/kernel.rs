use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

/// Smallest noise variance placed on the kernel diagonal.
pub const JITTER_FLOOR: f64 = 1e-8;
/// Largest jitter tried when the kernel matrix refuses to factorize.
pub const JITTER_CEILING: f64 = 1e-4;

/// Matérn smoothness ν.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Matern {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[default]
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl Matern {
    /// Correlation as a function of the scaled distance `r`.
    #[inline]
    pub fn correlation(self, r: f64) -> f64 {
        match self {
            Matern::Half => (-r).exp(),
            Matern::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            Matern::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
            }
        }
    }

    /// `-(1/r) dk/dr` for unit signal variance; the derivative of the
    /// correlation w.r.t. `log ℓ_i` is this times `(Δ_i/ℓ_i)²`.
    #[inline]
    pub(crate) fn lengthscale_factor(self, r: f64) -> f64 {
        match self {
            Matern::Half => {
                if r > 0.0 {
                    (-r).exp() / r
                } else {
                    0.0
                }
            }
            Matern::ThreeHalves => 3.0 * (-(3f64.sqrt()) * r).exp(),
            Matern::FiveHalves => {
                let s = 5f64.sqrt() * r;
                5.0 / 3.0 * (1.0 + s) * (-s).exp()
            }
        }
    }
}

/// Kernel family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: Matern,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn new(family: Matern, lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            family,
            lengthscales,
            signal_variance,
            noise_variance: noise_variance.max(JITTER_FLOOR),
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.noise_variance >= JITTER_FLOOR
            && self.noise_variance.is_finite()
    }

    #[inline]
    pub(crate) fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * self.family.correlation(self.scaled_distance(a, b))
    }

    /// Covariance between two parameter vectors.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(self.dim(), a.len())?;
        check_dim(self.dim(), b.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Log-space hyperparameter vector `[log ℓ.., log σ_f², log σ_n²]`.
    pub fn to_log_params(&self) -> Vec<f64> {
        self.lengthscales
            .iter()
            .map(|l| l.ln())
            .chain([self.signal_variance.ln(), self.noise_variance.ln()])
            .collect()
    }

    pub fn from_log_params(family: Matern, p: &[f64]) -> Self {
        let d = p.len() - 2;
        Self {
            family,
            lengthscales: p[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: p[d].exp(),
            noise_variance: p[d + 1].exp().max(JITTER_FLOOR),
        }
    }
}
