//! Forward optimization problems and their self-contained global solvers.
//!
//! A [`ForwardProblem`] maps an instance input `u` and a parameter vector
//! `θ` to a globally optimal decision vector. Bundled families are a
//! regularized flux balance QP, the standard pooling problem, and a small
//! generalized pooling problem with installation binaries. Larger pooling
//! instances can be delegated to an external solver via [`oracle`].

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::ParameterDomain;
use crate::error::{Error, Result};

pub mod document;
pub mod fba;
pub mod genpooling;
pub mod lp;
pub mod oracle;
pub mod pooling;
mod qp;

pub use document::{FopDocument, Instance, Network};
pub use fba::{FbaProblem, MetabolicNetwork};
pub use genpooling::{GenPoolingNetwork, GenPoolingProblem};
pub use lp::{solve_lp, LinearProgram, LpBuilder, Sense};
pub use pooling::{PoolingNetwork, PoolingOptions, PoolingProblem};

/// Named real vectors describing one instance (bounds, prices, ...).
pub type InstanceInput = BTreeMap<String, Vec<f64>>;

/// Scaled constraint residual accepted as feasible.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// Best point of a certified grid search; see [`FopSolution::gap`].
    GridOptimal,
    Infeasible,
    Unbounded,
}

impl SolveStatus {
    pub fn has_point(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GridOptimal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GridOptimal => "grid-optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => SolveStatus::Optimal,
            "grid-optimal" => SolveStatus::GridOptimal,
            "infeasible" => SolveStatus::Infeasible,
            "unbounded" => SolveStatus::Unbounded,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FopSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Bound on the distance to the true optimum for grid searches.
    pub gap: Option<f64>,
}

impl FopSolution {
    pub fn optimal(x: Vec<f64>, objective: f64) -> Self {
        Self {
            x,
            objective,
            status: SolveStatus::Optimal,
            gap: None,
        }
    }

    pub fn without_point(status: SolveStatus, n: usize) -> Self {
        Self {
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            status,
            gap: None,
        }
    }
}

/// Names and index ranges of the variable families in a decision vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariableLayout {
    families: Vec<(String, Range<usize>)>,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, len: usize) {
        let start = self.len();
        self.families.push((name.to_string(), start..start + len));
    }

    pub fn len(&self) -> usize {
        self.families.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn family(&self, name: &str) -> Option<Range<usize>> {
        self.families.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.families.iter().map(|(n, _)| n.as_str())
    }

    /// Decision-vector indices covered by the named families, in layout order.
    pub fn mask_indices(&self, mask: &[String]) -> Result<Vec<usize>> {
        if mask.is_empty() {
            return Err(Error::Input("observed mask is empty".into()));
        }
        for m in mask {
            if self.family(m).is_none() {
                return Err(Error::Input(format!(
                    "observed family '{m}' is not part of the decision vector ({})",
                    self.names().collect::<Vec<_>>().join(", ")
                )));
            }
        }
        Ok(self
            .families
            .iter()
            .filter(|(n, _)| mask.contains(n))
            .flat_map(|(_, r)| r.clone())
            .collect())
    }
}

/// A parameterized decision model with a global solver.
pub trait ForwardProblem: Debug + Send + Sync {
    /// Layout of the full decision vector.
    fn layout(&self) -> &VariableLayout;

    /// Number of free parameters `d`.
    fn param_dim(&self) -> usize;

    /// Parameter domain used when none is configured.
    fn default_domain(&self) -> ParameterDomain;

    /// Reconstructs the full parameter vector from the `d` free ones.
    fn full_parameters(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn solve(&self, input: &InstanceInput, theta: &[f64]) -> Result<FopSolution>;

    /// Largest scaled constraint violation of `x` for the instance.
    fn residual(&self, input: &InstanceInput, theta: &[f64], x: &[f64]) -> Result<f64>;
}

pub type SharedProblem = Arc<dyn ForwardProblem>;

pub(crate) fn input_field<'a>(input: &'a InstanceInput, name: &str, len: usize) -> Result<&'a [f64]> {
    let v = input
        .get(name)
        .ok_or_else(|| Error::Input(format!("instance input is missing field '{name}'")))?;
    if v.len() != len {
        return Err(Error::Input(format!(
            "instance field '{name}' has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(v)
}

/// Input field with a fallback when absent.
pub(crate) fn input_or<'a>(input: &'a InstanceInput, name: &str, fallback: &'a [f64]) -> Result<&'a [f64]> {
    if input.contains_key(name) {
        input_field(input, name, fallback.len())
    } else {
        Ok(fallback)
    }
}

/// Reconstructs `(θ₁..θ_d, 1 − Σθ)` for weights coupled to the unit simplex.
pub fn simplex_weights(theta: &[f64]) -> Vec<f64> {
    let mut w = theta.to_vec();
    w.push(1.0 - theta.iter().sum::<f64>());
    w
}
