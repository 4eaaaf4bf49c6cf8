//! Multi-objective flux balance analysis with l2 regularization:
//!
//! ```text
//! min Σ_{k∈R^obj} θ_k c_k v_k + λ Σ_k v_k²   s.t.  S v = 0,  L ≤ v ≤ U
//! ```
//!
//! where `c_k = −1` for objectives to maximize and `+1` for objectives to
//! minimize.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::solve_separable_qp;
use super::{input_field, simplex_weights, FopSolution, ForwardProblem, InstanceInput, SolveStatus, VariableLayout};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};

/// How per-observation bounds of a reaction are drawn by the data generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Keep the nominal bounds.
    #[default]
    None,
    /// `[L, U]` drawn from U(10, 100) and ordered.
    Forward,
    /// As `Forward`, mirrored to `[−U, −L]`.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub name: String,
    pub stoichiometry: BTreeMap<String, f64>,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub sampled: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerm {
    pub reaction: String,
    pub sense: ObjectiveSense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetabolicNetwork {
    pub name: String,
    pub lambda: f64,
    pub metabolites: Vec<String>,
    pub reactions: Vec<Reaction>,
    pub objectives: Vec<ObjectiveTerm>,
}

impl MetabolicNetwork {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("network '{}': {msg}", self.name)));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive (got {})", self.lambda));
        }
        if self.objectives.is_empty() {
            return bad("at least one objective reaction is required".into());
        }
        for r in &self.reactions {
            if !(r.lower <= r.upper) {
                return bad(format!("reaction {} has lower > upper", r.name));
            }
            if let Some(m) = r.stoichiometry.keys().find(|m| !self.metabolites.contains(m)) {
                return bad(format!("reaction {} references unknown metabolite {m}", r.name));
            }
        }
        for o in &self.objectives {
            if self.reaction_index(&o.reaction).is_none() {
                return bad(format!("objective references unknown reaction {}", o.reaction));
            }
        }
        Ok(())
    }

    pub fn reaction_index(&self, name: &str) -> Option<usize> {
        self.reactions.iter().position(|r| r.name == name)
    }

    pub fn stoichiometric_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.metabolites.len(), self.reactions.len());
        for (k, r) in self.reactions.iter().enumerate() {
            for (m, c) in &r.stoichiometry {
                let j = self.metabolites.iter().position(|x| x == m).expect("validated");
                s[(j, k)] += c;
            }
        }
        s
    }

    /// Nominal bounds as an instance input.
    pub fn nominal_input(&self) -> InstanceInput {
        InstanceInput::from([
            ("lower".to_string(), self.reactions.iter().map(|r| r.lower).collect()),
            ("upper".to_string(), self.reactions.iter().map(|r| r.upper).collect()),
        ])
    }
}

/// FBA forward problem with `d` free objective weights; the weight of objective
/// `d+1` is `1 − Σθ`.
#[derive(Debug, Clone)]
pub struct FbaProblem {
    network: MetabolicNetwork,
    stoich: DMatrix<f64>,
    objective_idx: Vec<usize>,
    objective_sign: Vec<f64>,
    layout: VariableLayout,
}

impl FbaProblem {
    /// Uses the first `d + 1` objectives of the network.
    pub fn new(network: MetabolicNetwork, d: usize) -> Result<Self> {
        network.validate()?;
        if d == 0 || d + 1 > network.objectives.len() {
            return Err(Error::Config(format!(
                "fba dimension d={d} needs 1 ≤ d ≤ {} for network '{}'",
                network.objectives.len() - 1,
                network.name
            )));
        }
        let objective_idx = network.objectives[..=d]
            .iter()
            .map(|o| network.reaction_index(&o.reaction).expect("validated"))
            .collect();
        let objective_sign = network.objectives[..=d]
            .iter()
            .map(|o| match o.sense {
                ObjectiveSense::Max => -1.0,
                ObjectiveSense::Min => 1.0,
            })
            .collect();
        let mut layout = VariableLayout::new();
        layout.push("v", network.reactions.len());
        Ok(Self {
            stoich: network.stoichiometric_matrix(),
            network,
            objective_idx,
            objective_sign,
            layout,
        })
    }

    pub fn network(&self) -> &MetabolicNetwork {
        &self.network
    }

    pub fn num_reactions(&self) -> usize {
        self.network.reactions.len()
    }

    fn linear_term(&self, weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_reactions()];
        for ((k, s), w) in self.objective_idx.iter().zip(&self.objective_sign).zip(weights) {
            g[*k] += s * w;
        }
        g
    }

    /// Solves for a full weight vector over the selected objectives.
    pub fn solve_weights(&self, input: &InstanceInput, weights: &[f64]) -> Result<FopSolution> {
        check_dim(self.objective_idx.len(), weights.len())?;
        let n = self.num_reactions();
        let lower = input_field(input, "lower", n)?;
        let upper = input_field(input, "upper", n)?;
        let h = vec![2.0 * self.network.lambda; n];
        let g = self.linear_term(weights);
        let zeros = DVector::zeros(self.stoich.nrows());
        match solve_separable_qp(&h, &g, &self.stoich, &zeros, lower, upper)? {
            Some(out) => Ok(FopSolution::optimal(out.v, out.objective)),
            None => Ok(FopSolution::without_point(SolveStatus::Infeasible, n)),
        }
    }

    /// Linear objective coefficients for a full weight vector.
    pub fn objective_coefficients(&self, weights: &[f64]) -> Vec<f64> {
        self.linear_term(weights)
    }

    pub fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.stoich
    }
}

impl ForwardProblem for FbaProblem {
    fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    fn param_dim(&self) -> usize {
        self.objective_idx.len() - 1
    }

    fn default_domain(&self) -> ParameterDomain {
        ParameterDomain::unit_simplex(self.param_dim())
    }

    fn full_parameters(&self, theta: &[f64]) -> Vec<f64> {
        simplex_weights(theta)
    }

    fn solve(&self, input: &InstanceInput, theta: &[f64]) -> Result<FopSolution> {
        check_dim(self.param_dim(), theta.len())?;
        self.solve_weights(input, &simplex_weights(theta))
    }

    fn residual(&self, input: &InstanceInput, _theta: &[f64], x: &[f64]) -> Result<f64> {
        let n = self.num_reactions();
        check_dim(n, x.len())?;
        let lower = input_field(input, "lower", n)?;
        let upper = input_field(input, "upper", n)?;
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let balance = (&self.stoich * DVector::from_column_slice(x)).amax();
        let bounds = (0..n).fold(0.0f64, |m, k| m.max(lower[k] - x[k]).max(x[k] - upper[k]));
        Ok(balance.max(bounds) / scale)
    }
}
