//! Observation datasets: instance inputs paired with observed decisions.
//!
//! Files start with the line `bo4io-obs v1` followed by TOML:
//!
//! ```text
//! bo4io-obs v1
//! case = "fba"
//! network = "toy-fba"
//! d = 2
//! sigma = 0.01
//! observed = ["v"]
//!
//! [standardization]
//! mean = [...]
//! scale = [...]
//!
//! [[observation]]
//! x = [...]
//! [observation.input]
//! lower = [...]
//! upper = [...]
//! ```
//!
//! When a `[standardization]` table is present, `x` is stored in
//! standardized units and predictions are mapped with the same statistics
//! before comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fop::document::strip_header;
use crate::fop::InstanceInput;

pub const HEADER: &str = "bo4io-obs v1";

/// Problem family of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Fba,
    Pooling,
    Genpooling,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::Fba => "fba",
            Case::Pooling => "pooling",
            Case::Genpooling => "genpooling",
        }
    }
}

/// Per-component affine map `z = (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Column statistics of `rows` with population standard deviation;
    /// near-constant columns get scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or_else(|| Error::Input("cannot standardize zero rows".into()))?;
        let m = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in rows {
            check_dim(n, r.len())?;
            for (acc, v) in mean.iter_mut().zip(r) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; n];
        for r in rows {
            for ((acc, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / m).sqrt();
                if sd < 1e-9 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub input: InstanceInput,
    /// Observed components of the decision vector, in layout order.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub case: Case,
    /// Bundled network name or path.
    pub network: String,
    pub d: usize,
    /// Noise standard deviation used to generate the data, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Observed variable families.
    pub observed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    #[serde(rename = "observation")]
    pub observations: Vec<Observation>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Maps observed components of a prediction into the units of `x`.
    pub fn to_observed_units(&self, predicted: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(s) => s.apply(predicted),
            None => predicted.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed.is_empty() {
            return Err(Error::Input("dataset has an empty observed mask".into()));
        }
        if let Some(s) = &self.sigma {
            if !(*s >= 0.0) {
                return Err(Error::Input(format!("dataset sigma must be non-negative (got {s})")));
            }
        }
        let n = self.observations.first().map_or(0, |o| o.x.len());
        for (i, o) in self.observations.iter().enumerate() {
            if o.x.len() != n {
                return Err(Error::Input(format!(
                    "observation {i} has {} decision entries, expected {n}",
                    o.x.len()
                )));
            }
            if o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("observation {i} has non-finite decisions")));
            }
        }
        if let Some(s) = &self.standardization {
            if s.mean.len() != n || s.scale.len() != n || s.scale.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Input("standardization does not match the observed decisions".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let body = strip_header(text, HEADER, "observation dataset")?;
        let set: ObservationSet = toml::from_str(body).map_err(|e| Error::format("observation dataset", e))?;
        set.validate()?;
        Ok(set)
    }

    pub fn render(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::format("observation dataset", e))?;
        Ok(format!("{HEADER}\n{body}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display(), message),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }
}
