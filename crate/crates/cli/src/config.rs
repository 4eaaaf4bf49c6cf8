//! Experiment configuration: one TOML file drives data generation, the BO
//! run and the profile analysis.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! case = "fba"
//! network = "toy-fba"
//! d = 2
//! n_train = 20
//! n_test = 20
//! sigma = 0.01
//!
//! [run]
//! iterations = 100
//! weights = "inverse-noise"
//!
//! [profile]
//! step = 0.01
//! ```

use std::path::{Path, PathBuf};

use bo4io::dataset::Case;
use bo4io::datagen::GenSpec;
use bo4io::fop::document::{bundled, FopDocument, Network};
use bo4io::fop::PoolingOptions;
use bo4io::loss::Weights;
use bo4io::profile::ProfileConfig;
use bo4io::{Error, ParameterDomain, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub profile: ProfileSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub case: Case,
    /// Bundled network name, or a path relative to the config file.
    pub network: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub n_train: usize,
    #[serde(default)]
    pub n_test: usize,
    pub sigma: f64,
    /// Grid intervals per dimension for pooling solves.
    #[serde(default = "default_grid_intervals")]
    pub grid_intervals: usize,
}

fn default_grid_intervals() -> usize {
    PoolingOptions::default().grid_intervals
}

/// Loss weights: a named choice or an explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightChoice {
    Named(NamedWeights),
    Explicit(Weights),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedWeights {
    Identity,
    /// `σ⁻² I` with the dataset's noise level.
    InverseNoise,
}

impl Default for WeightChoice {
    fn default() -> Self {
        WeightChoice::Named(NamedWeights::Identity)
    }
}

impl WeightChoice {
    pub fn resolve(&self, sigma: Option<f64>) -> Result<Weights> {
        match self {
            WeightChoice::Named(NamedWeights::Identity) => Ok(Weights::Identity),
            WeightChoice::Named(NamedWeights::InverseNoise) => match sigma {
                Some(s) if s > 0.0 => Weights::inverse_noise(s),
                _ => Err(Error::Config("run.weights = \"inverse-noise\" needs a dataset with sigma > 0".into())),
            },
            WeightChoice::Explicit(w) => Ok(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    pub refit_every: usize,
    pub beta: f64,
    pub weights: WeightChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    pub workers: usize,
    /// Parameter domain; the problem's default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<ParameterDomain>,
    /// Training data; `<out-dir>/train.obs` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Timeout per external solver call.
    pub oracle_timeout_s: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            iterations: 100,
            n0: None,
            refit_every: 1,
            beta: 4.0,
            weights: WeightChoice::default(),
            penalty: None,
            workers: 1,
            domain: None,
            data: None,
            oracle_timeout_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// 1-based parameters to profile; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Vec<usize>>,
    pub step: f64,
    pub rho: f64,
    pub alpha: f64,
    pub df: usize,
    /// Iteration counts at which to profile; the final one when empty.
    pub at_iterations: Vec<usize>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        let p = ProfileConfig::default();
        Self {
            parameters: None,
            step: p.step,
            rho: p.rho,
            alpha: p.alpha,
            df: p.df,
            at_iterations: Vec::new(),
        }
    }
}

impl Experiment {
    pub fn parse(text: &str) -> Result<Self> {
        let exp: Experiment = toml::from_str(text).map_err(|e| Error::format("config", e))?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display(), message),
            other => other,
        })
    }

    #[cfg(test)]
    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        let d = &self.data;
        if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
            return bad("data.sigma", format!("must be a non-negative number (got {})", d.sigma));
        }
        if d.n_train == 0 {
            return bad("data.n_train", "must be at least 1".into());
        }
        if d.d == Some(0) {
            return bad("data.d", "must be at least 1".into());
        }
        if d.grid_intervals == 0 {
            return bad("data.grid_intervals", "must be at least 1".into());
        }
        let r = &self.run;
        if r.iterations == 0 {
            return bad("run.iterations", "must be at least 1".into());
        }
        if r.n0.is_some_and(|n| n < 2) {
            return bad("run.n0", "must be at least 2".into());
        }
        if r.refit_every == 0 {
            return bad("run.refit_every", "must be at least 1".into());
        }
        if !(r.beta > 0.0 && r.beta.is_finite()) {
            return bad("run.beta", format!("must be positive (got {})", r.beta));
        }
        if r.workers == 0 {
            return bad("run.workers", "must be at least 1".into());
        }
        if !(r.oracle_timeout_s > 0.0) {
            return bad("run.oracle_timeout_s", "must be positive".into());
        }
        if let Some(dom) = &r.domain {
            dom.validate().map_err(|e| Error::Config(format!("run.domain: {e}")))?;
        }
        let p = &self.profile;
        if !(p.step > 0.0) {
            return bad("profile.step", format!("must be positive (got {})", p.step));
        }
        if !(p.rho > 0.0) {
            return bad("profile.rho", format!("must be positive (got {})", p.rho));
        }
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return bad("profile.alpha", format!("must lie in (0, 1) (got {})", p.alpha));
        }
        if p.df == 0 {
            return bad("profile.df", "must be at least 1".into());
        }
        if p.parameters.as_ref().is_some_and(|v| v.contains(&0)) {
            return bad("profile.parameters", "parameters are numbered from 1".into());
        }
        Ok(())
    }

    pub fn pooling_options(&self) -> PoolingOptions {
        PoolingOptions {
            grid_intervals: self.data.grid_intervals,
            ..PoolingOptions::default()
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            case: self.data.case,
            network: self.data.network.clone(),
            d: self.data.d,
            n_train: self.data.n_train,
            n_test: self.data.n_test,
            sigma: self.data.sigma,
            seed: self.seed,
        }
    }

    pub fn profile_config(&self, k: usize) -> ProfileConfig {
        ProfileConfig {
            k,
            step: self.profile.step,
            rho: self.profile.rho,
            alpha: self.profile.alpha,
            df: self.profile.df,
            seed: self.seed,
            ..ProfileConfig::default()
        }
    }
}

/// A resolved network and, for file networks, where it came from.
pub struct ResolvedNetwork {
    pub network: Network,
    pub path: Option<PathBuf>,
}

/// Looks up a bundled name, else loads a document relative to `base`.
pub fn resolve_network(name: &str, base: &Path) -> Result<ResolvedNetwork> {
    if let Some(network) = bundled::network(name) {
        return Ok(ResolvedNetwork { network, path: None });
    }
    let path = base.join(name);
    if !path.exists() {
        return Err(Error::Config(format!(
            "data.network: '{name}' is neither a bundled network ({}) nor an existing file",
            bundled::NAMES.join(", ")
        )));
    }
    let doc = FopDocument::load(&path)?;
    Ok(ResolvedNetwork {
        network: doc.network,
        path: Some(path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3

[data]
case = "pooling"
network = "haverly1"
n_train = 20
n_test = 5
sigma = 0.05

[run]
iterations = 40
weights = "inverse-noise"
workers = 2

[profile]
parameters = [2]
at_iterations = [20, 40]
"#;

    #[test]
    fn parse_render_parse_is_identity() {
        let a = Experiment::parse(SAMPLE).unwrap();
        let b = Experiment::parse(&a.render().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.run.refit_every, 1);
        assert_eq!(a.run.weights, WeightChoice::Named(NamedWeights::InverseNoise));
    }

    #[test]
    fn explicit_weights_round_trip() {
        let text = SAMPLE.replace("weights = \"inverse-noise\"", "weights = { diagonal = [1.0, 2.0] }");
        let a = Experiment::parse(&text).unwrap();
        assert_eq!(a.run.weights, WeightChoice::Explicit(Weights::Diagonal(vec![1.0, 2.0])));
        assert_eq!(Experiment::parse(&a.render().unwrap()).unwrap(), a);
    }

    #[test]
    fn errors_name_the_key() {
        let err = Experiment::parse(&SAMPLE.replace("sigma = 0.05", "sigma = -0.1")).unwrap_err();
        assert!(err.to_string().contains("data.sigma"), "{err}");
        let err = Experiment::parse(&SAMPLE.replace("iterations = 40", "iterations = 0")).unwrap_err();
        assert!(err.to_string().contains("run.iterations"), "{err}");
        assert!(Experiment::parse(&SAMPLE.replace("seed = 3", "sed = 3")).is_err());
    }

    #[test]
    fn inverse_noise_needs_sigma() {
        let w = WeightChoice::Named(NamedWeights::InverseNoise);
        assert_eq!(w.resolve(Some(0.1)).unwrap(), Weights::Scaled(1.0 / (0.1f64 * 0.1)));
        assert!(w.resolve(Some(0.0)).is_err());
        assert!(w.resolve(None).is_err());
    }
}
