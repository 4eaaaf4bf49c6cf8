//! Plain-text network and instance documents.
//!
//! A document starts with the version line `bo4io-fop v1`, followed by TOML
//! with a `[network]` table tagged by `kind` (`fba`, `pooling`,
//! `genpooling`) and an optional `[instance]` table holding `theta` and the
//! named input vectors.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fba::{FbaProblem, MetabolicNetwork};
use super::genpooling::{GenPoolingNetwork, GenPoolingProblem, GridKind};
use super::pooling::{PoolingNetwork, PoolingOptions, PoolingProblem};
use super::{InstanceInput, SharedProblem};
use crate::error::{Error, Result};

pub const HEADER: &str = "bo4io-fop v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Network {
    Fba(MetabolicNetwork),
    Pooling(PoolingNetwork),
    Genpooling(GenPoolingNetwork),
}

impl Network {
    pub fn name(&self) -> &str {
        match self {
            Network::Fba(n) => &n.name,
            Network::Pooling(n) => &n.name,
            Network::Genpooling(n) => &n.0.name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Network::Fba(_) => "fba",
            Network::Pooling(_) => "pooling",
            Network::Genpooling(_) => "genpooling",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Network::Fba(n) => n.validate(),
            Network::Pooling(n) => n.validate(),
            Network::Genpooling(n) => n.validate(),
        }
    }

    /// Parameter dimension used when none is requested.
    pub fn default_dim(&self) -> usize {
        match self {
            Network::Fba(n) => n.objectives.len().saturating_sub(1).max(1),
            Network::Pooling(n) => n.products.len(),
            Network::Genpooling(n) => n.0.products.len(),
        }
    }

    /// Instance input with nominal values.
    pub fn nominal_input(&self) -> InstanceInput {
        match self {
            Network::Fba(n) => n.nominal_input(),
            Network::Pooling(n) => n.nominal_input(),
            Network::Genpooling(n) => n.nominal_input(),
        }
    }

    /// Builds the forward problem with `d` unknown parameters.
    pub fn build(&self, d: usize, options: &PoolingOptions) -> Result<SharedProblem> {
        Ok(match self {
            Network::Fba(n) => Arc::new(FbaProblem::new(n.clone(), d)?),
            Network::Pooling(n) => {
                fixed_dim(self, d)?;
                Arc::new(PoolingProblem::new(n.clone(), options.clone())?)
            }
            Network::Genpooling(n) => {
                fixed_dim(self, d)?;
                Arc::new(GenPoolingProblem::new(n.clone(), options.clone(), GridKind::default())?)
            }
        })
    }
}

fn fixed_dim(net: &Network, d: usize) -> Result<()> {
    if d != net.default_dim() {
        return Err(Error::Config(format!(
            "{} network '{}' has one unknown per product, so d must be {} (got {d})",
            net.kind(),
            net.name(),
            net.default_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Instance {
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub inputs: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FopDocument {
    pub network: Network,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<Instance>,
}

impl FopDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let body = strip_header(text, HEADER, "network document")?;
        let doc: FopDocument = toml::from_str(body).map_err(|e| Error::format("network document", e))?;
        doc.network.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display(), message),
            other => other,
        })
    }

    pub fn render(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::format("network document", e))?;
        Ok(format!("{HEADER}\n{body}"))
    }
}

/// Returns the text after a required first line equal to `header`.
/// Blank lines and `#` comments before it are allowed.
pub(crate) fn strip_header<'a>(text: &'a str, header: &str, context: &str) -> Result<&'a str> {
    let mut rest = text;
    loop {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            if tail.is_empty() {
                break;
            }
            rest = tail;
            continue;
        }
        if trimmed == header {
            return Ok(tail);
        }
        return Err(Error::format(context, format!("expected header line '{header}', found '{trimmed}'")));
    }
    Err(Error::format(context, format!("missing header line '{header}'")))
}

/// Networks shipped with the library.
pub mod bundled {
    use super::*;

    pub const NAMES: [&str; 4] = ["toy-fba", "haverly1", "two-pool", "tiny-genpool"];

    const TOY_FBA: &str = include_str!("../../networks/toy_fba.toml");
    const HAVERLY1: &str = include_str!("../../networks/haverly1.toml");
    const TWO_POOL: &str = include_str!("../../networks/two_pool.toml");
    const TINY_GENPOOL: &str = include_str!("../../networks/tiny_genpool.toml");

    pub fn source(name: &str) -> Option<&'static str> {
        Some(match name {
            "toy-fba" => TOY_FBA,
            "haverly1" => HAVERLY1,
            "two-pool" => TWO_POOL,
            "tiny-genpool" => TINY_GENPOOL,
            _ => return None,
        })
    }

    pub fn network(name: &str) -> Option<Network> {
        source(name).map(|s| FopDocument::parse(s).expect("bundled network parses").network)
    }

    pub fn toy_fba() -> MetabolicNetwork {
        match network("toy-fba") {
            Some(Network::Fba(n)) => n,
            _ => unreachable!(),
        }
    }

    pub fn haverly1() -> PoolingNetwork {
        match network("haverly1") {
            Some(Network::Pooling(n)) => n,
            _ => unreachable!(),
        }
    }

    pub fn two_pool() -> PoolingNetwork {
        match network("two-pool") {
            Some(Network::Pooling(n)) => n,
            _ => unreachable!(),
        }
    }

    pub fn tiny_genpool() -> GenPoolingNetwork {
        match network("tiny-genpool") {
            Some(Network::Genpooling(n)) => n,
            _ => unreachable!(),
        }
    }
}
