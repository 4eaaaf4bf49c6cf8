//! Forward problems solved by an external command.
//!
//! The command is run through `sh -c`. It receives a network document with an
//! `[instance]` table on standard input and must print labeled lines:
//!
//! ```text
//! status optimal
//! objective -400.0
//! x 0 100 100 ...
//! ```
//!
//! `status` is one of `optimal`, `grid-optimal`, `infeasible`, `unbounded`.
//! `x` is required for statuses that carry a point. An optional `gap` line
//! is passed through.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::document::{FopDocument, Instance, Network};
use super::fba::FbaProblem;
use super::genpooling::{GenPoolingProblem, GridKind};
use super::pooling::{PoolingOptions, PoolingProblem};
use super::{FopSolution, ForwardProblem, InstanceInput, SharedProblem, SolveStatus, VariableLayout};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};

/// Environment variable naming the external solver command.
pub const ORACLE_ENV: &str = "BO4IO_ORACLE_CMD";

#[derive(Debug, Clone)]
pub struct ExternalOracle {
    pub command: String,
    pub timeout: Duration,
}

impl ExternalOracle {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
        }
    }

    /// Reads the command from [`ORACLE_ENV`], if set and non-empty.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        std::env::var(ORACLE_ENV)
            .ok()
            .filter(|c| !c.trim().is_empty())
            .map(|c| Self::new(c, timeout))
    }

    /// Sends one instance and parses the reply.
    pub fn query(&self, network: &Network, input: &InstanceInput, theta: &[f64], n: usize) -> Result<FopSolution> {
        let doc = FopDocument {
            network: network.clone(),
            instance: Some(Instance {
                theta: theta.to_vec(),
                inputs: input.clone(),
            }),
        };
        let text = doc.render()?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot start '{}': {e}", self.command)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = match child
            .wait_timeout(self.timeout)
            .map_err(|e| Error::Oracle(format!("waiting for '{}': {e}", self.command)))?
        {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Oracle(format!(
                    "'{}' timed out after {:.1} s",
                    self.command,
                    self.timeout.as_secs_f64()
                )));
            }
        };
        // A solver may exit without reading its input; a broken pipe is fine then.
        let _ = writer.join();
        let out = reader
            .join()
            .expect("reader thread")
            .map_err(|e| Error::Oracle(format!("reading solver output: {e}")))?;
        let err = err_reader.join().expect("stderr thread");
        if !status.success() {
            return Err(Error::Oracle(format!(
                "'{}' exited with {status}: {}",
                self.command,
                err.trim()
            )));
        }
        parse_reply(&out, n)
    }
}

/// Parses the labeled reply of an external solver.
pub fn parse_reply(text: &str, n: usize) -> Result<FopSolution> {
    let bad = |m: String| Error::Oracle(format!("malformed solver reply: {m}"));
    let mut status = None;
    let mut objective = None;
    let mut gap = None;
    let mut x: Option<Vec<f64>> = None;
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("'{s}' is not a number")));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "status" => status = Some(SolveStatus::parse(rest).ok_or_else(|| bad(format!("unknown status '{rest}'")))?),
            "objective" => objective = Some(num(rest)?),
            "gap" => gap = Some(num(rest)?),
            "x" => x = Some(rest.split_whitespace().map(num).collect::<Result<_>>()?),
            _ => return Err(bad(format!("unknown label '{key}'"))),
        }
    }
    let status = status.ok_or_else(|| bad("missing status line".into()))?;
    if !status.has_point() {
        return Ok(FopSolution::without_point(status, n));
    }
    let x = x.ok_or_else(|| bad("missing x line".into()))?;
    if x.len() != n {
        return Err(bad(format!("x has {} entries, expected {n}", x.len())));
    }
    Ok(FopSolution {
        x,
        objective: objective.ok_or_else(|| bad("missing objective line".into()))?,
        status,
        gap,
    })
}

/// A network whose solves go to an external command. Layout, domain and
/// residual checks come from the in-process model.
#[derive(Debug, Clone)]
pub struct ExternalProblem {
    network: Network,
    model: SharedProblem,
    oracle: ExternalOracle,
}

impl ExternalProblem {
    pub fn new(network: Network, d: usize, oracle: ExternalOracle) -> Result<Self> {
        let options = PoolingOptions::default();
        let model: SharedProblem = match &network {
            Network::Fba(n) => Arc::new(FbaProblem::new(n.clone(), d)?),
            Network::Pooling(n) => Arc::new(PoolingProblem::new_unchecked(n.clone(), options)?),
            Network::Genpooling(n) => Arc::new(GenPoolingProblem::new_unchecked(n.clone(), options, GridKind::default())?),
        };
        if !matches!(network, Network::Fba(_)) && d != model.param_dim() {
            return Err(Error::Config(format!(
                "{} network '{}' needs d = {} (got {d})",
                network.kind(),
                network.name(),
                model.param_dim()
            )));
        }
        Ok(Self { network, model, oracle })
    }
}

impl ForwardProblem for ExternalProblem {
    fn layout(&self) -> &VariableLayout {
        self.model.layout()
    }

    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn default_domain(&self) -> ParameterDomain {
        self.model.default_domain()
    }

    fn full_parameters(&self, theta: &[f64]) -> Vec<f64> {
        self.model.full_parameters(theta)
    }

    fn solve(&self, input: &InstanceInput, theta: &[f64]) -> Result<FopSolution> {
        check_dim(self.param_dim(), theta.len())?;
        self.oracle
            .query(&self.network, input, &self.full_parameters(theta), self.layout().len())
    }

    fn residual(&self, input: &InstanceInput, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.model.residual(input, theta, x)
    }
}
