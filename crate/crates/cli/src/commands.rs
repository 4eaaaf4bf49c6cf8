//! Subcommand implementations. Each returns the files it wrote.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bo4io::bo::{self, BoConfig, TraceFiles};
use bo4io::dataset::ObservationSet;
use bo4io::datagen;
use bo4io::fop::document::{FopDocument, Network};
use bo4io::fop::oracle::{ExternalOracle, ExternalProblem};
use bo4io::fop::SharedProblem;
use bo4io::loss::{parameter_error, LossConfig, LossEvaluator};
use bo4io::profile::{profile, ProfileResult};
use bo4io::{Error, ParameterDomain, Result};
use serde::{Deserialize, Serialize};

use crate::config::{resolve_network, Experiment, ResolvedNetwork};
use crate::manifest::Manifest;

/// A loaded config plus where relative paths are resolved from.
pub struct Context {
    pub experiment: Experiment,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn load(config: &Path, out_dir: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<Self> {
        let mut experiment = Experiment::load(config)?;
        if let Some(s) = seed {
            experiment.seed = s;
        }
        if let Some(w) = workers {
            if w == 0 {
                return Err(Error::Config("--workers must be at least 1".into()));
            }
            experiment.run.workers = w;
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Self {
            experiment,
            config_path: config.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    fn base(&self) -> &Path {
        self.config_path.parent().unwrap_or(Path::new("."))
    }

    fn network(&self) -> Result<ResolvedNetwork> {
        resolve_network(&self.experiment.data.network, self.base())
    }

    fn manifest(&self, command: &str, net: &ResolvedNetwork) -> Result<Manifest> {
        let mut m = Manifest::new(command, &self.experiment);
        m.input(&self.config_path)?;
        if let Some(p) = &net.path {
            m.input(p)?;
        }
        Ok(m)
    }

    fn dim(&self, network: &Network) -> usize {
        self.experiment.data.d.unwrap_or_else(|| network.default_dim())
    }

    /// The forward problem, in process or through the external oracle.
    fn problem(&self, network: &Network) -> Result<SharedProblem> {
        let d = self.dim(network);
        let timeout = Duration::from_secs_f64(self.experiment.run.oracle_timeout_s);
        match ExternalOracle::from_env(timeout) {
            Some(oracle) => {
                log::info!("forward problems go to external command '{}'", oracle.command);
                Ok(Arc::new(ExternalProblem::new(network.clone(), d, oracle)?))
            }
            None => network.build(d, &self.experiment.pooling_options()),
        }
    }

    fn domain(&self, problem: &SharedProblem) -> Result<ParameterDomain> {
        let domain = self.experiment.run.domain.clone().unwrap_or_else(|| problem.default_domain());
        if domain.dim() != problem.param_dim() {
            return Err(Error::Config(format!(
                "run.domain has dimension {}, the problem has {}",
                domain.dim(),
                problem.param_dim()
            )));
        }
        Ok(domain)
    }
}

/// Ground truth written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta_true: Vec<f64>,
    pub theta_full: Vec<f64>,
}

pub fn datagen(ctx: &Context) -> Result<Vec<PathBuf>> {
    let net = ctx.network()?;
    let g = datagen::generate(&ctx.experiment.gen_spec(), &net.network, &ctx.experiment.pooling_options())?;
    let train = ctx.out_dir.join("train.obs");
    let test = ctx.out_dir.join("test.obs");
    let truth = ctx.out_dir.join("truth.toml");
    g.train.save(&train)?;
    g.test.save(&test)?;
    let t = Truth {
        theta_true: g.theta_true.clone(),
        theta_full: g.theta_full.clone(),
    };
    write_toml(&truth, &t)?;
    let mut m = ctx.manifest("datagen", &net)?;
    for p in [&train, &test, &truth] {
        m.output(p)?;
    }
    let manifest = m.write(&ctx.out_dir)?;
    println!("theta_true\t{}", join(&g.theta_true));
    println!("train\t{} observations", g.train.len());
    println!("test\t{} observations", g.test.len());
    Ok(vec![train, test, truth, manifest])
}

/// Summary of a BO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub incumbent: Vec<f64>,
    pub incumbent_full: Vec<f64>,
    pub incumbent_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub bo_time_s: f64,
    pub fop_time_s: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_decision_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_decision_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter_error: Option<f64>,
}

pub fn run(ctx: &Context, resume: bool) -> Result<Vec<PathBuf>> {
    let clock = Instant::now();
    let exp = &ctx.experiment;
    let net = ctx.network()?;
    let problem = ctx.problem(&net.network)?;
    let domain = ctx.domain(&problem)?;
    let train_path = match &exp.run.data {
        Some(p) => ctx.base().join(p),
        None => ctx.out_dir.join("train.obs"),
    };
    let train = Arc::new(load_dataset(&train_path, problem.param_dim())?);
    let loss = LossConfig {
        weights: exp.run.weights.resolve(train.sigma)?,
        penalty: exp.run.penalty,
        workers: exp.run.workers,
    };
    let evaluator = LossEvaluator::new(problem.clone(), train.clone(), loss.clone())?;

    let mut cfg = BoConfig::new(domain, exp.run.iterations, exp.seed);
    cfg.n0 = exp.run.n0;
    cfg.refit_every = exp.run.refit_every;
    cfg.acquisition.beta = exp.run.beta;
    let files = TraceFiles::in_dir(&ctx.out_dir);
    let result = bo::run(&evaluator, &cfg, Some(&files), resume)?;

    let train_err = evaluator.decision_error(&result.incumbent)?;
    let test_path = ctx.out_dir.join("test.obs");
    let test_err = if exp.run.data.is_none() && test_path.exists() {
        let test = load_dataset(&test_path, problem.param_dim())?;
        if test.is_empty() {
            None
        } else {
            LossEvaluator::new(problem.clone(), Arc::new(test), loss)?.decision_error(&result.incumbent)?
        }
    } else {
        None
    };
    let truth_path = ctx.out_dir.join("truth.toml");
    let incumbent_full = problem.full_parameters(&result.incumbent);
    let param_err = if truth_path.exists() {
        let truth: Truth = read_toml(&truth_path)?;
        Some(parameter_error(&truth.theta_full, &incumbent_full)?)
    } else {
        None
    };
    let summary = RunSummary {
        incumbent: result.incumbent.clone(),
        incumbent_full,
        incumbent_loss: result.incumbent_loss,
        iterations: exp.run.iterations,
        evaluations: result.trace.len(),
        bo_time_s: result.total_bo_time().as_secs_f64(),
        fop_time_s: result.total_fop_time().as_secs_f64(),
        wall_time_s: clock.elapsed().as_secs_f64(),
        train_decision_error: train_err,
        test_decision_error: test_err,
        parameter_error: param_err,
    };
    let result_path = ctx.out_dir.join("result.toml");
    write_toml(&result_path, &summary)?;

    let mut m = ctx.manifest("run", &net)?;
    m.input(&train_path)?;
    for p in [&files.trace, &files.timing, &result_path] {
        m.output(p)?;
    }
    let manifest = m.write(&ctx.out_dir)?;
    println!("incumbent\t{}", join(&summary.incumbent));
    println!("best_loss\t{}", summary.incumbent_loss);
    if let Some(e) = summary.train_decision_error {
        println!("train_decision_error\t{e}");
    }
    if let Some(e) = summary.test_decision_error {
        println!("test_decision_error\t{e}");
    }
    if let Some(e) = summary.parameter_error {
        println!("parameter_error\t{e}");
    }
    println!(
        "time_s\tbo {:.3}\tfop {:.3}\twall {:.3}",
        summary.bo_time_s, summary.fop_time_s, summary.wall_time_s
    );
    Ok(vec![files.trace, files.timing, result_path, manifest])
}

pub fn profile_cmd(ctx: &Context, trace: Option<&Path>) -> Result<Vec<PathBuf>> {
    let exp = &ctx.experiment;
    let net = ctx.network()?;
    // The profile only needs the layout and domain, never a forward solve.
    let problem = net.network.build(ctx.dim(&net.network), &exp.pooling_options())?;
    let domain = ctx.domain(&problem)?;
    let trace_path = trace.map_or_else(|| ctx.out_dir.join("trace.tsv"), Path::to_path_buf);
    let rows = bo::read_trace(&trace_path)?;
    let n0 = rows.iter().take_while(|r| r.iter == 0).count();
    if n0 < 2 {
        return Err(Error::Input(format!("{} has fewer than two evaluations", trace_path.display())));
    }
    let last = rows.len() - n0;
    let mut at: Vec<usize> = if exp.profile.at_iterations.is_empty() {
        vec![last]
    } else {
        exp.profile.at_iterations.clone()
    };
    at.sort_unstable();
    at.dedup();
    if let Some(t) = at.iter().find(|t| **t > last) {
        return Err(Error::Config(format!("profile.at_iterations: trace only reaches iteration {last}, not {t}")));
    }
    let params: Vec<usize> = match &exp.profile.parameters {
        Some(p) => p.iter().map(|k| k - 1).collect(),
        None => (0..domain.dim()).collect(),
    };
    if let Some(k) = params.iter().find(|k| **k >= domain.dim()) {
        return Err(Error::Config(format!("profile.parameters: {} exceeds d = {}", k + 1, domain.dim())));
    }

    let mut m = ctx.manifest("profile", &net)?;
    m.input(&trace_path)?;
    let mut written = Vec::new();
    for &t in &at {
        let prefix = &rows[..n0 + t];
        let model = bo::refit(prefix, &domain, exp.seed, t, &bo4io::gp::FitOptions::default())?;
        let (inc, l_star) = prefix
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .map(|r| (r.theta.clone(), r.loss))
            .expect("non-empty");
        for &k in &params {
            let mut r: ProfileResult = profile(&model, &domain, &exp.profile_config(k), l_star, Some(&inc))?;
            r.iteration = Some(t);
            let path = ctx.out_dir.join(format!("profile_p{}_t{t}.tsv", k + 1));
            r.save(&path)?;
            m.output(&path)?;
            println!(
                "parameter {}\titeration {t}\t{}\toa {}\tia {}",
                k + 1,
                r.classification.as_str(),
                intervals(&r.oa_ci),
                intervals(&r.ia_ci)
            );
            written.push(path);
        }
    }
    written.push(m.write(&ctx.out_dir)?);
    Ok(written)
}

/// Solves one network document with an `[instance]` table and prints the
/// reply in the external-oracle format.
pub fn solve(doc_path: &Path, grid_intervals: usize) -> Result<String> {
    let text = if doc_path == Path::new("-") {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut s).map_err(|e| Error::io("<stdin>", e))?;
        s
    } else {
        std::fs::read_to_string(doc_path).map_err(|e| Error::io(doc_path, e))?
    };
    let doc = FopDocument::parse(&text)?;
    let inst = doc
        .instance
        .ok_or_else(|| Error::Input("document has no [instance] table".into()))?;
    let theta = free_parameters(&doc.network, &inst.theta)?;
    let options = bo4io::fop::PoolingOptions {
        grid_intervals,
        ..Default::default()
    };
    let problem = doc.network.build(theta.len(), &options)?;
    let s = problem.solve(&inst.inputs, &theta)?;
    let mut out = format!("status {}\n", s.status.as_str());
    if s.status.has_point() {
        out.push_str(&format!("objective {}\nx {}\n", s.objective, s.x.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")));
        if let Some(g) = s.gap {
            out.push_str(&format!("gap {g}\n"));
        }
    }
    Ok(out)
}

/// Inverts the full-parameter map used in oracle documents.
fn free_parameters(network: &Network, full: &[f64]) -> Result<Vec<f64>> {
    match network {
        Network::Fba(_) if full.len() >= 2 => Ok(full[..full.len() - 1].to_vec()),
        Network::Pooling(n) if full.len() == n.products.len() => Ok(full.to_vec()),
        Network::Genpooling(n) if full.len() == 2 * n.0.products.len() => Ok(full.iter().step_by(2).copied().collect()),
        _ => Err(Error::Input(format!(
            "instance theta has {} entries, which does not fit {} network '{}'",
            full.len(),
            network.kind(),
            network.name()
        ))),
    }
}

fn load_dataset(path: &Path, d: usize) -> Result<ObservationSet> {
    let set = ObservationSet::load(path)?;
    if set.d != d {
        return Err(Error::Config(format!(
            "{} was generated with d = {}, but the config gives d = {d}",
            path.display(),
            set.d
        )));
    }
    Ok(set)
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path.display(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path.display(), e))
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn intervals(v: &[bo4io::profile::Interval]) -> String {
    if v.is_empty() {
        return "none".into();
    }
    v.iter().map(|i| format!("[{:.4}, {:.4}]", i.lo, i.hi)).collect::<Vec<_>>().join(" ")
}
