//! The Bayesian-optimization loop: initial design, then repeated GP fit,
//! LCB minimization and loss evaluation.
//!
//! Progress goes to a tab-separated trace with one row per evaluation
//! (`iter`, θ components, `loss`, `best`), written and flushed as soon as
//! each loss is known. Wall times go to a sidecar with the same row order
//! (`iter`, `bo_time_s`, `fop_time_s`) so the trace itself is reproducible
//! byte for byte. A run can resume from a truncated trace.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::acquisition::{minimize_acquisition, AcquisitionConfig};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};
use crate::gp::{fit_with, EvaluationDataset, FitOptions, GpModel, KernelConfig};
use crate::loss::{LossEvaluator, LossValue};
use crate::rng::{derive_seed, tag, Halton};

/// Two points closer than this in max-norm count as the same query.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Something BO can minimize.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Result<LossValue>;
}

impl Objective for LossEvaluator {
    fn dim(&self) -> usize {
        self.problem().param_dim()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<LossValue> {
        LossEvaluator::evaluate(self, theta)
    }
}

/// Wraps a plain function as an [`Objective`] with zero forward-solve time.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> Result<LossValue> {
        Ok(LossValue {
            value: (self.f)(theta),
            infeasible: 0,
            fop_time: Duration::ZERO,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub domain: ParameterDomain,
    /// Iterations after the initial design.
    pub iterations: usize,
    /// Initial design size; `max(5, 2d+1)` when absent.
    pub n0: Option<usize>,
    /// β is used; the seed is replaced per iteration.
    pub acquisition: AcquisitionConfig,
    pub fit: FitOptions,
    pub seed: u64,
    /// Refit hyperparameters every this many iterations.
    pub refit_every: usize,
    /// Stop early once the best loss is at or below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
}

impl BoConfig {
    pub fn new(domain: ParameterDomain, iterations: usize, seed: u64) -> Self {
        Self {
            domain,
            iterations,
            n0: None,
            acquisition: AcquisitionConfig::default(),
            fit: FitOptions::default(),
            seed,
            refit_every: 1,
            stop_below: None,
        }
    }

    pub fn design_size(&self) -> usize {
        self.n0.unwrap_or((2 * self.domain.dim() + 1).max(5))
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.acquisition.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.design_size() < 2 {
            return Err(Error::Config("initial design needs at least 2 points".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be at least 1".into()));
        }
        Ok(())
    }

    /// First iteration of the refit block containing `t`.
    fn fit_iteration(&self, t: usize) -> usize {
        1 + (t - 1) / self.refit_every * self.refit_every
    }
}

/// `n0` points of a seeded Halton sequence mapped into the domain.
pub fn initial_design(domain: &ParameterDomain, n0: usize, seed: u64) -> Vec<Vec<f64>> {
    let halton = Halton::new(domain.dim(), derive_seed(seed, tag::DESIGN, 0));
    (0..n0).map(|i| domain.from_unit_cube(&halton.point(i))).collect()
}

/// One evaluation. Design points have `iter == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub loss: f64,
    pub best: f64,
    pub bo_time: Duration,
    pub fop_time: Duration,
}

#[derive(Debug, Clone)]
pub struct BoResult {
    pub incumbent: Vec<f64>,
    pub incumbent_loss: f64,
    pub trace: Vec<TraceRow>,
    /// Refit on every evaluation.
    pub model: GpModel,
}

impl BoResult {
    pub fn total_bo_time(&self) -> Duration {
        self.trace.iter().map(|r| r.bo_time).sum()
    }

    pub fn total_fop_time(&self) -> Duration {
        self.trace.iter().map(|r| r.fop_time).sum()
    }
}

/// Where the trace and its timing sidecar live.
#[derive(Debug, Clone)]
pub struct TraceFiles {
    pub trace: PathBuf,
    pub timing: PathBuf,
}

impl TraceFiles {
    /// `trace.tsv` and `timing.tsv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trace: dir.join("trace.tsv"),
            timing: dir.join("timing.tsv"),
        }
    }
}

fn fmt_row(row: &TraceRow) -> String {
    let mut s = row.iter.to_string();
    for v in &row.theta {
        s.push('\t');
        s.push_str(&v.to_string());
    }
    s.push_str(&format!("\t{}\t{}\n", row.loss, row.best));
    s
}

fn trace_header(d: usize) -> String {
    let mut s = "iter".to_string();
    for k in 1..=d {
        s.push_str(&format!("\ttheta{k}"));
    }
    s.push_str("\tloss\tbest\n");
    s
}

const TIMING_HEADER: &str = "iter\tbo_time_s\tfop_time_s\n";

/// Complete lines of `text`; a trailing partial line is dropped.
fn complete_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
    if lines.last().is_some_and(|l| !l.ends_with('\n')) {
        lines.pop();
    }
    lines.into_iter().map(|l| l.trim_end_matches(['\n', '\r'])).collect()
}

/// Reads a trace file. A partial last line (from an interrupted write) is
/// ignored; timing fields are zero.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text).map_err(|m| Error::format(path.display(), m))
}

fn parse_trace(text: &str) -> std::result::Result<Vec<TraceRow>, String> {
    let lines = complete_lines(text);
    let Some(header) = lines.first() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[0] != "iter" || cols[cols.len() - 2..] != ["loss", "best"] {
        return Err("trace header must be 'iter, theta…, loss, best'".into());
    }
    let d = cols.len() - 3;
    let mut rows = Vec::new();
    for (n, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != d + 3 {
            return Err(format!("trace line {} has {} fields, expected {}", n + 2, f.len(), d + 3));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("trace line {}: '{s}' is not a number", n + 2));
        rows.push(TraceRow {
            iter: f[0].parse().map_err(|_| format!("trace line {}: bad iteration '{}'", n + 2, f[0]))?,
            theta: f[1..=d].iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?,
            loss: num(f[d + 1])?,
            best: num(f[d + 2])?,
            bo_time: Duration::ZERO,
            fop_time: Duration::ZERO,
        });
    }
    Ok(rows)
}

fn parse_timing(text: &str) -> Vec<(Duration, Duration)> {
    complete_lines(text)
        .iter()
        .skip(1)
        .map_while(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let secs = |s: &str| s.parse::<f64>().ok().filter(|v| *v >= 0.0).map(Duration::from_secs_f64);
            Some((secs(f.get(1)?)?, secs(f.get(2)?)?))
        })
        .collect()
}

struct Sink {
    trace: BufWriter<File>,
    timing: BufWriter<File>,
    paths: TraceFiles,
}

impl Sink {
    /// Creates fresh files, or rewrites them to the given prefix on resume.
    fn open(paths: &TraceFiles, d: usize, prefix: &[TraceRow]) -> Result<Self> {
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(p)
                .map(BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        let mut sink = Self {
            trace: open(&paths.trace)?,
            timing: open(&paths.timing)?,
            paths: paths.clone(),
        };
        sink.write(trace_header(d).as_bytes(), TIMING_HEADER.as_bytes())?;
        for row in prefix {
            sink.push(row)?;
        }
        Ok(sink)
    }

    fn write(&mut self, trace: &[u8], timing: &[u8]) -> Result<()> {
        let t = &self.paths.trace;
        self.trace.write_all(trace).and_then(|_| self.trace.flush()).map_err(|e| Error::io(t, e))?;
        let s = &self.paths.timing;
        self.timing.write_all(timing).and_then(|_| self.timing.flush()).map_err(|e| Error::io(s, e))
    }

    fn push(&mut self, row: &TraceRow) -> Result<()> {
        let timing = format!("{}\t{}\t{}\n", row.iter, row.bo_time.as_secs_f64(), row.fop_time.as_secs_f64());
        self.write(fmt_row(row).as_bytes(), timing.as_bytes())
    }
}

/// The loop state: evaluations so far plus the cached kernel.
struct Runner<'a> {
    objective: &'a dyn Objective,
    cfg: &'a BoConfig,
    rows: Vec<TraceRow>,
    sink: Option<Sink>,
    kernel: Option<(usize, KernelConfig)>,
}

impl Runner<'_> {
    fn best(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.best)
    }

    fn record(&mut self, iter: usize, theta: Vec<f64>, value: LossValue, bo_time: Duration) -> Result<()> {
        if value.infeasible > 0 {
            log::warn!(
                "iteration {iter}: {} forward problem(s) had no solution; penalty applied",
                value.infeasible
            );
        }
        let row = TraceRow {
            iter,
            theta,
            loss: value.value,
            best: self.best().min(value.value),
            bo_time,
            fop_time: value.fop_time,
        };
        if let Some(sink) = &mut self.sink {
            sink.push(&row)?;
        }
        self.rows.push(row);
        Ok(())
    }

    fn dataset(&self, n: usize) -> Result<EvaluationDataset> {
        let rows = &self.rows[..n];
        EvaluationDataset::new(rows.iter().map(|r| r.theta.clone()).collect(), rows.iter().map(|r| r.loss).collect())
    }

    /// Surrogate for iteration `t`: hyperparameters from the start of its
    /// refit block, conditioned on every evaluation so far.
    fn model(&mut self, t: usize) -> Result<GpModel> {
        let n0 = self.cfg.design_size();
        let ft = self.cfg.fit_iteration(t);
        let kernel = match &self.kernel {
            Some((at, k)) if *at == ft => k.clone(),
            _ => {
                let data = self.dataset(n0 + ft - 1)?;
                let seed = derive_seed(self.cfg.seed, tag::FIT, ft as u64);
                let k = fit_with(data, &self.cfg.domain, seed, &self.cfg.fit)?.kernel().clone();
                self.kernel = Some((ft, k.clone()));
                k
            }
        };
        GpModel::condition(kernel, self.dataset(self.rows.len())?)
    }

    fn is_duplicate(&self, x: &[f64]) -> bool {
        self.rows
            .iter()
            .any(|r| r.theta.iter().zip(x).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
    }

    fn next_point(&mut self, t: usize) -> Result<Vec<f64>> {
        let model = self.model(t)?;
        let acq = AcquisitionConfig {
            seed: derive_seed(self.cfg.seed, tag::ACQUISITION, t as u64),
            ..self.cfg.acquisition.clone()
        };
        let out = minimize_acquisition(&model, &self.cfg.domain, &acq)?;
        if !self.is_duplicate(&out.point) {
            return Ok(out.point);
        }
        log::debug!("iteration {t}: acquisition returned an evaluated point; using next scatter candidate");
        Ok(out
            .ranked_scatter
            .into_iter()
            .map(|(x, _)| x)
            .find(|x| !self.is_duplicate(x))
            .unwrap_or(out.point))
    }
}

/// Runs the loop, optionally writing (and resuming from) trace files.
pub fn run(objective: &dyn Objective, cfg: &BoConfig, files: Option<&TraceFiles>, resume: bool) -> Result<BoResult> {
    cfg.validate()?;
    let d = cfg.domain.dim();
    check_dim(d, objective.dim())?;
    let n0 = cfg.design_size();
    let design = initial_design(&cfg.domain, n0, cfg.seed);

    let mut prefix = Vec::new();
    if let (Some(files), true) = (files, resume) {
        if files.trace.exists() {
            prefix = resumable_prefix(files, cfg, &design)?;
            log::info!("resuming after {} evaluations", prefix.len());
        }
    }
    let sink = files.map(|f| Sink::open(f, d, &prefix)).transpose()?;
    let mut runner = Runner {
        objective,
        cfg,
        rows: prefix,
        sink,
        kernel: None,
    };

    for theta in design.iter().skip(runner.rows.len()) {
        let value = runner.objective.evaluate(theta)?;
        runner.record(0, theta.clone(), value, Duration::ZERO)?;
    }
    let start = runner.rows.len() - n0 + 1;
    let mut last = start - 1;
    for t in start..=cfg.iterations {
        if cfg.stop_below.is_some_and(|s| runner.best() <= s) {
            break;
        }
        let clock = Instant::now();
        let theta = runner.next_point(t)?;
        let bo_time = clock.elapsed();
        let value = runner.objective.evaluate(&theta)?;
        log::debug!("iteration {t}: loss {}", value.value);
        runner.record(t, theta, value, bo_time)?;
        last = t;
    }

    let model = refit(&runner.rows, &cfg.domain, cfg.seed, last, &cfg.fit)?;
    let best = runner
        .rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r.clone())
        .expect("design is non-empty");
    Ok(BoResult {
        incumbent: best.theta,
        incumbent_loss: best.loss,
        trace: runner.rows,
        model,
    })
}

/// Surrogate fitted on `rows`, seeded as the final model of a run with
/// `iterations` iterations.
pub fn refit(rows: &[TraceRow], domain: &ParameterDomain, seed: u64, iterations: usize, opts: &FitOptions) -> Result<GpModel> {
    let data = EvaluationDataset::new(rows.iter().map(|r| r.theta.clone()).collect(), rows.iter().map(|r| r.loss).collect())?;
    fit_with(data, domain, derive_seed(seed, tag::FIT, iterations as u64 + 1), opts)
}

/// Rows of an existing trace that are consistent with this configuration,
/// with timings restored from the sidecar where available.
fn resumable_prefix(files: &TraceFiles, cfg: &BoConfig, design: &[Vec<f64>]) -> Result<Vec<TraceRow>> {
    let mut rows = read_trace(&files.trace)?;
    let d = cfg.domain.dim();
    let mismatch = |m: String| Error::Input(format!("cannot resume from {}: {m}", files.trace.display()));
    if let Some(r) = rows.first() {
        if r.theta.len() != d {
            return Err(mismatch(format!("trace has {} parameters, config has {d}", r.theta.len())));
        }
    }
    let n0 = design.len();
    let mut best = f64::INFINITY;
    for (i, r) in rows.iter().enumerate() {
        let iter = i.saturating_sub(n0 - 1);
        let expected = if i < n0 { 0 } else { iter };
        if r.iter != expected {
            return Err(mismatch(format!("row {} has iteration {}, expected {expected}", i + 1, r.iter)));
        }
        if i < n0 && r.theta != design[i] {
            return Err(mismatch("design points differ; was the seed or domain changed?".into()));
        }
        best = best.min(r.loss);
        if r.best != best {
            return Err(mismatch(format!("row {} has an inconsistent best-so-far", i + 1)));
        }
    }
    if rows.len() > n0 + cfg.iterations {
        return Err(mismatch(format!("trace has more than {} iterations", cfg.iterations)));
    }
    if let Ok(text) = std::fs::read_to_string(&files.timing) {
        for (r, (bo, fop)) in rows.iter_mut().zip(parse_timing(&text)) {
            r.bo_time = bo;
            r.fop_time = fop;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> FnObjective<impl Fn(&[f64]) -> f64 + Send + Sync> {
        FnObjective::new(1, |x: &[f64]| (x[0] - 0.3).powi(2))
    }

    fn cfg(iterations: usize, seed: u64) -> BoConfig {
        BoConfig::new(ParameterDomain::unit_box(1), iterations, seed)
    }

    #[test]
    fn design_is_feasible_distinct_and_seeded() {
        let dom = ParameterDomain::unit_box(1);
        let a = initial_design(&dom, 4, 1);
        assert_eq!(a.len(), 4);
        for i in 0..4 {
            assert!(dom.contains(&a[i]));
            for j in 0..i {
                assert_ne!(a[i], a[j]);
            }
        }
        assert_eq!(a, initial_design(&dom, 4, 1));
        assert_ne!(a, initial_design(&dom, 4, 2));
        let simplex = ParameterDomain::unit_simplex(3);
        assert!(initial_design(&simplex, 20, 3).iter().all(|p| p.iter().sum::<f64>() <= 1.0 + 1e-12));
    }

    #[test]
    fn finds_minimum_of_quadratic() {
        let r = run(&quadratic(), &cfg(30, 0), None, false).unwrap();
        // Dense-grid oracle.
        let grid_min = (0..=10_000).map(|i| i as f64 / 1e4).min_by(|a, b| (a - 0.3).abs().total_cmp(&(b - 0.3).abs())).unwrap();
        assert!((r.incumbent[0] - grid_min).abs() < 0.02, "{:?}", r.incumbent);
        assert_eq!(r.trace.len(), 5 + 30);
        assert!(r.trace.windows(2).all(|w| w[1].best <= w[0].best));
        let min = r.trace.iter().map(|t| t.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.incumbent_loss, min);
    }

    #[test]
    fn stops_once_below_target() {
        let mut c = cfg(50, 0);
        c.stop_below = Some(1e-3);
        let r = run(&quadratic(), &c, None, false).unwrap();
        assert!(r.trace.len() < 5 + 50);
        assert!(r.incumbent_loss <= 1e-3);
        let before_last = &r.trace[r.trace.len() - 2];
        assert!(before_last.best > 1e-3);
    }

    #[test]
    fn single_iteration_incumbent_is_best_evaluated() {
        let r = run(&quadratic(), &cfg(1, 4), None, false).unwrap();
        let best = r.trace.iter().min_by(|a, b| a.loss.total_cmp(&b.loss)).unwrap();
        assert_eq!(r.incumbent, best.theta);
    }

    #[test]
    fn trace_is_reproducible_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let files = TraceFiles::in_dir(dir.path());
        let mut c = cfg(12, 9);
        c.refit_every = 3;
        let full = run(&quadratic(), &c, Some(&files), false).unwrap();
        let text = std::fs::read_to_string(&files.trace).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        let files2 = TraceFiles::in_dir(dir2.path());
        run(&quadratic(), &c, Some(&files2), false).unwrap();
        assert_eq!(std::fs::read_to_string(&files2.trace).unwrap(), text);

        // Cut in the middle of a row, as an interrupted write would.
        let cut = text.match_indices('\n').nth(10).unwrap().0 + 4;
        std::fs::write(&files2.trace, &text[..cut]).unwrap();
        let resumed = run(&quadratic(), &c, Some(&files2), true).unwrap();
        assert_eq!(std::fs::read_to_string(&files2.trace).unwrap(), text);
        assert_eq!(resumed.incumbent, full.incumbent);
        assert_eq!(read_trace(&files2.trace).unwrap().len(), full.trace.len());
        let timing = std::fs::read_to_string(&files2.timing).unwrap();
        assert_eq!(timing.lines().count(), full.trace.len() + 1);
    }

    #[test]
    fn resume_rejects_other_seed() {
        let dir = tempfile::tempdir().unwrap();
        let files = TraceFiles::in_dir(dir.path());
        run(&quadratic(), &cfg(2, 1), Some(&files), false).unwrap();
        assert!(matches!(run(&quadratic(), &cfg(2, 2), Some(&files), true), Err(Error::Input(_))));
    }

    #[test]
    fn no_point_is_queried_twice() {
        // A flat objective makes the LCB flat, so the optimizer keeps
        // returning the same candidate.
        let flat = FnObjective::new(1, |_: &[f64]| 1.0);
        let r = run(&flat, &cfg(10, 2), None, false).unwrap();
        for i in 0..r.trace.len() {
            for j in 0..i {
                assert!((r.trace[i].theta[0] - r.trace[j].theta[0]).abs() > DUPLICATE_TOL);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg(0, 0);
        assert!(run(&quadratic(), &c, None, false).is_err());
        c.iterations = 3;
        c.n0 = Some(1);
        assert!(run(&quadratic(), &c, None, false).is_err());
        assert!(run(&FnObjective::new(2, |_: &[f64]| 0.0), &cfg(3, 0), None, false).is_err());
    }
}
