//! Confidence intervals and identifiability from a fitted loss surrogate.
//!
//! For a parameter `k` the profile `PL(θ_k) = min_{θ_{-k}} l(θ)` is bracketed
//! by minimizing the GP's lower and upper confidence bounds over the slice
//! with `θ_k` fixed. The outer approximation keeps every `θ_k` whose lower
//! profile is within `Δ` of the best observed loss; the inner approximation
//! keeps those whose upper profile is within `Δ` of the optimistic minimum.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::gamma_lr;

use crate::acquisition::{minimize_acquisition, AcquisitionConfig};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::optim::local_minimize;
use crate::rng::{derive_seed, tag, Halton};

/// Scatter candidates per free dimension for each slice search.
const SLICE_CANDIDATES_PER_DIM: usize = 128;
/// A profile whose spread is below this fraction of `Δ` counts as flat.
pub const FLAT_FRACTION: f64 = 1e-3;

/// `(1−alpha)`-quantile of the χ² distribution with `df` degrees of freedom.
pub fn chi2_quantile(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1] (got {alpha})")));
    }
    if df == 0 {
        return Err(Error::Config("degrees of freedom must be at least 1".into()));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    if df == 1 {
        // z = Φ⁻¹(1 − α/2) = √2·erfc⁻¹(α).
        let z = std::f64::consts::SQRT_2 * erfc_inv(alpha);
        return Ok(z * z);
    }
    let a = df as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(a, x / 2.0);
    let target = 1.0 - alpha;
    let mut hi = df as f64;
    while cdf(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    /// Parameter of interest (0-based).
    pub k: usize,
    /// Sampled range; the domain's bounds on `θ_k` when absent.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub step: f64,
    pub rho: f64,
    pub alpha: f64,
    pub df: usize,
    pub restarts: usize,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            k: 0,
            lower: None,
            upper: None,
            step: 0.01,
            rho: 3.84,
            alpha: 0.05,
            df: 1,
            restarts: 8,
            local_steps: 60,
            seed: 0,
        }
    }
}

impl ProfileConfig {
    pub fn for_parameter(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    /// The sampled range, resolved against the domain.
    pub fn range(&self, domain: &ParameterDomain) -> Result<(f64, f64)> {
        if self.k >= domain.dim() {
            return Err(Error::Config(format!(
                "profile parameter {} out of range for dimension {}",
                self.k + 1,
                domain.dim()
            )));
        }
        let (lo, hi) = domain.effective_bounds();
        let l = self.lower.unwrap_or(lo[self.k]);
        let u = self.upper.unwrap_or(hi[self.k]);
        if !(l < u) {
            return Err(Error::Config(format!("profile range needs lower < upper (got [{l}, {u}])")));
        }
        Ok((l, u))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config(format!("profile step must be positive (got {})", self.step)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive (got {})", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1) (got {})", self.alpha)));
        }
        if self.df == 0 || self.restarts == 0 {
            return Err(Error::Config("df and restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Minimizes `μ − √ρ·σ`.
    Lower,
    /// Minimizes `μ + √ρ·σ`.
    Upper,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// Searches over the slice `θ_k = value` of a domain.
struct Slice<'a> {
    model: &'a GpModel,
    domain: &'a ParameterDomain,
    cfg: &'a ProfileConfig,
    /// Shared scatter in the unit cube, so neighboring grid points see the
    /// same candidates.
    scatter: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl<'a> Slice<'a> {
    fn new(model: &'a GpModel, domain: &'a ParameterDomain, cfg: &'a ProfileConfig) -> Self {
        let d = domain.dim();
        let scatter = if d > 1 {
            let halton = Halton::new(d, derive_seed(cfg.seed, tag::PROFILE, cfg.k as u64));
            (0..SLICE_CANDIDATES_PER_DIM * (d - 1)).map(|i| halton.point(i)).collect()
        } else {
            Vec::new()
        };
        let mut scale = domain.widths();
        scale[cfg.k] = 0.0;
        Self {
            model,
            domain,
            cfg,
            scatter,
            scale,
        }
    }

    fn bound_at(&self, x: &[f64], side: Side) -> f64 {
        let (mu, var) = self.model.posterior_unchecked(x);
        mu + side.sign() * (self.cfg.rho * var).sqrt()
    }

    /// Minimum of the chosen bound over the slice and its minimizer.
    fn minimize(&self, value: f64, side: Side) -> (Vec<f64>, f64) {
        let k = self.cfg.k;
        let project = |x: &[f64]| {
            let mut p = x.to_vec();
            p[k] = value;
            self.domain.project_slice(&p, k).expect("validated domain")
        };
        if self.domain.dim() == 1 {
            let x = project(&[value]);
            let v = self.bound_at(&x, side);
            return (x, v);
        }
        let f = |x: &[f64]| self.bound_at(x, side);
        let candidates: Vec<Vec<f64>> = self.scatter.iter().map(|u| project(&self.domain.from_unit_cube(u))).collect();
        let values: Vec<f64> = candidates.iter().map(|x| f(x)).collect();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut best = (candidates[order[0]].clone(), values[order[0]]);
        for &i in order.iter().take(self.cfg.restarts) {
            let (x, v) = local_minimize(f, project, candidates[i].clone(), values[i], &self.scale, self.cfg.local_steps);
            if v < best.1 {
                best = (x, v);
            }
        }
        best
    }

    /// `(PL^LCB, PL^UCB)` at `value`, with the lower bound capped by the LCB
    /// at the upper bound's minimizer.
    fn bounds(&self, value: f64) -> (f64, f64) {
        let (_, lcb) = self.minimize(value, Side::Lower);
        let (xu, ucb) = self.minimize(value, Side::Upper);
        (lcb.min(self.bound_at(&xu, Side::Lower)), ucb)
    }
}

/// Minimum of `μ ∓ √ρ·σ` over the slice `θ_k = theta_k`; for `d = 1` the
/// bound at the point itself.
pub fn pl_bound(model: &GpModel, domain: &ParameterDomain, cfg: &ProfileConfig, theta_k: f64, side: Side) -> Result<f64> {
    cfg.validate()?;
    domain.validate()?;
    check_dim(domain.dim(), model.dim())?;
    let (l, u) = cfg.range(domain)?;
    if !(theta_k >= l && theta_k <= u) {
        return Err(Error::Input(format!("θ_k = {theta_k} outside the profile range [{l}, {u}]")));
    }
    Ok(Slice::new(model, domain, cfg).minimize(theta_k, side).1)
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn within(&self, other: &Interval) -> bool {
        self.lo >= other.lo && self.hi <= other.hi
    }
}

/// Total length of a set of disjoint intervals.
pub fn total_width(set: &[Interval]) -> f64 {
    set.iter().map(Interval::width).sum()
}

/// Whether every interval of `inner` lies inside some interval of `outer`.
pub fn nested(inner: &[Interval], outer: &[Interval]) -> bool {
    inner.iter().all(|i| outer.iter().any(|o| i.within(o)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Identifiability {
    StructurallyIdentifiable,
    PracticallyNonIdentifiable,
    NonIdentifiableWithinRange,
}

impl Identifiability {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StructurallyIdentifiable => "structurally-identifiable",
            Self::PracticallyNonIdentifiable => "practically-non-identifiable",
            Self::NonIdentifiableWithinRange => "non-identifiable-within-range",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::StructurallyIdentifiable,
            Self::PracticallyNonIdentifiable,
            Self::NonIdentifiableWithinRange,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileResult {
    pub k: usize,
    pub range: (f64, f64),
    pub grid: Vec<f64>,
    pub pl_lcb: Vec<f64>,
    pub pl_ucb: Vec<f64>,
    pub oa_ci: Vec<Interval>,
    pub ia_ci: Vec<Interval>,
    pub classification: Identifiability,
    /// Best observed loss.
    pub l_star: f64,
    /// Minimum of the LCB (with `ρ`) over the whole domain.
    pub l_lcb_star: f64,
    pub delta: f64,
    pub rho: f64,
    /// BO iteration whose evaluations the model was fitted on, if known.
    pub iteration: Option<usize>,
}

impl ProfileResult {
    pub fn oa_threshold(&self) -> f64 {
        self.l_star + self.delta
    }

    /// The inner threshold uses the smaller of the optimistic minimum and the
    /// best observed loss, which keeps it below the outer threshold.
    pub fn ia_threshold(&self) -> f64 {
        self.l_lcb_star.min(self.l_star) + self.delta
    }

    /// Tab-separated rows followed by `#` summary lines.
    pub fn render(&self) -> String {
        let mut s = String::from("theta_k\tpl_lcb\tpl_ucb\tin_oa\tin_ia\n");
        let (oa, ia) = (self.oa_threshold(), self.ia_threshold());
        for ((g, l), u) in self.grid.iter().zip(&self.pl_lcb).zip(&self.pl_ucb) {
            let _ = writeln!(s, "{g}\t{l}\t{u}\t{}\t{}", (*l <= oa) as u8, (*u <= ia) as u8);
        }
        let set = |v: &[Interval]| v.iter().map(|i| format!("{} {}", i.lo, i.hi)).collect::<Vec<_>>().join("; ");
        let _ = writeln!(s, "# parameter\t{}", self.k + 1);
        let _ = writeln!(s, "# range\t{} {}", self.range.0, self.range.1);
        let _ = writeln!(s, "# l_star\t{}", self.l_star);
        let _ = writeln!(s, "# l_lcb_star\t{}", self.l_lcb_star);
        let _ = writeln!(s, "# delta\t{}", self.delta);
        let _ = writeln!(s, "# rho\t{}", self.rho);
        if let Some(t) = self.iteration {
            let _ = writeln!(s, "# iteration\t{t}");
        }
        let _ = writeln!(s, "# oa_ci\t{}", set(&self.oa_ci));
        let _ = writeln!(s, "# ia_ci\t{}", set(&self.ia_ci));
        let _ = writeln!(s, "# classification\t{}", self.classification.as_str());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("profile", m);
        let mut r = ProfileResult {
            k: 0,
            range: (0.0, 0.0),
            grid: Vec::new(),
            pl_lcb: Vec::new(),
            pl_ucb: Vec::new(),
            oa_ci: Vec::new(),
            ia_ci: Vec::new(),
            classification: Identifiability::NonIdentifiableWithinRange,
            l_star: f64::NAN,
            l_lcb_star: f64::NAN,
            delta: f64::NAN,
            rho: f64::NAN,
            iteration: None,
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("'{s}' is not a number")));
        let intervals = |s: &str| -> Result<Vec<Interval>> {
            s.split(';')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let v: Vec<&str> = p.split_whitespace().collect();
                    match v[..] {
                        [a, b] => Ok(Interval { lo: num(a)?, hi: num(b)? }),
                        _ => Err(bad(format!("bad interval '{p}'"))),
                    }
                })
                .collect()
        };
        for line in text.lines().skip(1) {
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, val) = rest.split_once('\t').unwrap_or((rest, ""));
                match key {
                    "parameter" => r.k = val.trim().parse::<usize>().map_err(|_| bad(format!("bad parameter '{val}'")))?.saturating_sub(1),
                    "range" => {
                        let v: Vec<&str> = val.split_whitespace().collect();
                        if v.len() != 2 {
                            return Err(bad(format!("bad range '{val}'")));
                        }
                        r.range = (num(v[0])?, num(v[1])?);
                    }
                    "l_star" => r.l_star = num(val)?,
                    "l_lcb_star" => r.l_lcb_star = num(val)?,
                    "delta" => r.delta = num(val)?,
                    "rho" => r.rho = num(val)?,
                    "iteration" => {
                        r.iteration = Some(val.trim().parse().map_err(|_| bad(format!("bad iteration '{val}'")))?)
                    }
                    "oa_ci" => r.oa_ci = intervals(val)?,
                    "ia_ci" => r.ia_ci = intervals(val)?,
                    "classification" => {
                        r.classification =
                            Identifiability::parse(val.trim()).ok_or_else(|| bad(format!("unknown classification '{val}'")))?
                    }
                    _ => return Err(bad(format!("unknown summary key '{key}'"))),
                }
            } else if !line.trim().is_empty() {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 5 {
                    return Err(bad(format!("profile row has {} fields, expected 5", f.len())));
                }
                r.grid.push(num(f[0])?);
                r.pl_lcb.push(num(f[1])?);
                r.pl_ucb.push(num(f[2])?);
            }
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Grid `L, L+δ, …` ending exactly at `U`, plus any extra points.
fn build_grid(l: f64, u: f64, step: f64, extra: &[f64]) -> Vec<f64> {
    let n = ((u - l) / step - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..n).map(|i| l + i as f64 * step).collect();
    grid.push(u);
    for &x in extra {
        if x > l && x < u && !grid.iter().any(|g| (g - x).abs() <= 1e-12 * step.max(1.0)) {
            grid.push(x);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid
}

/// Maximal runs of accepted grid points, with each boundary refined by
/// bisection between the accepted point and its rejected neighbor. `outer`
/// picks the conservative end of the final bracket.
fn intervals<F: Fn(f64) -> bool>(grid: &[f64], inside: &[bool], accept: F, tol: f64, outer: bool) -> Vec<Interval> {
    let refine = |yes: f64, no: f64| {
        let (mut a, mut b) = (yes, no);
        while (b - a).abs() > tol {
            let m = 0.5 * (a + b);
            if accept(m) {
                a = m;
            } else {
                b = m;
            }
        }
        if outer {
            b
        } else {
            a
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if !inside[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < grid.len() && inside[i + 1] {
            i += 1;
        }
        let lo = if start > 0 { refine(grid[start], grid[start - 1]) } else { grid[start] };
        let hi = if i + 1 < grid.len() { refine(grid[i], grid[i + 1]) } else { grid[i] };
        out.push(Interval { lo, hi });
        i += 1;
    }
    // Refinement can make neighbors touch.
    let mut merged: Vec<Interval> = Vec::new();
    for iv in out {
        match merged.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Clips each inner interval to the outer set.
fn clip_to(inner: Vec<Interval>, outer: &[Interval]) -> Vec<Interval> {
    inner
        .into_iter()
        .flat_map(|i| {
            outer.iter().filter_map(move |o| {
                let lo = i.lo.max(o.lo);
                let hi = i.hi.min(o.hi);
                (lo <= hi).then_some(Interval { lo, hi })
            })
        })
        .collect()
}

/// Classifies from the outer interval set and the lower profile.
pub fn classify(range: (f64, f64), oa_ci: &[Interval], pl_lcb: &[f64], delta: f64) -> Identifiability {
    let (min, max) = pl_lcb
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if pl_lcb.is_empty() || max - min <= FLAT_FRACTION * delta {
        return Identifiability::NonIdentifiableWithinRange;
    }
    let (l, u) = range;
    if let [only] = oa_ci {
        if only.lo > l && only.hi < u {
            return Identifiability::StructurallyIdentifiable;
        }
    }
    let touches = oa_ci.iter().any(|i| i.lo <= l || i.hi >= u);
    let argmin = pl_lcb
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let n = pl_lcb.len();
    let interior_min = argmin > 0 && argmin + 1 < n && pl_lcb[argmin] < pl_lcb[0] && pl_lcb[argmin] < pl_lcb[n - 1];
    if touches && interior_min {
        Identifiability::PracticallyNonIdentifiable
    } else {
        Identifiability::NonIdentifiableWithinRange
    }
}

/// Sweeps the profile of parameter `cfg.k` and builds both interval sets.
///
/// `l_star` is the best observed loss. When the incumbent is given, its
/// coordinate joins the grid and the lower profile there is capped by
/// `l_star`, since the profile at that coordinate cannot exceed the loss
/// already observed on its slice.
pub fn profile(
    model: &GpModel,
    domain: &ParameterDomain,
    cfg: &ProfileConfig,
    l_star: f64,
    incumbent: Option<&[f64]>,
) -> Result<ProfileResult> {
    cfg.validate()?;
    domain.validate()?;
    check_dim(domain.dim(), model.dim())?;
    if let Some(inc) = incumbent {
        check_dim(domain.dim(), inc.len())?;
    }
    let (l, u) = cfg.range(domain)?;
    let delta = chi2_quantile(cfg.alpha, cfg.df)?;
    let inc_k = incumbent.map(|x| x[cfg.k]).filter(|x| *x >= l && *x <= u);
    let grid = build_grid(l, u, cfg.step, inc_k.as_slice());

    let slice = Slice::new(model, domain, cfg);
    let lower_at = |x: f64, lcb: f64| if inc_k == Some(x) { lcb.min(l_star) } else { lcb };
    let (pl_lcb, pl_ucb): (Vec<f64>, Vec<f64>) = grid
        .par_iter()
        .map(|&x| {
            let (lcb, ucb) = slice.bounds(x);
            (lower_at(x, lcb), ucb)
        })
        .unzip();

    let acq = AcquisitionConfig {
        beta: cfg.rho,
        seed: derive_seed(cfg.seed, tag::PROFILE, u64::MAX),
        ..AcquisitionConfig::default()
    };
    let l_lcb_star = minimize_acquisition(model, domain, &acq)?.value;

    let oa_thr = l_star + delta;
    let ia_thr = l_lcb_star.min(l_star) + delta;
    let tol = cfg.step / 100.0;
    let in_oa: Vec<bool> = pl_lcb.iter().map(|v| *v <= oa_thr).collect();
    let in_ia: Vec<bool> = pl_ucb.iter().map(|v| *v <= ia_thr).collect();
    let oa_ci = intervals(&grid, &in_oa, |x| lower_at(x, slice.bounds(x).0) <= oa_thr, tol, true);
    let ia_ci = intervals(&grid, &in_ia, |x| slice.minimize(x, Side::Upper).1 <= ia_thr, tol, false);
    let ia_ci = clip_to(ia_ci, &oa_ci);
    let classification = classify((l, u), &oa_ci, &pl_lcb, delta);
    Ok(ProfileResult {
        k: cfg.k,
        range: (l, u),
        grid,
        pl_lcb,
        pl_ucb,
        oa_ci,
        ia_ci,
        classification,
        l_star,
        l_lcb_star,
        delta,
        rho: cfg.rho,
        iteration: None,
    })
}
