//! Standard pooling problem solved globally by discretizing pool qualities.
//!
//! Fixing the pool qualities `p_lk` turns the bilinear quality balances into
//! linear rows, so each grid point is an LP. The best grid point is refined
//! by golden-section search along each coordinate, and the largest objective
//! change between adjacent finite grid cells is reported as the grid gap.

use serde::{Deserialize, Serialize};

use super::lp::{LpBuilder, Sense};
use super::{input_or, FopSolution, ForwardProblem, InstanceInput, SolveStatus, VariableLayout};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};

/// Largest number of discretized pool qualities (|L|·|K|) handled in-process.
pub const MAX_GRID_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feed {
    pub name: String,
    pub cost: f64,
    pub availability: f64,
    pub quality: Vec<f64>,
    #[serde(default)]
    pub install_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub name: String,
    #[serde(default = "infinite")]
    pub capacity: f64,
    #[serde(default)]
    pub install_cost: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub name: String,
    /// Demand cap (standard pooling) or demand to be met (generalized).
    pub demand: f64,
    pub quality_limit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub from: String,
    pub to: String,
    /// Revenue per unit for streams into products.
    #[serde(default)]
    pub price: f64,
    /// Extra cost per unit for feed-to-pool streams.
    #[serde(default)]
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingNetwork {
    pub name: String,
    pub qualities: Vec<String>,
    pub feeds: Vec<Feed>,
    pub pools: Vec<Pool>,
    pub products: Vec<Product>,
    /// Feed → pool streams (`T_f`).
    pub feed_pool: Vec<Stream>,
    /// Pool → product streams (`T_y`).
    pub pool_product: Vec<Stream>,
    /// Feed → product bypass streams (`T_z`).
    #[serde(default)]
    pub feed_product: Vec<Stream>,
}

/// Index-based view of a network.
#[derive(Debug, Clone)]
pub(crate) struct Indexed {
    pub ns: usize,
    pub nl: usize,
    pub nj: usize,
    pub nk: usize,
    pub tf: Vec<(usize, usize)>,
    pub ty: Vec<(usize, usize)>,
    pub tz: Vec<(usize, usize)>,
    /// `C[s][k]`.
    pub c: Vec<Vec<f64>>,
}

impl PoolingNetwork {
    pub fn validate(&self) -> Result<()> {
        self.indexed().map(|_| ())
    }

    pub(crate) fn indexed(&self) -> Result<Indexed> {
        let bad = |msg: String| Error::Config(format!("pooling network '{}': {msg}", self.name));
        let nk = self.qualities.len();
        let find = |names: Vec<&str>, n: &str, what: &str| {
            names
                .iter()
                .position(|x| *x == n)
                .ok_or_else(|| bad(format!("stream references unknown {what} '{n}'")))
        };
        let feeds: Vec<&str> = self.feeds.iter().map(|f| f.name.as_str()).collect();
        let pools: Vec<&str> = self.pools.iter().map(|f| f.name.as_str()).collect();
        let prods: Vec<&str> = self.products.iter().map(|f| f.name.as_str()).collect();
        let mut tf = Vec::new();
        for s in &self.feed_pool {
            tf.push((find(feeds.clone(), &s.from, "feed")?, find(pools.clone(), &s.to, "pool")?));
        }
        let mut ty = Vec::new();
        for s in &self.pool_product {
            ty.push((find(pools.clone(), &s.from, "pool")?, find(prods.clone(), &s.to, "product")?));
        }
        let mut tz = Vec::new();
        for s in &self.feed_product {
            tz.push((find(feeds.clone(), &s.from, "feed")?, find(prods.clone(), &s.to, "product")?));
        }
        for f in &self.feeds {
            if f.quality.len() != nk {
                return Err(bad(format!("feed '{}' has {} qualities, expected {nk}", f.name, f.quality.len())));
            }
            if f.cost < 0.0 || f.availability < 0.0 || f.quality.iter().any(|q| *q < 0.0) || f.install_cost < 0.0 {
                return Err(bad(format!("feed '{}' has negative data", f.name)));
            }
        }
        for p in &self.products {
            if p.quality_limit.len() != nk {
                return Err(bad(format!("product '{}' has {} quality limits, expected {nk}", p.name, p.quality_limit.len())));
            }
            if p.demand < 0.0 || p.quality_limit.iter().any(|q| *q < 0.0) {
                return Err(bad(format!("product '{}' has negative data", p.name)));
            }
        }
        for (l, p) in self.pools.iter().enumerate() {
            if !tf.iter().any(|a| a.1 == l) || !ty.iter().any(|a| a.0 == l) {
                return Err(bad(format!("pool '{}' needs at least one inlet and one outlet", p.name)));
            }
            if p.capacity < 0.0 || p.install_cost < 0.0 {
                return Err(bad(format!("pool '{}' has negative data", p.name)));
            }
        }
        if self
            .feed_pool
            .iter()
            .chain(&self.pool_product)
            .chain(&self.feed_product)
            .any(|s| s.price < 0.0 || s.cost < 0.0)
        {
            return Err(bad("stream prices and costs must be non-negative".into()));
        }
        Ok(Indexed {
            ns: self.feeds.len(),
            nl: self.pools.len(),
            nj: self.products.len(),
            nk,
            tf,
            ty,
            tz,
            c: self.feeds.iter().map(|f| f.quality.clone()).collect(),
        })
    }

    pub fn nominal_input(&self) -> InstanceInput {
        InstanceInput::from([
            ("availability".to_string(), self.feeds.iter().map(|f| f.availability).collect()),
            ("cost".to_string(), self.feeds.iter().map(|f| f.cost).collect()),
            ("price_y".to_string(), self.pool_product.iter().map(|s| s.price).collect()),
            ("price_z".to_string(), self.feed_product.iter().map(|s| s.price).collect()),
        ])
    }

    pub fn nominal_demands(&self) -> Vec<f64> {
        self.products.iter().map(|p| p.demand).collect()
    }

    pub(crate) fn decision_layout(&self) -> VariableLayout {
        let mut layout = VariableLayout::new();
        layout.push("f", self.feed_pool.len());
        layout.push("y", self.pool_product.len());
        layout.push("z", self.feed_product.len());
        layout.push("p", self.pools.len() * self.qualities.len());
        layout
    }
}

/// Per-instance numbers entering the LP at fixed pool composition.
#[derive(Debug, Clone)]
pub(crate) struct LpData {
    /// Unit cost of each `T_f` stream (feed cost plus stream cost).
    pub cost_f: Vec<f64>,
    /// Unit cost of each `T_z` stream's feed.
    pub cost_z: Vec<f64>,
    pub price_y: Vec<f64>,
    pub price_z: Vec<f64>,
    pub availability: Vec<f64>,
    pub capacity: Vec<f64>,
    pub demand: Vec<f64>,
    pub demand_equality: bool,
    /// `P^U[j][k]`.
    pub quality_limit: Vec<Vec<f64>>,
}

/// How pool compositions are pinned for one LP.
#[derive(Debug, Clone)]
pub(crate) enum Composition {
    /// `p[l·K + k]`.
    Quality(Vec<f64>),
    /// Share of each `T_f` stream in its pool's inflow.
    Proportion(Vec<f64>),
}

impl Indexed {
    pub(crate) fn pool_qualities(&self, comp: &Composition) -> Vec<f64> {
        match comp {
            Composition::Quality(p) => p.clone(),
            Composition::Proportion(w) => {
                let mut p = vec![0.0; self.nl * self.nk];
                for (a, &(s, l)) in self.tf.iter().enumerate() {
                    for k in 0..self.nk {
                        p[l * self.nk + k] += w[a] * self.c[s][k];
                    }
                }
                p
            }
        }
    }

    /// LP at fixed pool composition. Returns the objective and `(f, y, z, p)`.
    pub(crate) fn solve_fixed(&self, data: &LpData, comp: &Composition) -> Result<Option<(f64, Vec<f64>)>> {
        let p = self.pool_qualities(comp);
        let mut b = LpBuilder::new();
        let f: Vec<usize> = (0..self.tf.len()).map(|a| b.add_var(data.cost_f[a], 0.0, f64::INFINITY)).collect();
        let y: Vec<usize> = (0..self.ty.len()).map(|a| b.add_var(-data.price_y[a], 0.0, f64::INFINITY)).collect();
        let z: Vec<usize> = (0..self.tz.len())
            .map(|a| b.add_var(data.cost_z[a] - data.price_z[a], 0.0, f64::INFINITY))
            .collect();
        for s in 0..self.ns {
            let row: Vec<(usize, f64)> = self
                .tf
                .iter()
                .enumerate()
                .filter(|(_, t)| t.0 == s)
                .map(|(a, _)| (f[a], 1.0))
                .chain(self.tz.iter().enumerate().filter(|(_, t)| t.0 == s).map(|(a, _)| (z[a], 1.0)))
                .collect();
            if !row.is_empty() {
                b.add_row(row, Sense::Le, data.availability[s]);
            }
        }
        let outflow = |l: usize, coef: f64| -> Vec<(usize, f64)> {
            self.ty
                .iter()
                .enumerate()
                .filter(|(_, t)| t.0 == l)
                .map(|(a, _)| (y[a], coef))
                .collect()
        };
        for l in 0..self.nl {
            match comp {
                Composition::Quality(_) => {
                    let mut mass: Vec<(usize, f64)> = self
                        .tf
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| t.1 == l)
                        .map(|(a, _)| (f[a], 1.0))
                        .collect();
                    mass.extend(outflow(l, -1.0));
                    b.add_row(mass, Sense::Eq, 0.0);
                    for k in 0..self.nk {
                        let mut row: Vec<(usize, f64)> = self
                            .tf
                            .iter()
                            .enumerate()
                            .filter(|(_, t)| t.1 == l)
                            .map(|(a, t)| (f[a], self.c[t.0][k]))
                            .collect();
                        row.extend(outflow(l, -p[l * self.nk + k]));
                        b.add_row(row, Sense::Eq, 0.0);
                    }
                }
                Composition::Proportion(w) => {
                    for (a, t) in self.tf.iter().enumerate().filter(|(_, t)| t.1 == l) {
                        let _ = t;
                        let mut row = vec![(f[a], 1.0)];
                        row.extend(outflow(l, -w[a]));
                        b.add_row(row, Sense::Eq, 0.0);
                    }
                }
            }
            if data.capacity[l].is_finite() {
                b.add_row(outflow(l, 1.0), Sense::Le, data.capacity[l]);
            }
        }
        for j in 0..self.nj {
            for k in 0..self.nk {
                let limit = data.quality_limit[j][k];
                let row: Vec<(usize, f64)> = self
                    .ty
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.1 == j)
                    .map(|(a, t)| (y[a], p[t.0 * self.nk + k] - limit))
                    .chain(
                        self.tz
                            .iter()
                            .enumerate()
                            .filter(|(_, t)| t.1 == j)
                            .map(|(a, t)| (z[a], self.c[t.0][k] - limit)),
                    )
                    .collect();
                if !row.is_empty() {
                    b.add_row(row, Sense::Le, 0.0);
                }
            }
            let total: Vec<(usize, f64)> = self
                .ty
                .iter()
                .enumerate()
                .filter(|(_, t)| t.1 == j)
                .map(|(a, _)| (y[a], 1.0))
                .chain(self.tz.iter().enumerate().filter(|(_, t)| t.1 == j).map(|(a, _)| (z[a], 1.0)))
                .collect();
            let sense = if data.demand_equality { Sense::Eq } else { Sense::Le };
            if total.is_empty() {
                if data.demand_equality && data.demand[j] > 0.0 {
                    return Ok(None);
                }
                continue;
            }
            b.add_row(total, sense, data.demand[j]);
        }
        let sol = b.solve()?;
        if !sol.status.has_point() {
            return Ok(None);
        }
        let mut x = sol.x;
        x.extend(p);
        Ok(Some((sol.objective, x)))
    }

    /// Largest scaled violation of the pooling constraints by `x = (f,y,z,p)`.
    pub(crate) fn residual(&self, data: &LpData, x: &[f64]) -> f64 {
        let (nf, ny, nz) = (self.tf.len(), self.ty.len(), self.tz.len());
        let f = &x[..nf];
        let y = &x[nf..nf + ny];
        let z = &x[nf + ny..nf + ny + nz];
        let p = &x[nf + ny + nz..];
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut worst = x[..nf + ny + nz].iter().fold(0.0f64, |m, v| m.max(-v));
        for s in 0..self.ns {
            let used: f64 = self.tf.iter().zip(f).filter(|(t, _)| t.0 == s).map(|(_, v)| v).sum::<f64>()
                + self.tz.iter().zip(z).filter(|(t, _)| t.0 == s).map(|(_, v)| v).sum::<f64>();
            worst = worst.max(used - data.availability[s]);
        }
        for l in 0..self.nl {
            let out: f64 = self.ty.iter().zip(y).filter(|(t, _)| t.0 == l).map(|(_, v)| v).sum();
            let inflow: f64 = self.tf.iter().zip(f).filter(|(t, _)| t.1 == l).map(|(_, v)| v).sum();
            worst = worst.max((inflow - out).abs());
            if data.capacity[l].is_finite() {
                worst = worst.max(out - data.capacity[l]);
            }
            for k in 0..self.nk {
                let q: f64 = self.tf.iter().zip(f).filter(|(t, _)| t.1 == l).map(|(t, v)| self.c[t.0][k] * v).sum();
                worst = worst.max((q - p[l * self.nk + k] * out).abs());
            }
        }
        for j in 0..self.nj {
            let ys: f64 = self.ty.iter().zip(y).filter(|(t, _)| t.1 == j).map(|(_, v)| v).sum();
            let zs: f64 = self.tz.iter().zip(z).filter(|(t, _)| t.1 == j).map(|(_, v)| v).sum();
            for k in 0..self.nk {
                let q: f64 = self.ty.iter().zip(y).filter(|(t, _)| t.1 == j).map(|(t, v)| p[t.0 * self.nk + k] * v).sum::<f64>()
                    + self.tz.iter().zip(z).filter(|(t, _)| t.1 == j).map(|(t, v)| self.c[t.0][k] * v).sum::<f64>();
                worst = worst.max(q - data.quality_limit[j][k] * (ys + zs));
            }
            let total = ys + zs;
            worst = if data.demand_equality {
                worst.max((total - data.demand[j]).abs())
            } else {
                worst.max(total - data.demand[j])
            };
        }
        worst / scale
    }
}

/// Objective, decision and qualities at a refinement probe.
type Probe = Option<(f64, Vec<f64>, Vec<f64>)>;

/// Grid-search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolingOptions {
    /// Grid intervals per dimension; the step is `range / grid_intervals`.
    pub grid_intervals: usize,
    /// Upper limit on grid points across all dimensions; multi-dimensional
    /// grids are coarsened to respect it.
    pub max_grid_points: usize,
    /// Golden-section iterations per coordinate in the refinement pass.
    pub refine_iters: usize,
}

impl Default for PoolingOptions {
    fn default() -> Self {
        Self {
            grid_intervals: 200,
            max_grid_points: 10_000,
            refine_iters: 20,
        }
    }
}

/// Axis-aligned grid, optionally with coordinate groups constrained to
/// `Σ t ≤ 1` (mixing proportions).
pub(crate) struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub groups: Vec<std::ops::Range<usize>>,
}

pub(crate) struct GridBest {
    pub objective: f64,
    pub x: Vec<f64>,
    pub gap: f64,
}

impl Grid {
    fn valid(&self, t: &[f64]) -> bool {
        self.groups.iter().all(|g| t[g.clone()].iter().sum::<f64>() <= 1.0 + 1e-12)
    }

    /// Exhaustive grid search followed by one coordinate-wise golden-section
    /// pass around the best point.
    pub(crate) fn search<F>(&self, opts: &PoolingOptions, eval: F) -> Result<Option<GridBest>>
    where
        F: Fn(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
    {
        let dims = self.lo.len();
        let active: Vec<usize> = (0..dims).filter(|&d| self.hi[d] > self.lo[d]).collect();
        let mut intervals = opts.grid_intervals.max(1);
        if !active.is_empty() {
            let cap = (opts.max_grid_points.max(2) as f64).powf(1.0 / active.len() as f64).floor() as usize;
            intervals = intervals.min(cap.max(2) - 1);
        }
        let npts: Vec<usize> = (0..dims).map(|d| if active.contains(&d) { intervals + 1 } else { 1 }).collect();
        let step: Vec<f64> = (0..dims)
            .map(|d| if npts[d] > 1 { (self.hi[d] - self.lo[d]) / intervals as f64 } else { 0.0 })
            .collect();
        let total: usize = npts.iter().product();
        let mut values = vec![f64::NAN; total];
        let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
        let mut t = vec![0.0; dims];
        for (flat, value) in values.iter_mut().enumerate() {
            let mut rem = flat;
            for d in (0..dims).rev() {
                let i = rem % npts[d];
                rem /= npts[d];
                t[d] = if i + 1 == npts[d] && npts[d] > 1 { self.hi[d] } else { self.lo[d] + i as f64 * step[d] };
            }
            if !self.valid(&t) {
                continue;
            }
            if let Some((obj, x)) = eval(&t)? {
                *value = obj;
                if best.as_ref().is_none_or(|b| obj < b.1) {
                    best = Some((flat, obj, x, t.clone()));
                }
            }
        }
        let Some((_, mut obj, mut x, mut tb)) = best else { return Ok(None) };

        // Certified gap: largest change between adjacent finite grid values.
        let mut gap = 0.0f64;
        let mut stride = 1;
        for d in (0..dims).rev() {
            for flat in 0..total {
                let i = (flat / stride) % npts[d];
                if i + 1 < npts[d] {
                    let (a, b) = (values[flat], values[flat + stride]);
                    if a.is_finite() && b.is_finite() {
                        gap = gap.max((a - b).abs());
                    }
                }
            }
            stride *= npts[d];
        }

        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for &d in &active {
            let mut a = (tb[d] - step[d]).max(self.lo[d]);
            let mut b = (tb[d] + step[d]).min(self.hi[d]);
            let probe = |v: f64, base: &[f64]| -> Result<Probe> {
                let mut q = base.to_vec();
                q[d] = v;
                if !self.valid(&q) {
                    return Ok(None);
                }
                Ok(eval(&q)?.map(|(o, x)| (o, x, q)))
            };
            let base = tb.clone();
            let score = |r: &Probe| r.as_ref().map_or(f64::INFINITY, |v| v.0);
            let mut c = b - phi * (b - a);
            let mut e = a + phi * (b - a);
            let mut fc = probe(c, &base)?;
            let mut fe = probe(e, &base)?;
            for _ in 0..opts.refine_iters {
                for (o, xx, q) in [&fc, &fe].into_iter().flatten() {
                    if *o < obj {
                        obj = *o;
                        x = xx.clone();
                        tb = q.clone();
                    }
                }
                if score(&fc) <= score(&fe) {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - phi * (b - a);
                    fc = probe(c, &base)?;
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + phi * (b - a);
                    fe = probe(e, &base)?;
                }
            }
            for (o, xx, q) in [&fc, &fe].into_iter().flatten() {
                if *o < obj {
                    obj = *o;
                    x = xx.clone();
                    tb = q.clone();
                }
            }
        }
        Ok(Some(GridBest { objective: obj, x, gap }))
    }
}

/// Standard pooling with unknown demand caps `θ_j` for every product.
#[derive(Debug, Clone)]
pub struct PoolingProblem {
    network: PoolingNetwork,
    ix: Indexed,
    layout: VariableLayout,
    options: PoolingOptions,
}

impl PoolingProblem {
    pub fn new(network: PoolingNetwork, options: PoolingOptions) -> Result<Self> {
        let p = Self::new_unchecked(network, options)?;
        let ix = &p.ix;
        if ix.nl * ix.nk > MAX_GRID_DIMS {
            return Err(Error::Unsupported(format!(
                "pooling network '{}' has |L|·|K| = {} > {MAX_GRID_DIMS}; attach an external solver through the oracle interface (BO4IO_ORACLE_CMD)",
                p.network.name,
                ix.nl * ix.nk
            )));
        }
        Ok(p)
    }

    /// Skips the grid-size limit; only for residual checks of external solutions.
    pub(crate) fn new_unchecked(network: PoolingNetwork, options: PoolingOptions) -> Result<Self> {
        let ix = network.indexed()?;
        Ok(Self {
            layout: network.decision_layout(),
            network,
            ix,
            options,
        })
    }

    pub fn network(&self) -> &PoolingNetwork {
        &self.network
    }

    pub fn options(&self) -> &PoolingOptions {
        &self.options
    }

    fn lp_data(&self, input: &InstanceInput, theta: &[f64]) -> Result<LpData> {
        let net = &self.network;
        let cost = input_or(input, "cost", &net.feeds.iter().map(|f| f.cost).collect::<Vec<_>>())?.to_vec();
        let nominal_y: Vec<f64> = net.pool_product.iter().map(|s| s.price).collect();
        let nominal_z: Vec<f64> = net.feed_product.iter().map(|s| s.price).collect();
        let nominal_a: Vec<f64> = net.feeds.iter().map(|f| f.availability).collect();
        let nominal_q: Vec<f64> = net.products.iter().flat_map(|p| p.quality_limit.clone()).collect();
        let q = input_or(input, "quality_limit", &nominal_q)?;
        Ok(LpData {
            cost_f: self.ix.tf.iter().zip(&net.feed_pool).map(|(t, s)| cost[t.0] + s.cost).collect(),
            cost_z: self.ix.tz.iter().map(|t| cost[t.0]).collect(),
            price_y: input_or(input, "price_y", &nominal_y)?.to_vec(),
            price_z: input_or(input, "price_z", &nominal_z)?.to_vec(),
            availability: input_or(input, "availability", &nominal_a)?.to_vec(),
            capacity: net.pools.iter().map(|p| p.capacity).collect(),
            demand: theta.to_vec(),
            demand_equality: false,
            quality_limit: q.chunks(self.ix.nk.max(1)).map(|c| c.to_vec()).collect(),
        })
    }

    /// Quality ranges `[min C, max C]` over the feeds entering each pool.
    fn quality_grid(&self) -> Grid {
        let ix = &self.ix;
        let mut lo = vec![f64::INFINITY; ix.nl * ix.nk];
        let mut hi = vec![f64::NEG_INFINITY; ix.nl * ix.nk];
        for &(s, l) in &ix.tf {
            for k in 0..ix.nk {
                lo[l * ix.nk + k] = lo[l * ix.nk + k].min(ix.c[s][k]);
                hi[l * ix.nk + k] = hi[l * ix.nk + k].max(ix.c[s][k]);
            }
        }
        Grid { lo, hi, groups: Vec::new() }
    }

    /// Solves with demand caps, or with demand equalities when `equality`.
    pub(crate) fn solve_with(&self, input: &InstanceInput, demands: &[f64], equality: bool) -> Result<FopSolution> {
        check_dim(self.ix.nj, demands.len())?;
        let mut data = self.lp_data(input, demands)?;
        data.demand_equality = equality;
        let grid = self.quality_grid();
        let found = grid.search(&self.options, |t| self.ix.solve_fixed(&data, &Composition::Quality(t.to_vec())))?;
        Ok(match found {
            None => FopSolution::without_point(SolveStatus::Infeasible, self.layout.len()),
            Some(best) => FopSolution {
                x: best.x,
                objective: best.objective,
                status: if grid.lo.iter().zip(&grid.hi).any(|(a, b)| b > a) {
                    SolveStatus::GridOptimal
                } else {
                    SolveStatus::Optimal
                },
                gap: Some(best.gap),
            },
        })
    }

    /// Objective of the LP at fixed pool qualities (for oracles and tests).
    pub fn solve_at_quality(&self, input: &InstanceInput, theta: &[f64], p: &[f64]) -> Result<Option<f64>> {
        let data = self.lp_data(input, theta)?;
        Ok(self.ix.solve_fixed(&data, &Composition::Quality(p.to_vec()))?.map(|r| r.0))
    }
}

impl ForwardProblem for PoolingProblem {
    fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    fn param_dim(&self) -> usize {
        self.ix.nj
    }

    fn default_domain(&self) -> ParameterDomain {
        ParameterDomain::new(vec![0.5; self.ix.nj], vec![1.0; self.ix.nj], false).expect("non-empty box")
    }

    fn solve(&self, input: &InstanceInput, theta: &[f64]) -> Result<FopSolution> {
        self.solve_with(input, theta, false)
    }

    fn residual(&self, input: &InstanceInput, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_dim(self.layout.len(), x.len())?;
        let data = self.lp_data(input, theta)?;
        Ok(self.ix.residual(&data, x))
    }
}
