//! Generalized pooling with feed and pool installation binaries, hard product
//! demands and unknown quality limits `(θ_j, 1 − θ_j)` over two qualities.
//!
//! Every binary pattern is enumerated; with the binaries fixed the problem is
//! a standard pooling problem with demand equalities, solved on a grid.

use serde::{Deserialize, Serialize};

use super::pooling::{Composition, Grid, Indexed, LpData, PoolingNetwork, PoolingOptions, MAX_GRID_DIMS};
use super::{input_field, input_or, FopSolution, ForwardProblem, InstanceInput, SolveStatus, VariableLayout};
use crate::domain::ParameterDomain;
use crate::error::{check_dim, Error, Result};

/// Largest `|S| + |L|` enumerated in-process.
pub const MAX_BINARIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenPoolingNetwork(pub PoolingNetwork);

impl GenPoolingNetwork {
    pub fn validate(&self) -> Result<()> {
        let ix = self.0.indexed()?;
        if ix.nk != 2 {
            return Err(Error::Config(format!(
                "generalized pooling network '{}' needs exactly two qualities, found {}",
                self.0.name, ix.nk
            )));
        }
        Ok(())
    }

    pub fn nominal_input(&self) -> InstanceInput {
        let mut input = self.0.nominal_input();
        input.insert("demand".into(), self.0.products.iter().map(|p| p.demand).collect());
        input
    }

    /// Nominal first-quality limits `θ_j`.
    pub fn nominal_theta(&self) -> Vec<f64> {
        self.0.products.iter().map(|p| p.quality_limit[0]).collect()
    }
}

/// How pool compositions are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Mixing proportions of each pool's inlet streams.
    #[default]
    Proportion,
    /// Pool qualities, as in the standard pooling solver.
    Quality,
}

#[derive(Debug, Clone)]
pub struct GenPoolingProblem {
    network: GenPoolingNetwork,
    ix: Indexed,
    layout: VariableLayout,
    options: PoolingOptions,
    grid: GridKind,
}

impl GenPoolingProblem {
    pub fn new(network: GenPoolingNetwork, options: PoolingOptions, grid: GridKind) -> Result<Self> {
        let p = Self::new_unchecked(network, options, grid)?;
        let ix = &p.ix;
        if ix.ns + ix.nl > MAX_BINARIES || ix.nl * ix.nk > MAX_GRID_DIMS {
            return Err(Error::Unsupported(format!(
                "generalized pooling network '{}' exceeds the in-process limits (|S|+|L| ≤ {MAX_BINARIES}, |L|·|K| ≤ {MAX_GRID_DIMS}); attach an external solver through the oracle interface (BO4IO_ORACLE_CMD)",
                p.network.0.name
            )));
        }
        Ok(p)
    }

    /// Skips the size limits; only for residual checks of external solutions.
    pub(crate) fn new_unchecked(network: GenPoolingNetwork, options: PoolingOptions, grid: GridKind) -> Result<Self> {
        network.validate()?;
        let ix = network.0.indexed()?;
        let mut layout = network.0.decision_layout();
        layout.push("gamma_init", ix.ns);
        layout.push("gamma_pool", ix.nl);
        Ok(Self {
            network,
            ix,
            layout,
            options,
            grid,
        })
    }

    pub fn network(&self) -> &GenPoolingNetwork {
        &self.network
    }

    fn lp_data(&self, input: &InstanceInput, theta: &[f64]) -> Result<LpData> {
        check_dim(self.ix.nj, theta.len())?;
        let net = &self.network.0;
        let ix = &self.ix;
        let cost = input_or(input, "cost", &net.feeds.iter().map(|f| f.cost).collect::<Vec<_>>())?.to_vec();
        let nominal_y: Vec<f64> = net.pool_product.iter().map(|s| s.price).collect();
        let nominal_z: Vec<f64> = net.feed_product.iter().map(|s| s.price).collect();
        Ok(LpData {
            cost_f: ix.tf.iter().zip(&net.feed_pool).map(|(t, s)| cost[t.0] + s.cost).collect(),
            cost_z: ix.tz.iter().map(|t| cost[t.0]).collect(),
            price_y: input_or(input, "price_y", &nominal_y)?.to_vec(),
            price_z: input_or(input, "price_z", &nominal_z)?.to_vec(),
            availability: input_field(input, "availability", ix.ns)?.to_vec(),
            capacity: net.pools.iter().map(|p| p.capacity).collect(),
            demand: input_field(input, "demand", ix.nj)?.to_vec(),
            demand_equality: true,
            quality_limit: theta.iter().map(|t| vec![*t, 1.0 - t]).collect(),
        })
    }

    fn with_pattern(&self, data: &LpData, pattern: u32) -> (LpData, f64) {
        let mut d = data.clone();
        let mut install = 0.0;
        for (s, feed) in self.network.0.feeds.iter().enumerate() {
            if pattern >> s & 1 == 1 {
                install += feed.install_cost;
            } else {
                d.availability[s] = 0.0;
            }
        }
        for (l, pool) in self.network.0.pools.iter().enumerate() {
            if pattern >> (self.ix.ns + l) & 1 == 1 {
                install += pool.install_cost;
            } else {
                d.capacity[l] = 0.0;
            }
        }
        (d, install)
    }

    /// Inlet streams of each pool, in `T_f` order.
    fn inlets(&self) -> Vec<Vec<usize>> {
        (0..self.ix.nl)
            .map(|l| (0..self.ix.tf.len()).filter(|&a| self.ix.tf[a].1 == l).collect())
            .collect()
    }

    fn search(&self, data: &LpData) -> Result<Option<super::pooling::GridBest>> {
        let ix = &self.ix;
        match self.grid {
            GridKind::Quality => {
                let mut lo = vec![f64::INFINITY; ix.nl * ix.nk];
                let mut hi = vec![f64::NEG_INFINITY; ix.nl * ix.nk];
                for &(s, l) in &ix.tf {
                    for k in 0..ix.nk {
                        lo[l * ix.nk + k] = lo[l * ix.nk + k].min(ix.c[s][k]);
                        hi[l * ix.nk + k] = hi[l * ix.nk + k].max(ix.c[s][k]);
                    }
                }
                let grid = Grid { lo, hi, groups: Vec::new() };
                grid.search(&self.options, |t| ix.solve_fixed(data, &Composition::Quality(t.to_vec())))
            }
            GridKind::Proportion => {
                // Each pool with n inlets gets n − 1 coordinates; the last
                // inlet takes the remainder.
                let inlets = self.inlets();
                let mut groups = Vec::new();
                let mut dims = 0;
                for ins in &inlets {
                    let n = ins.len() - 1;
                    groups.push(dims..dims + n);
                    dims += n;
                }
                let grid = Grid {
                    lo: vec![0.0; dims],
                    hi: vec![1.0; dims],
                    groups: groups.clone(),
                };
                let ntf = ix.tf.len();
                grid.search(&self.options, |t| {
                    let mut w = vec![0.0; ntf];
                    for (ins, g) in inlets.iter().zip(&groups) {
                        let coords = &t[g.clone()];
                        let mut rest = 1.0;
                        for (a, c) in ins.iter().zip(coords) {
                            w[*a] = *c;
                            rest -= c;
                        }
                        w[*ins.last().expect("validated inlet")] = rest.max(0.0);
                    }
                    ix.solve_fixed(data, &Composition::Proportion(w))
                })
            }
        }
    }

    /// Solves with the binaries fixed to `pattern` (bit `s` for feed `s`,
    /// bit `|S| + l` for pool `l`). Returns `None` if infeasible.
    pub fn solve_pattern(&self, input: &InstanceInput, theta: &[f64], pattern: u32) -> Result<Option<FopSolution>> {
        let data = self.lp_data(input, theta)?;
        let (d, install) = self.with_pattern(&data, pattern);
        Ok(self.search(&d)?.map(|best| {
            let mut x = best.x;
            x.extend((0..self.ix.ns + self.ix.nl).map(|b| (pattern >> b & 1) as f64));
            FopSolution {
                x,
                objective: best.objective + install,
                status: SolveStatus::GridOptimal,
                gap: Some(best.gap),
            }
        }))
    }

    pub fn num_patterns(&self) -> u32 {
        1 << (self.ix.ns + self.ix.nl)
    }
}

impl ForwardProblem for GenPoolingProblem {
    fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    fn param_dim(&self) -> usize {
        self.ix.nj
    }

    fn default_domain(&self) -> ParameterDomain {
        ParameterDomain::new(vec![0.2; self.ix.nj], vec![0.6; self.ix.nj], false).expect("non-empty box")
    }

    fn full_parameters(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().flat_map(|t| [*t, 1.0 - t]).collect()
    }

    fn solve(&self, input: &InstanceInput, theta: &[f64]) -> Result<FopSolution> {
        let mut best: Option<FopSolution> = None;
        for pattern in 0..self.num_patterns() {
            if let Some(s) = self.solve_pattern(input, theta, pattern)? {
                if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                    best = Some(s);
                }
            }
        }
        Ok(best.unwrap_or_else(|| FopSolution::without_point(SolveStatus::Infeasible, self.layout.len())))
    }

    fn residual(&self, input: &InstanceInput, theta: &[f64], x: &[f64]) -> Result<f64> {
        check_dim(self.layout.len(), x.len())?;
        let data = self.lp_data(input, theta)?;
        let gammas = &x[self.layout.family("gamma_init").expect("layout").start..];
        let integrality = gammas.iter().fold(0.0f64, |m, g| m.max(g.abs().min((g - 1.0).abs())));
        let pattern = gammas
            .iter()
            .enumerate()
            .fold(0u32, |p, (b, g)| if *g > 0.5 { p | 1 << b } else { p });
        let (d, _) = self.with_pattern(&data, pattern);
        let flows = &x[..self.layout.family("gamma_init").expect("layout").start];
        Ok(self.ix.residual(&d, flows).max(integrality))
    }
}
