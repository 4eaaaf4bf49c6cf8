//! Dense two-phase primal simplex with Bland's anti-cycling rule.

use crate::error::{check_dim, Error, Result};

use super::{FopSolution, SolveStatus};

const PIVOT_TOL: f64 = 1e-11;

/// `min cᵀx  s.t.  A_eq x = b_eq,  lb ≤ x ≤ ub` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl LinearProgram {
    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        check_dim(n, self.lb.len())?;
        check_dim(n, self.ub.len())?;
        check_dim(self.a_eq.len(), self.b_eq.len())?;
        for row in &self.a_eq {
            check_dim(n, row.len())?;
        }
        if self.lb.iter().zip(&self.ub).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::Input("linear program has lb > ub".into()));
        }
        Ok(())
    }
}

/// How an original variable maps onto the non-negative standard-form ones.
#[derive(Clone, Copy)]
enum Map {
    /// x = lb + x'
    Shift(f64),
    /// x = ub − x'
    Flip(f64),
    /// x = x⁺ − x⁻
    Free,
}

/// Solves the LP. Degenerate ties are broken by Bland's rule.
pub fn solve_lp(lp: &LinearProgram) -> Result<FopSolution> {
    lp.validate()?;
    let n = lp.c.len();

    // Standard form: min c'ᵀz s.t. A'z = b', z ≥ 0.
    let mut maps = Vec::with_capacity(n);
    let mut columns: Vec<(usize, f64)> = Vec::new(); // (original var, sign)
    for j in 0..n {
        let (l, u) = (lp.lb[j], lp.ub[j]);
        let map = if l.is_finite() {
            Map::Shift(l)
        } else if u.is_finite() {
            Map::Flip(u)
        } else {
            Map::Free
        };
        maps.push((map, columns.len()));
        match map {
            Map::Shift(_) => columns.push((j, 1.0)),
            Map::Flip(_) => columns.push((j, -1.0)),
            Map::Free => {
                columns.push((j, 1.0));
                columns.push((j, -1.0));
            }
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let nz0 = columns.len();
    // Upper-bound rows for doubly bounded variables get their own slack.
    let mut ub_rows = Vec::new();
    for (j, &(map, _)) in maps.iter().enumerate() {
        if let Map::Shift(l) = map {
            if lp.ub[j].is_finite() {
                ub_rows.push((j, lp.ub[j] - l));
            }
        }
    }
    let nz = nz0 + ub_rows.len();
    for (row, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let mut r = vec![0.0; nz];
        let mut b = *b;
        for j in 0..n {
            let a = row[j];
            if a == 0.0 {
                continue;
            }
            let (map, col) = maps[j];
            match map {
                Map::Shift(l) => {
                    r[col] += a;
                    b -= a * l;
                }
                Map::Flip(u) => {
                    r[col] -= a;
                    b -= a * u;
                }
                Map::Free => {
                    r[col] += a;
                    r[col + 1] -= a;
                }
            }
        }
        rows.push(r);
        rhs.push(b);
    }
    for (k, (j, width)) in ub_rows.iter().enumerate() {
        let mut r = vec![0.0; nz];
        r[maps[*j].1] = 1.0;
        r[nz0 + k] = 1.0;
        rows.push(r);
        rhs.push(*width);
    }
    let mut cost = vec![0.0; nz];
    for (j, &(map, col)) in maps.iter().enumerate() {
        match map {
            Map::Shift(_) => cost[col] = lp.c[j],
            Map::Flip(_) => cost[col] = -lp.c[j],
            Map::Free => {
                cost[col] = lp.c[j];
                cost[col + 1] = -lp.c[j];
            }
        }
    }

    let outcome = standard_simplex(&rows, &rhs, &cost);
    let status = match outcome {
        StdOutcome::Optimal(_) => SolveStatus::Optimal,
        StdOutcome::Infeasible => SolveStatus::Infeasible,
        StdOutcome::Unbounded => SolveStatus::Unbounded,
    };
    let StdOutcome::Optimal(z) = outcome else {
        return Ok(FopSolution::without_point(status, n));
    };
    let x: Vec<f64> = (0..n)
        .map(|j| {
            let (map, col) = maps[j];
            let v = match map {
                Map::Shift(l) => l + z[col],
                Map::Flip(u) => u - z[col],
                Map::Free => z[col] - z[col + 1],
            };
            v.clamp(lp.lb[j], lp.ub[j])
        })
        .collect();
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    Ok(FopSolution::optimal(x, objective))
}

enum StdOutcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// m rows of width `cols + 1`; the last entry is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        let mut d: Vec<f64> = cost[..allowed].to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.t[i][j];
                }
            }
        }
        d
    }

    /// Runs Bland-rule iterations on columns `< allowed`; false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> bool {
        let scale = cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let max_iters = 50 * (self.cols + self.t.len()) + 1000;
        for _ in 0..max_iters {
            let d = self.reduced_costs(cost, allowed);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -1e-10 * scale && !self.basis.contains(&j)) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[enter];
                if a > PIVOT_TOL {
                    let ratio = row[self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, enter);
        }
        true
    }
}

fn standard_simplex(rows: &[Vec<f64>], rhs: &[f64], cost: &[f64]) -> StdOutcome {
    let m = rows.len();
    let n = cost.len();
    if m == 0 {
        return if cost.iter().any(|c| *c < 0.0) {
            StdOutcome::Unbounded
        } else {
            StdOutcome::Optimal(vec![0.0; n])
        };
    }
    let cols = n + m;
    let mut t = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; cols + 1];
        for j in 0..n {
            row[j] = sign * rows[i][j];
        }
        row[n + i] = 1.0;
        row[cols] = sign * rhs[i];
        t.push(row);
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        cols,
    };

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; cols];
    for c in phase1.iter_mut().skip(n) {
        *c = 1.0;
    }
    tab.optimize(&phase1, cols);
    let infeas: f64 = tab.basis.iter().zip(&tab.t).filter(|(b, _)| **b >= n).map(|(_, r)| r[cols]).sum();
    let rhs_scale = rhs.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    if infeas > 1e-9 * rhs_scale {
        return StdOutcome::Infeasible;
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < tab.t.len() {
        if tab.basis[i] >= n {
            let entering = (0..n).find(|&j| tab.t[i][j].abs() > 1e-9);
            match entering {
                Some(j) => tab.pivot(i, j),
                None => {
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut full_cost = cost.to_vec();
    full_cost.resize(cols, 0.0);
    if !tab.optimize(&full_cost, n) {
        return StdOutcome::Unbounded;
    }
    let mut z = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            z[b] = tab.t[i][cols].max(0.0);
        }
    }
    StdOutcome::Optimal(z)
}

/// Constraint sense for [`LpBuilder`] rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Sparse coefficients, sense and right-hand side.
type Row = (Vec<(usize, f64)>, Sense, f64);

/// Convenience layer that turns inequality rows into equalities with slacks.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    c: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    rows: Vec<Row>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lb: f64, ub: f64) -> usize {
        self.c.push(cost);
        self.lb.push(lb);
        self.ub.push(ub);
        self.c.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push((coeffs, sense, rhs));
    }

    pub fn build(&self) -> LinearProgram {
        let n = self.c.len();
        let slacks = self.rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let total = n + slacks;
        let mut lp = LinearProgram {
            c: self.c.clone(),
            a_eq: Vec::with_capacity(self.rows.len()),
            b_eq: Vec::with_capacity(self.rows.len()),
            lb: self.lb.clone(),
            ub: self.ub.clone(),
        };
        lp.c.resize(total, 0.0);
        lp.lb.resize(total, 0.0);
        lp.ub.resize(total, f64::INFINITY);
        let mut next = n;
        for (coeffs, sense, rhs) in &self.rows {
            let mut row = vec![0.0; total];
            for &(j, a) in coeffs {
                row[j] += a;
            }
            match sense {
                Sense::Le => {
                    row[next] = 1.0;
                    next += 1;
                }
                Sense::Ge => {
                    row[next] = -1.0;
                    next += 1;
                }
                Sense::Eq => {}
            }
            lp.a_eq.push(row);
            lp.b_eq.push(*rhs);
        }
        lp
    }

    /// Solves and returns the solution restricted to the user variables.
    pub fn solve(&self) -> Result<FopSolution> {
        let mut sol = solve_lp(&self.build())?;
        sol.x.truncate(self.c.len());
        Ok(sol)
    }
}
