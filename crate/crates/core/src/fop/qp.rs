//! Strictly convex separable QP with equality rows and simple bounds:
//!
//! ```text
//! min Σ ½h_i v_i² + g_i v_i   s.t.  A v = b,  lb ≤ v ≤ ub,   h > 0.
//! ```
//!
//! For a fixed equality multiplier `y` the Lagrangian minimizer is the
//! bound-clamped point `v(y) = clamp(−(g + Aᵀy)/h)`, so stationarity and
//! complementarity hold by construction. The concave dual is maximized by a
//! semismooth Newton method whose active set is the set of clamped
//! variables; the primal residual `A v(y) − b` is its gradient.

use nalgebra::{DMatrix, DVector};

use super::lp::{LpBuilder, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct QpOutcome {
    pub v: Vec<f64>,
    /// Equality multipliers; only the tests read them.
    #[cfg_attr(not(test), allow(dead_code))]
    pub y: Vec<f64>,
    pub objective: f64,
}

/// Row-reduces `[A | b]` and drops dependent rows; returns `None` if the
/// system is inconsistent.
pub(crate) fn full_row_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let (m, n) = a.shape();
    let mut aug = DMatrix::zeros(m, n + 1);
    aug.view_mut((0, 0), (m, n)).copy_from(a);
    aug.set_column(n, b);
    let scale = a.amax().max(1.0);
    let mut rank = 0;
    let mut pivot_rows = Vec::new();
    let mut row_origin: Vec<usize> = (0..m).collect();
    for col in 0..n {
        if rank == m {
            break;
        }
        let (best, val) = (rank..m)
            .map(|r| (r, aug[(r, col)].abs()))
            .fold((rank, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-10 * scale {
            continue;
        }
        aug.swap_rows(rank, best);
        row_origin.swap(rank, best);
        let p = aug[(rank, col)];
        for r in 0..m {
            if r != rank {
                let f = aug[(r, col)] / p;
                if f != 0.0 {
                    for c in 0..=n {
                        let v = aug[(rank, c)];
                        aug[(r, c)] -= f * v;
                    }
                }
            }
        }
        pivot_rows.push(row_origin[rank]);
        rank += 1;
    }
    let bscale = b.amax().max(1.0);
    if (rank..m).any(|r| aug[(r, n)].abs() > 1e-9 * bscale) {
        return None;
    }
    pivot_rows.sort_unstable();
    let a_red = DMatrix::from_fn(rank, n, |i, j| a[(pivot_rows[i], j)]);
    let b_red = DVector::from_fn(rank, |i, _| b[pivot_rows[i]]);
    Some((a_red, b_red))
}

fn primal(h: &[f64], g: &[f64], at_y: &DVector<f64>, lb: &[f64], ub: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut free = vec![false; h.len()];
    let v = (0..h.len())
        .map(|i| {
            let u = -(g[i] + at_y[i]) / h[i];
            if u <= lb[i] {
                lb[i]
            } else if u >= ub[i] {
                ub[i]
            } else {
                free[i] = true;
                u
            }
        })
        .collect();
    (v, free)
}

fn dual_value(h: &[f64], g: &[f64], v: &[f64], y: &DVector<f64>, r: &DVector<f64>) -> f64 {
    let p: f64 = (0..h.len()).map(|i| 0.5 * h[i] * v[i] * v[i] + g[i] * v[i]).sum();
    p + y.dot(r)
}

/// Solves the QP; `Ok(None)` means the feasible set is empty.
pub(crate) fn solve_separable_qp(
    h: &[f64],
    g: &[f64],
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &[f64],
    ub: &[f64],
) -> Result<Option<QpOutcome>> {
    let n = h.len();
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Input("quadratic weights must be positive".into()));
    }
    if lb.iter().zip(ub).any(|(l, u)| l > u) {
        return Ok(None);
    }
    let Some((a, b)) = full_row_rank(a, b) else { return Ok(None) };
    let m = a.nrows();

    // Feasibility first, so that the dual iteration below is well posed.
    if m > 0 {
        let mut lp = LpBuilder::new();
        for i in 0..n {
            lp.add_var(0.0, lb[i], ub[i]);
        }
        for r in 0..m {
            lp.add_row((0..n).map(|j| (j, a[(r, j)])).filter(|e| e.1 != 0.0).collect(), Sense::Eq, b[r]);
        }
        if !lp.solve()?.status.has_point() {
            return Ok(None);
        }
    }

    let at = a.transpose();
    let mut y = DVector::zeros(m);
    let bound_scale = lb
        .iter()
        .chain(ub)
        .filter(|v| v.is_finite())
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-11 * bound_scale * a.amax().max(1.0);
    let mut last = None;
    for _ in 0..500 {
        let (v, free) = primal(h, g, &(&at * &y), lb, ub);
        let r = &a * DVector::from_column_slice(&v) - &b;
        let rnorm = r.amax();
        if rnorm <= tol {
            last = Some(v);
            break;
        }
        let mut mm = DMatrix::zeros(m, m);
        for i in (0..n).filter(|&i| free[i]) {
            let col = a.column(i);
            mm.ger(1.0 / h[i], &col, &col, 1.0);
        }
        let diag_scale = (0..m).fold(0.0f64, |acc, i| acc.max(mm[(i, i)])).max(1e-12);
        let reg = diag_scale * (1e-12 + rnorm.min(1e-4));
        for i in 0..m {
            mm[(i, i)] += reg;
        }
        let d = match mm.cholesky() {
            Some(c) => c.solve(&r),
            None => r.clone() / diag_scale,
        };
        let phi = dual_value(h, g, &v, &y, &r);
        let slope = r.dot(&d);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let y_new = &y + t * &d;
            let (v_new, _) = primal(h, g, &(&at * &y_new), lb, ub);
            let r_new = &a * DVector::from_column_slice(&v_new) - &b;
            if dual_value(h, g, &v_new, &y_new, &r_new) >= phi + 1e-4 * t * slope {
                y = y_new;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            last = Some(v);
            break;
        }
    }
    let v = match last {
        Some(v) => v,
        None => primal(h, g, &(&at * &y), lb, ub).0,
    };
    let r = &a * DVector::from_column_slice(&v) - &b;
    if r.amax() > 1e-7 * bound_scale {
        return Err(Error::Numerical(format!(
            "QP dual iteration stalled with equality residual {:e}",
            r.amax()
        )));
    }
    let objective = (0..n).map(|i| 0.5 * h[i] * v[i] * v[i] + g[i] * v[i]).sum();
    Ok(Some(QpOutcome {
        v,
        y: y.iter().copied().collect(),
        objective,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_reduction_drops_duplicate_rows() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let (ar, br) = full_row_rank(&a, &b).unwrap();
        assert_eq!(ar.nrows(), 2);
        assert_eq!(br.len(), 2);
        let bad = DVector::from_vec(vec![1.0, 3.0, 0.0]);
        assert!(full_row_rank(&a, &bad).is_none());
    }

    #[test]
    fn unconstrained_minimizer_inside_box() {
        let out = solve_separable_qp(
            &[2.0, 2.0],
            &[-1.0, 2.0],
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &[-5.0, -5.0],
            &[5.0, 5.0],
        )
        .unwrap()
        .unwrap();
        assert!((out.v[0] - 0.5).abs() < 1e-12 && (out.v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_point_is_found() {
        // v1 = v2 with v1 ≤ 10 ≤ v2.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let out = solve_separable_qp(&[1.0, 1.0], &[0.0, 0.0], &a, &DVector::zeros(1), &[0.0, 10.0], &[10.0, 20.0])
            .unwrap()
            .unwrap();
        assert!((out.v[0] - 10.0).abs() < 1e-9 && (out.v[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn empty_feasible_set() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let out = solve_separable_qp(&[1.0, 1.0], &[0.0, 0.0], &a, &DVector::zeros(1), &[0.0, 11.0], &[10.0, 20.0]).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn multipliers_satisfy_stationarity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let (m, n) = (2, 6);
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = &a * DVector::from_column_slice(&v0);
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (lb, ub) = (vec![-1.0; n], vec![1.0; n]);
            let out = solve_separable_qp(&h, &g, &a, &b, &lb, &ub).unwrap().unwrap();
            let aty = a.transpose() * DVector::from_column_slice(&out.y);
            for i in 0..n {
                // Gradient of the Lagrangian must push against an active bound.
                let grad = h[i] * out.v[i] + g[i] + aty[i];
                if out.v[i] > lb[i] + 1e-9 && out.v[i] < ub[i] - 1e-9 {
                    assert!(grad.abs() < 1e-6, "{grad}");
                } else if out.v[i] <= lb[i] + 1e-9 {
                    assert!(grad > -1e-6);
                } else {
                    assert!(grad < 1e-6);
                }
            }
        }
    }
}
