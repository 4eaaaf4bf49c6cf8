//! Projected local descent with central-difference gradients, shared by the
//! acquisition optimizer and the profile-slice searches.

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// Minimizes `f` from `x0` (assumed feasible, with value `f0`) by projected
/// gradient steps. A step is taken only if it strictly lowers `f`, so the
/// returned value never exceeds `f0`.
pub(crate) fn local_minimize<F, P>(f: F, project: P, x0: Vec<f64>, f0: f64, scale: &[f64], steps: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0;
    let mut fx = f0;
    let mut alpha = f64::NAN;
    for _ in 0..steps {
        let g = gradient(&f, &x, scale);
        let gmax = g.iter().zip(scale).fold(0.0f64, |m, (v, s)| m.max((v * s).abs()));
        if !(gmax > 0.0) || !gmax.is_finite() {
            break;
        }
        if alpha.is_nan() {
            let mean_scale = scale.iter().sum::<f64>() / scale.len() as f64;
            alpha = 0.1 * mean_scale * mean_scale / gmax;
        }
        let mut improved = None;
        let mut a = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
            let y = project(&trial);
            let moved: f64 = y.iter().zip(&x).zip(&g).map(|((yi, xi), gi)| gi * (xi - yi)).sum();
            let fy = f(&y);
            if fy < fx && fy <= fx - ARMIJO * moved {
                improved = Some((y, fy));
                break;
            }
            a *= 0.5;
        }
        match improved {
            Some((y, fy)) => {
                let gain = fx - fy;
                x = y;
                fx = fy;
                alpha = a * 2.0;
                if gain <= 1e-14 * fx.abs().max(1e-300) {
                    break;
                }
            }
            None => break,
        }
    }
    (x, fx)
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * scale[i];
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
