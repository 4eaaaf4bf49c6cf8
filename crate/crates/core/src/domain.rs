//! The admissible parameter set: a box, optionally intersected with the
//! unit simplex `{θ ≥ 0, Σθ ≤ 1}` when the free parameters are the leading
//! weights of a probability vector whose last entry is implied.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Slack allowed by feasibility checks.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub simplex_coupled: bool,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, simplex_coupled: bool) -> Result<Self> {
        let domain = Self {
            lower,
            upper,
            simplex_coupled,
        };
        domain.validate()?;
        Ok(domain)
    }

    /// The unit box `[0,1]^d`.
    pub fn unit_box(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            simplex_coupled: false,
        }
    }

    /// `[0,1]^d` coupled with `Σθ ≤ 1`.
    pub fn unit_simplex(dim: usize) -> Self {
        Self {
            simplex_coupled: true,
            ..Self::unit_box(dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lower.len(), self.upper.len())?;
        if self.lower.is_empty() {
            return Err(Error::Config("parameter domain has zero dimensions".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "parameter domain bounds for dimension {i} must satisfy lower < upper (got [{lo}, {hi}])"
                )));
            }
        }
        if self.simplex_coupled {
            let floor: f64 = self.lower.iter().map(|l| l.max(0.0)).sum();
            let empty = floor > 1.0 + FEASIBILITY_TOL
                || self.upper.iter().any(|&u| u < 0.0)
                || self.lower.iter().any(|&l| l > 1.0);
            if empty {
                return Err(Error::Config(
                    "simplex-coupled domain has an empty feasible set".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    /// Effective per-coordinate bounds (box intersected with `[0,1]` when
    /// simplex coupled).
    pub fn effective_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        if self.simplex_coupled {
            (
                self.lower.iter().map(|l| l.max(0.0)).collect(),
                self.upper.iter().map(|u| u.min(1.0)).collect(),
            )
        } else {
            (self.lower.clone(), self.upper.clone())
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        if point.len() != self.dim() {
            return false;
        }
        let (lo, hi) = self.effective_bounds();
        let in_box = point
            .iter()
            .zip(lo.iter().zip(&hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h);
        in_box && (!self.simplex_coupled || point.iter().sum::<f64>() <= 1.0)
    }

    /// Euclidean projection onto the domain.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), point.len())?;
        self.validate()?;
        let (lo, hi) = self.effective_bounds();
        let cap = self.simplex_coupled.then_some(1.0);
        Ok(project_capped(point, &lo, &hi, cap))
    }

    /// Projection onto the slice `{θ ∈ domain : θ_k = point[k]}`; `point[k]`
    /// is first clamped to its feasible range.
    pub fn project_slice(&self, point: &[f64], k: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), point.len())?;
        self.validate()?;
        let (mut lo, mut hi) = self.effective_bounds();
        let floor_others: f64 = lo.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, l)| *l).sum();
        let mut fixed = point[k].clamp(lo[k], hi[k]);
        if self.simplex_coupled {
            fixed = fixed.min(1.0 - floor_others);
        }
        lo.remove(k);
        hi.remove(k);
        let mut rest: Vec<f64> = point.to_vec();
        rest.remove(k);
        let cap = self.simplex_coupled.then_some(1.0 - fixed);
        let mut out = project_capped(&rest, &lo, &hi, cap);
        out.insert(k, fixed);
        Ok(out)
    }

    /// Maps a point of the unit cube into the domain. Simplex-coupled domains
    /// use the sorted-spacings map, which sends uniform cube points to uniform
    /// simplex points, followed by projection onto the box.
    pub fn from_unit_cube(&self, u: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.effective_bounds();
        let raw: Vec<f64> = if self.simplex_coupled {
            let mut sorted = u.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut prev = 0.0;
            sorted
                .iter()
                .map(|&s| {
                    let gap = s - prev;
                    prev = s;
                    gap
                })
                .collect()
        } else {
            u.iter()
                .zip(lo.iter().zip(&hi))
                .map(|(x, (l, h))| l + x * (h - l))
                .collect()
        };
        self.project(&raw).expect("validated domain")
    }
}


/// Projection onto `{lo ≤ x ≤ hi, Σx ≤ cap}`; assumes the set is non-empty.
fn project_capped(point: &[f64], lo: &[f64], hi: &[f64], cap: Option<f64>) -> Vec<f64> {
    let clamp = |tau: f64| -> Vec<f64> {
        point
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(x, (l, h))| (x - tau).clamp(*l, *h))
            .collect()
    };
    let mut out = clamp(0.0);
    let Some(cap) = cap else { return out };
    if out.iter().sum::<f64>() <= cap {
        return out;
    }
    // Find τ ≥ 0 with Σ clamp(x - τ) = cap; the sum is piecewise linear and
    // non-increasing in τ with breakpoints at x - h and x - l.
    let mut breaks: Vec<f64> = point
        .iter()
        .zip(lo.iter().zip(hi))
        .flat_map(|(x, (l, h))| [x - h, x - l])
        .filter(|b| *b > 0.0)
        .collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let total = |tau: f64| clamp(tau).iter().sum::<f64>();
    let mut tau = *breaks.last().unwrap();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (sa, sb) = (total(a), total(b));
        if sa >= cap && sb <= cap {
            tau = if sa == sb { a } else { a + (sa - cap) * (b - a) / (sa - sb) };
            break;
        }
    }
    out = clamp(tau);
    // Round-off can leave the sum a few ulps above the cap; shave the excess
    // from the coordinates with the most room.
    for _ in 0..4 {
        let excess = out.iter().sum::<f64>() - cap;
        if excess <= 0.0 {
            break;
        }
        let (i, _) = out
            .iter()
            .zip(lo)
            .map(|(x, l)| x - l)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        out[i] = (out[i] - excess.max(f64::EPSILON)).max(lo[i]);
    }
    out
}
