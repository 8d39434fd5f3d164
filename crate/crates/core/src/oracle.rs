//! Brute-force verifiers, independent of the analytic feasibility path.
//!
//! The mixture-existence question behind the sharp set is, per observed
//! (t, k) cell: does a sub-mass vector g (0 <= g <= F, total mass r) with
//! mean target mu exist inside the observed mass function F? The achievable
//! means of mass-r sub-vectors form an interval whose endpoints are reached
//! by greedily filling mass from the bottom or top of the sorted support
//! (a fractional-knapsack argument), so the feasibility program is solved
//! exactly without a general LP solver.
//!
//! The module also carries the two-equation demonstration that instrument
//! validity, a nonzero first stage, and an error mean that depends only on
//! the latent treatment cannot coexist with endogeneity.

use crate::error::{Error, Result};
use crate::moments::{CellData, EmpiricalCell};
use crate::partial_id::{mixing_weights, p_star_implied, solve_conditional_means, AlphaGrid};
use crate::types::{MomentSet, MomentSource};

/// Maximum number of support points an instance may carry.
pub const MAX_SUPPORT: usize = 32;

const R_EPS: f64 = 1e-12;

/// A finite-support version of one covariate cell: a common y support with
/// per-(t, k) observed mass functions, the observed first stage, and the
/// instrument probability.
#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    /// Sorted support values.
    pub support: Vec<f64>,
    /// Mass functions indexed `[t][k]`, each summing to one over `support`.
    pub mass: [[Vec<f64>; 2]; 2],
    /// Observed first stage P(T=1 | z=k).
    pub p: [f64; 2],
    /// P(z = 1).
    pub q: f64,
}

impl DiscreteInstance {
    pub fn new(support: Vec<f64>, mass: [[Vec<f64>; 2]; 2], p: [f64; 2], q: f64) -> Result<Self> {
        if support.is_empty() || support.len() > MAX_SUPPORT {
            return Err(Error::InvalidParams(format!(
                "support size must be 1..={MAX_SUPPORT}, got {}",
                support.len()
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(
                "support must be strictly increasing".into(),
            ));
        }
        for row in &mass {
            for f in row {
                if f.len() != support.len() {
                    return Err(Error::InvalidParams(
                        "mass function length must match support".into(),
                    ));
                }
                if f.iter().any(|&x| x < 0.0) {
                    return Err(Error::InvalidParams("negative mass".into()));
                }
                let total: f64 = f.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParams(format!(
                        "mass function sums to {total}, expected 1"
                    )));
                }
            }
        }
        for (k, &pk) in p.iter().enumerate() {
            if !(0.0 < pk && pk < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "p_{k} must be in (0,1): {pk}"
                )));
            }
        }
        if !(0.0 < q && q < 1.0) {
            return Err(Error::InvalidParams(format!("q must be in (0,1): {q}")));
        }
        Ok(Self {
            support,
            mass,
            p,
            q,
        })
    }

    /// Discretizes a data-generating process. Discrete-mode specs map to
    /// their exact atom union; continuous-mode specs are binned onto
    /// `n_support` equal-width bins spanning the jittered range, with atoms
    /// at bin midpoints.
    #[allow(clippy::needless_range_loop)] // t, k are semantic arm indices
    pub fn from_spec(spec: &crate::dgp::DgpSpec, n_support: usize) -> Result<Self> {
        let h = spec.jitter;
        if h == 0.0 {
            let mut support: Vec<f64> = Vec::new();
            for t in 0..2 {
                for k in 0..2 {
                    for (v, _) in spec.cell_mixture(t, k) {
                        if !support.iter().any(|&x| (x - v).abs() < 1e-12) {
                            support.push(v);
                        }
                    }
                }
            }
            support.sort_by(f64::total_cmp);
            let lookup = |v: f64| {
                support
                    .iter()
                    .position(|&x| (x - v).abs() < 1e-12)
                    .expect("atom in support")
            };
            let mut mass: [[Vec<f64>; 2]; 2] = Default::default();
            for t in 0..2 {
                for k in 0..2 {
                    let mut f = vec![0.0; support.len()];
                    for (v, m) in spec.cell_mixture(t, k) {
                        f[lookup(v)] += m;
                    }
                    mass[t][k] = f;
                }
            }
            return Self::new(
                support,
                mass,
                [spec.p_observed(0), spec.p_observed(1)],
                spec.q,
            );
        }
        // Continuous mode: every atom is a uniform box of half-width h.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..2 {
            for k in 0..2 {
                for (v, _) in spec.cell_mixture(t, k) {
                    lo = lo.min(v - h);
                    hi = hi.max(v + h);
                }
            }
        }
        let edges: Vec<f64> = (0..=n_support)
            .map(|i| lo + (hi - lo) * i as f64 / n_support as f64)
            .collect();
        let support: Vec<f64> = edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let mut mass: [[Vec<f64>; 2]; 2] = Default::default();
        for t in 0..2 {
            for k in 0..2 {
                let mut f = vec![0.0; n_support];
                for (v, m) in spec.cell_mixture(t, k) {
                    let (a, b) = (v - h, v + h);
                    for (j, w) in edges.windows(2).enumerate() {
                        let overlap = (b.min(w[1]) - a.max(w[0])).max(0.0);
                        f[j] += m * overlap / (2.0 * h);
                    }
                }
                let total: f64 = f.iter().sum();
                for x in f.iter_mut() {
                    *x /= total;
                }
                mass[t][k] = f;
            }
        }
        Self::new(
            support,
            mass,
            [spec.p_observed(0), spec.p_observed(1)],
            spec.q,
        )
    }

    /// Mean of the (t, k) mass function.
    pub fn cell_mean(&self, t: usize, k: usize) -> f64 {
        self.support
            .iter()
            .zip(&self.mass[t][k])
            .map(|(&v, &m)| v * m)
            .sum()
    }

    /// The instance viewed through the analytic machinery: weighted empirical
    /// cells plus the implied moment set (only the fields the bounds code
    /// consumes are populated from the mass functions).
    #[allow(clippy::needless_range_loop)] // t, k are semantic arm indices
    pub fn to_cell_data(&self) -> Result<CellData> {
        let mut cell_means = [[0.0; 2]; 2];
        for t in 0..2 {
            for k in 0..2 {
                cell_means[t][k] = self.cell_mean(t, k);
            }
        }
        let y_given_z = |j: u32, k: usize| -> f64 {
            let e = |t: usize| -> f64 {
                self.support
                    .iter()
                    .zip(&self.mass[t][k])
                    .map(|(&v, &m)| v.powi(j as i32) * m)
                    .sum()
            };
            self.p[k] * e(1) + (1.0 - self.p[k]) * e(0)
        };
        let ty_given_z = |j: u32, k: usize| -> f64 {
            self.p[k]
                * self
                    .support
                    .iter()
                    .zip(&self.mass[1][k])
                    .map(|(&v, &m)| v.powi(j as i32) * m)
                    .sum::<f64>()
        };
        let qz = self.q * (1.0 - self.q);
        let moments = MomentSet {
            q: self.q,
            p: self.p,
            cov_tz: qz * (self.p[1] - self.p[0]),
            cov_yz: qz * (y_given_z(1, 1) - y_given_z(1, 0)),
            cov_y2z: qz * (y_given_z(2, 1) - y_given_z(2, 0)),
            cov_y3z: qz * (y_given_z(3, 1) - y_given_z(3, 0)),
            cov_tyz: qz * (ty_given_z(1, 1) - ty_given_z(1, 0)),
            cov_ty2z: qz * (ty_given_z(2, 1) - ty_given_z(2, 0)),
            cell_means,
            source: MomentSource::Population,
        };
        let build = |t: usize, k: usize| -> Result<EmpiricalCell> {
            let atoms: Vec<(f64, f64)> = self
                .support
                .iter()
                .zip(&self.mass[t][k])
                .map(|(&v, &m)| (v, m))
                .collect();
            EmpiricalCell::from_atoms(&atoms)
        };
        Ok(CellData::from_parts(
            0,
            self.support.len(),
            moments,
            [[build(0, 0)?, build(0, 1)?], [build(1, 0)?, build(1, 1)?]],
        ))
    }
}

/// Maximal sum of v * g over sub-mass vectors g with 0 <= g <= mass and
/// total(g) = budget: fill from the top of the support, splitting the last
/// atom.
fn greedy_extreme_sum(support: &[f64], mass: &[f64], budget: f64, from_top: bool) -> f64 {
    let mut remaining = budget;
    let mut acc = 0.0;
    let idx: Box<dyn Iterator<Item = usize>> = if from_top {
        Box::new((0..support.len()).rev())
    } else {
        Box::new(0..support.len())
    };
    for i in idx {
        if remaining <= 0.0 {
            break;
        }
        let take = mass[i].min(remaining);
        acc += take * support[i];
        remaining -= take;
    }
    acc
}

/// Maximal achievable mean of a mass-`r` sub-distribution (the LP extreme
/// point used by the feasibility program).
pub fn lp_extreme_upper_mean(support: &[f64], mass: &[f64], r: f64) -> f64 {
    greedy_extreme_sum(support, mass, r, true) / r
}

/// Minimal achievable mean of a mass-`r` sub-distribution.
pub fn lp_extreme_lower_mean(support: &[f64], mass: &[f64], r: f64) -> f64 {
    greedy_extreme_sum(support, mass, r, false) / r
}

/// Decides whether the four observed mass functions can each be split into
/// latent components with the mixing weights and component means implied by
/// the candidate rates. Components with degenerate mixing weight are
/// unrestricted; a singular conditional-mean system with unequal observed
/// means is inconsistent and therefore infeasible.
pub fn lp_feasible_mixture(
    instance: &DiscreteInstance,
    alpha0: f64,
    alpha1: f64,
    tol: f64,
) -> Result<bool> {
    if !(alpha0 >= 0.0 && alpha1 >= 0.0 && alpha0 + alpha1 < 1.0) {
        return Ok(false);
    }
    let cd = instance.to_cell_data()?;
    let moments = &cd.moments;
    for k in 0..2 {
        let p_k = instance.p[k];
        if !(alpha0 < p_k && alpha1 < 1.0 - p_k) {
            return Ok(false);
        }
        let mu_high = match solve_conditional_means(alpha0, alpha1, moments, k) {
            Ok((_, hi)) => hi,
            Err(Error::InconsistentSystem { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let p_star = p_star_implied(alpha0, alpha1, p_k);
        let weights = mixing_weights(alpha0, alpha1, p_star, p_k)?;
        for t in 0..2 {
            let r = weights.r(t).clamp(0.0, 1.0);
            if r <= R_EPS || r >= 1.0 - R_EPS {
                continue;
            }
            let target = r * mu_high;
            let max = greedy_extreme_sum(&instance.support, &instance.mass[t][k], r, true);
            let min = greedy_extreme_sum(&instance.support, &instance.mass[t][k], r, false);
            let slack = tol * (1.0 + target.abs());
            if target < min - slack || target > max + slack {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// LP feasibility evaluated over a grid; the oracle counterpart of the sharp
/// set mask. Entries are (alpha0, alpha1, feasible).
pub fn bruteforce_sharp_set(
    instance: &DiscreteInstance,
    grid: &AlphaGrid,
    tol: f64,
) -> Result<Vec<(f64, f64, bool)>> {
    let mut out = Vec::with_capacity(grid.len());
    for &a0 in &grid.alpha0 {
        for &a1 in &grid.alpha1 {
            out.push((a0, a1, lp_feasible_mixture(instance, a0, a1, tol)?));
        }
    }
    Ok(out)
}

/// Outcome of the two-equation endogeneity demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncompatibilityBranch {
    /// m = 0: the system is consistent and the error is exogenous.
    Exogenous,
    /// Nonzero first stage forces the unique solution m* = 0, contradicting
    /// the claimed endogeneity.
    InconsistentUniqueZero,
    /// p*_0 = p*_1: rank-deficient system with a one-dimensional solution
    /// family (the no-first-stage branch).
    NoFirstStageFamily,
}

/// Report of the incompatibility check: the conditional error means m*_t
/// (restricted to be constant in z) must satisfy
/// (1 - p*_k) m*_0 + p*_k m*_1 = 0 for both k.
#[derive(Debug, Clone)]
pub struct IncompatibilityReport {
    pub determinant: f64,
    /// Residual of the k = 1 equation after solving the k = 0 equation for
    /// m*_0 given m*_1 = m. Exactly zero iff m = 0 or p*_0 = p*_1.
    pub residual: f64,
    pub branch: IncompatibilityBranch,
    /// Basis of the solution family in the rank-deficient branch, as
    /// (m*_0, m*_1) up to scale.
    pub null_space: Option<(f64, f64)>,
}

/// Solves the two convex-combination equations for the error means under the
/// restriction that they do not vary with the instrument, with claimed
/// treated-arm level `m`.
pub fn incompatibility_check(p_star_0: f64, p_star_1: f64, m: f64) -> IncompatibilityReport {
    // System matrix rows: [1 - p*_k, p*_k]; determinant p*_1 - p*_0.
    let determinant = p_star_1 - p_star_0;
    if determinant == 0.0 {
        // One-dimensional family: (m*_0, m*_1) proportional to
        // (p*_0, -(1 - p*_0)).
        return IncompatibilityReport {
            determinant,
            residual: 0.0,
            branch: IncompatibilityBranch::NoFirstStageFamily,
            null_space: Some((p_star_0, -(1.0 - p_star_0))),
        };
    }
    // Solve the k = 0 equation for m*_0, plug into k = 1.
    let m0 = -m * p_star_0 / (1.0 - p_star_0);
    let residual = (1.0 - p_star_1) * m0 + p_star_1 * m;
    let branch = if m == 0.0 {
        IncompatibilityBranch::Exogenous
    } else {
        IncompatibilityBranch::InconsistentUniqueZero
    };
    IncompatibilityReport {
        determinant,
        residual,
        branch,
        null_space: None,
    }
}
