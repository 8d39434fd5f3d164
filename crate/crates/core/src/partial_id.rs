//! Partial identification: the first-order rectangle and interval bounds, and
//! the sharp set for the mis-classification rates via grid feasibility.
//!
//! A candidate (alpha0, alpha1) pins down, through the observed first stage,
//! the mixing weights r_tk = P(T*=1 | T=t, z=k) and the treated-component
//! mean mu_k^1. The candidate survives if and only if each observed (t, k)
//! outcome distribution admits a sub-distribution of mass r_tk with mean
//! mu_k^1, which holds exactly when mu_k^1 lies between the bottom-r and
//! top-r truncated means of that distribution. The truncated means are
//! evaluated mass-exactly (threshold atoms split), which is the extreme
//! sub-mixture mean; on continuous samples this coincides with the
//! quantile-threshold form.

use crate::error::{Error, Result};
use crate::moments::CellData;
use crate::types::MomentSet;

/// Mixing weights treated as degenerate when within this distance of 0 or 1;
/// the corresponding component is unrestricted there.
const R_EPS: f64 = 1e-12;

/// Default relative slack for the sandwich comparisons, protecting exactly
/// binding configurations (e.g. the truth in a discretized instance) from
/// rounding.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

/// Default grid step for the sharp set.
pub const DEFAULT_GRID_STEP: f64 = 0.005;

/// First-order bounds on the mis-classification rates:
/// alpha0 <= min_k p_k and alpha1 <= 1 - max_k p_k, intersected with
/// alpha0 + alpha1 < 1.
#[derive(Debug, Clone, Copy)]
pub struct AlphaRectangle {
    pub alpha0_max: f64,
    pub alpha1_max: f64,
}

impl AlphaRectangle {
    pub fn contains(&self, alpha0: f64, alpha1: f64) -> bool {
        (0.0..=self.alpha0_max).contains(&alpha0)
            && (0.0..=self.alpha1_max).contains(&alpha1)
            && alpha0 + alpha1 < 1.0
    }
}

pub fn alpha_rectangle(moments: &MomentSet) -> AlphaRectangle {
    AlphaRectangle {
        alpha0_max: moments.p[0].min(moments.p[1]),
        alpha1_max: 1.0 - moments.p[0].max(moments.p[1]),
    }
}

/// The closed interval between the reduced-form estimand and the IV estimand;
/// the first-order sharp identified set for the effect.
pub fn beta_interval_first_order(moments: &MomentSet) -> Result<(f64, f64)> {
    if moments.cov_tz == 0.0 {
        return Err(Error::NoFirstStage);
    }
    let rf = moments.reduced_form_estimand();
    let iv = moments.cov_yz / moments.cov_tz;
    Ok((rf.min(iv), rf.max(iv)))
}

/// Mixing weights P(T*=1 | T=t, z=k) for one instrument arm.
#[derive(Debug, Clone, Copy)]
pub struct MixingWeights {
    pub r0: f64,
    pub r1: f64,
}

impl MixingWeights {
    pub fn r(&self, t: usize) -> f64 {
        if t == 1 {
            self.r1
        } else {
            self.r0
        }
    }

    /// r1 - r0, the determinant of the conditional-mean system.
    pub fn determinant(&self) -> f64 {
        self.r1 - self.r0
    }
}

/// Latent first stage implied by a candidate pair of mis-classification
/// rates: p*_k = (p_k - alpha0) / (1 - alpha0 - alpha1).
pub fn p_star_implied(alpha0: f64, alpha1: f64, p_k: f64) -> f64 {
    (p_k - alpha0) / (1.0 - alpha0 - alpha1)
}

/// Bayes-rule mixing weights: r1 = (1 - alpha1) p*_k / p_k and
/// r0 = alpha1 p*_k / (1 - p_k).
pub fn mixing_weights(_alpha0: f64, alpha1: f64, p_star_k: f64, p_k: f64) -> Result<MixingWeights> {
    if p_k <= 0.0 || p_k >= 1.0 {
        return Err(Error::DegenerateTreatmentArm { p: p_k });
    }
    Ok(MixingWeights {
        r0: alpha1 * p_star_k / (1.0 - p_k),
        r1: (1.0 - alpha1) * p_star_k / p_k,
    })
}

/// Solves the two-equation system linking the observed conditional means to
/// the latent component means, returning (mu_k^0, mu_k^1):
/// mu_k^1 = [p_k E(y|T=1,z=k) - alpha0 E(y|z=k)] / (p_k - alpha0),
/// mu_k^0 = [(1-p_k) E(y|T=0,z=k) - alpha1 E(y|z=k)] / (1 - p_k - alpha1).
///
/// A singular system (alpha0 = p_k or alpha1 = 1 - p_k) with unequal observed
/// means is inconsistent and errors; with equal means any solution works and
/// the common mean is returned for both components.
pub fn solve_conditional_means(
    alpha0: f64,
    alpha1: f64,
    moments: &MomentSet,
    k: usize,
) -> Result<(f64, f64)> {
    let p_k = moments.p[k];
    let mu1k = moments.cell_means[1][k];
    let mu0k = moments.cell_means[0][k];
    let ey = moments.mean_y_given_z(k);
    let singular = alpha0 == p_k || alpha1 == 1.0 - p_k;
    if singular {
        if (mu0k - mu1k).abs() > 0.0 {
            return Err(Error::InconsistentSystem { k: k as u8 });
        }
        return Ok((mu0k, mu0k));
    }
    let mu_high = (p_k * mu1k - alpha0 * ey) / (p_k - alpha0);
    let mu_low = ((1.0 - p_k) * mu0k - alpha1 * ey) / (1.0 - p_k - alpha1);
    Ok((mu_low, mu_high))
}

/// Feasibility of a candidate (alpha0, alpha1) for one instrument arm.
///
/// Returns false outside the open set alpha0 < p_k < 1 - alpha1. Inside,
/// checks the sandwich on the treated-component mean for both observed
/// treatment arms; components with degenerate mixing weight are unrestricted.
/// Fixing the treated component's mean forces the untreated one through the
/// mixture identity, so one sandwich per (t, k) suffices.
pub fn feasible_at(cell: &CellData, alpha0: f64, alpha1: f64, k: usize, tol: f64) -> bool {
    let m = &cell.moments;
    let p_k = m.p[k];
    if !(alpha0 >= 0.0 && alpha1 >= 0.0 && alpha0 + alpha1 < 1.0) {
        return false;
    }
    if !(alpha0 < p_k && alpha1 < 1.0 - p_k) {
        return false;
    }
    let p_star = p_star_implied(alpha0, alpha1, p_k);
    let Ok(weights) = mixing_weights(alpha0, alpha1, p_star, p_k) else {
        return false;
    };
    let Ok((_, mu_high)) = solve_conditional_means(alpha0, alpha1, m, k) else {
        return false;
    };
    for t in 0..2 {
        let r = weights.r(t).clamp(0.0, 1.0);
        if r <= R_EPS || r >= 1.0 - R_EPS {
            continue;
        }
        let sub = cell.sub_cell(t, k);
        let lower = sub.lower_mean_exact(r);
        let upper = sub.upper_mean_exact(r);
        let slack = tol * (1.0 + mu_high.abs());
        if mu_high < lower - slack || mu_high > upper + slack {
            return false;
        }
    }
    true
}

/// Which instrument arms carry mean restrictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseSplit {
    /// Both arms have distinguishable conditional means: A* = A_0 and A_1.
    BothK,
    /// Only the named arm restricts.
    OneK { k: u8 },
    /// Neither arm restricts: A* is the first-order rectangle.
    NoneK,
}

/// Rule for deciding whether the two conditional means of an arm differ.
#[derive(Debug, Clone, Copy)]
pub enum MeanEqualityTol {
    /// Exact comparison (population-mode inputs).
    Exact,
    /// Fixed absolute threshold.
    Fixed(f64),
    /// Twice the standard error of the difference of sub-cell means.
    TwoStandardErrors,
}

/// Evaluation grid over the first-order rectangle, endpoints included.
#[derive(Debug, Clone)]
pub struct AlphaGrid {
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
}

impl AlphaGrid {
    /// Grid with a fixed step; the rectangle edge is appended when the step
    /// does not land on it.
    pub fn from_step(rect: &AlphaRectangle, h: f64) -> Self {
        Self {
            alpha0: axis_from_step(rect.alpha0_max, h),
            alpha1: axis_from_step(rect.alpha1_max, h),
        }
    }

    /// Grid with a fixed number of points per axis (endpoints included).
    pub fn with_counts(rect: &AlphaRectangle, n0: usize, n1: usize) -> Self {
        Self {
            alpha0: axis_with_count(rect.alpha0_max, n0),
            alpha1: axis_with_count(rect.alpha1_max, n1),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha0.len() * self.alpha1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha0.is_empty() || self.alpha1.is_empty()
    }
}

fn axis_from_step(max: f64, h: f64) -> Vec<f64> {
    assert!(h > 0.0, "grid step must be positive");
    let mut v = Vec::new();
    let mut i = 0usize;
    loop {
        let x = i as f64 * h;
        if x >= max - 1e-12 {
            break;
        }
        v.push(x);
        i += 1;
    }
    v.push(max);
    v
}

fn axis_with_count(max: f64, n: usize) -> Vec<f64> {
    if n <= 1 || max == 0.0 {
        return vec![0.0];
    }
    (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
}

/// The sharp identified set for (alpha0, alpha1) evaluated on a grid,
/// together with the induced interval for the effect.
#[derive(Debug, Clone)]
pub struct SharpSet {
    pub grid: AlphaGrid,
    /// Row-major membership: index `i * alpha1.len() + j` corresponds to
    /// `(alpha0[i], alpha1[j])`.
    pub mask: Vec<bool>,
    pub case: CaseSplit,
    pub rectangle: AlphaRectangle,
    /// Interval hull of theta1 (1 - alpha0 - alpha1) over the mask.
    pub beta_interval: (f64, f64),
    /// Conditional-mean differences per arm, for diagnostics.
    pub mean_gaps: [f64; 2],
}

impl SharpSet {
    pub fn contains_index(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.grid.alpha1.len() + j]
    }

    /// Grid indices of the point nearest to (alpha0, alpha1).
    pub fn nearest_index(&self, alpha0: f64, alpha1: f64) -> (usize, usize) {
        let nearest = |axis: &[f64], x: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(i, _)| i)
                .unwrap()
        };
        (
            nearest(&self.grid.alpha0, alpha0),
            nearest(&self.grid.alpha1, alpha1),
        )
    }

    pub fn feasible_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Classifies each instrument arm by whether its conditional means differ,
/// intersects the per-arm feasibility sets accordingly, and maps the mask
/// through Cov(y,z)/Cov(T,z) * (1 - alpha0 - alpha1) to an interval for the
/// effect.
pub fn sharp_set_grid(
    cell: &CellData,
    h: f64,
    mean_tol: MeanEqualityTol,
    feas_tol: f64,
) -> Result<SharpSet> {
    let m = &cell.moments;
    if m.cov_tz == 0.0 {
        return Err(Error::NoFirstStage);
    }
    let rect = alpha_rectangle(m);
    let grid = AlphaGrid::from_step(&rect, h);
    let mut mean_gaps = [0.0; 2];
    let mut active = [false; 2];
    for k in 0..2 {
        let gap = (m.cell_means[0][k] - m.cell_means[1][k]).abs();
        mean_gaps[k] = gap;
        let threshold = match mean_tol {
            MeanEqualityTol::Exact => 0.0,
            MeanEqualityTol::Fixed(t) => t,
            MeanEqualityTol::TwoStandardErrors => {
                let se = |t: usize| {
                    let c = cell.sub_cell(t, k);
                    c.variance() / c.n_obs() as f64
                };
                2.0 * (se(0) + se(1)).sqrt()
            }
        };
        active[k] = gap > threshold;
    }
    let case = match (active[0], active[1]) {
        (true, true) => CaseSplit::BothK,
        (true, false) => CaseSplit::OneK { k: 0 },
        (false, true) => CaseSplit::OneK { k: 1 },
        (false, false) => CaseSplit::NoneK,
    };
    let theta1 = m.cov_yz / m.cov_tz;
    let mut mask = vec![false; grid.len()];
    let mut beta_lo = f64::INFINITY;
    let mut beta_hi = f64::NEG_INFINITY;
    for (i, &a0) in grid.alpha0.iter().enumerate() {
        for (j, &a1) in grid.alpha1.iter().enumerate() {
            if a0 + a1 >= 1.0 {
                continue;
            }
            let ok = match case {
                CaseSplit::NoneK => true,
                CaseSplit::OneK { k } => feasible_at(cell, a0, a1, k as usize, feas_tol),
                CaseSplit::BothK => {
                    feasible_at(cell, a0, a1, 0, feas_tol) && feasible_at(cell, a0, a1, 1, feas_tol)
                }
            };
            if ok {
                mask[i * grid.alpha1.len() + j] = true;
                let beta = theta1 * (1.0 - a0 - a1);
                beta_lo = beta_lo.min(beta);
                beta_hi = beta_hi.max(beta);
            }
        }
    }
    if !beta_lo.is_finite() {
        return Err(Error::InvariantBreach(
            "sharp set mask is empty, but (0, 0) is always a member".into(),
        ));
    }
    Ok(SharpSet {
        grid,
        mask,
        case,
        rectangle: rect,
        beta_interval: (beta_lo, beta_hi),
        mean_gaps,
    })
}
