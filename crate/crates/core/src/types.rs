//! Shared domain data model.
//!
//! Everything downstream (moment computation, bounds, point identification,
//! the GMM layer) works off these types. Binary fields are stored as 0/1
//! integers so moment arithmetic stays direct. All types are immutable after
//! construction.

use crate::error::{Error, Result};

/// A single observed row: outcome, observed binary treatment, binary
/// instrument, and a discrete covariate-cell id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub t: u8,
    pub z: u8,
    pub cell: u32,
}

/// An ordered collection of observations.
///
/// Construction validates that `t` and `z` are binary and `y` is finite.
/// Per-cell sub-cell structure is checked lazily by the analysis routines
/// (and reported by [`validate_sample`]).
#[derive(Debug, Clone)]
pub struct Sample {
    obs: Vec<Observation>,
    cells: Vec<u32>,
}

impl Sample {
    pub fn new(obs: Vec<Observation>) -> Result<Self> {
        for (i, o) in obs.iter().enumerate() {
            if o.t > 1 {
                return Err(Error::InvalidParams(format!(
                    "t not binary at row {}: {}",
                    i, o.t
                )));
            }
            if o.z > 1 {
                return Err(Error::InvalidParams(format!(
                    "z not binary at row {}: {}",
                    i, o.z
                )));
            }
            if !o.y.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "y not finite at row {}: {}",
                    i, o.y
                )));
            }
        }
        let mut cells: Vec<u32> = obs.iter().map(|o| o.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        Ok(Self { obs, cells })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    /// Distinct cell ids present, ascending.
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    /// Counts of the four (T=t, z=k) sub-cells of one covariate cell,
    /// indexed `[t][k]`.
    pub fn subcell_counts(&self, cell: u32) -> [[usize; 2]; 2] {
        let mut n = [[0usize; 2]; 2];
        for o in &self.obs {
            if o.cell == cell {
                n[o.t as usize][o.z as usize] += 1;
            }
        }
        n
    }
}

/// Diagnostic for one covariate cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub cell: u32,
    pub n: usize,
    /// Sub-cell counts indexed `[t][k]`.
    pub counts: [[usize; 2]; 2],
    /// Observed first-stage shares P(T=1 | z=k), when both arms are present.
    pub p_hat: Option<[f64; 2]>,
    /// z takes a single value within the cell.
    pub instrument_degenerate: bool,
    /// p_hat is identical across the two instrument arms (relevance proxy).
    pub no_first_stage: bool,
    /// (t, k) pairs with zero observations.
    pub empty_subcells: Vec<(u8, u8)>,
}

impl CellReport {
    pub fn passes(&self) -> bool {
        !self.instrument_degenerate && !self.no_first_stage && self.empty_subcells.is_empty()
    }
}

/// Validity report over all cells of a sample. Diagnostic only: nothing here
/// is an error, but analysis routines will refuse cells that fail.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub cells: Vec<CellReport>,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(CellReport::passes)
    }
}

/// Per-cell diagnostics: sub-cell counts, instrument degeneracy, and the
/// testable first-stage relevance proxy (p_hat varying across z).
pub fn validate_sample(sample: &Sample) -> ValidityReport {
    let cells = sample
        .cells()
        .iter()
        .map(|&cell| {
            let counts = sample.subcell_counts(cell);
            let n_z = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
            let n = n_z[0] + n_z[1];
            let instrument_degenerate = n_z[0] == 0 || n_z[1] == 0;
            let mut empty_subcells = Vec::new();
            for t in 0..2u8 {
                for k in 0..2u8 {
                    if counts[t as usize][k as usize] == 0 {
                        empty_subcells.push((t, k));
                    }
                }
            }
            let p_hat = if instrument_degenerate {
                None
            } else {
                Some([
                    counts[1][0] as f64 / n_z[0] as f64,
                    counts[1][1] as f64 / n_z[1] as f64,
                ])
            };
            // Exact integer comparison of n_{1,0}/n_{z0} vs n_{1,1}/n_{z1}.
            let no_first_stage = !instrument_degenerate
                && counts[1][0] as u128 * n_z[1] as u128 == counts[1][1] as u128 * n_z[0] as u128;
            CellReport {
                cell,
                n,
                counts,
                p_hat,
                instrument_degenerate,
                no_first_stage,
                empty_subcells,
            }
        })
        .collect();
    ValidityReport { cells }
}

/// Latent structural truth for one covariate cell: intercept, effect, and the
/// two mis-classification rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralParams {
    pub c: f64,
    pub beta: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl StructuralParams {
    /// Requires alpha0, alpha1 in [0, 1) and alpha0 + alpha1 < 1.
    pub fn new(c: f64, beta: f64, alpha0: f64, alpha1: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) || !(0.0..1.0).contains(&alpha1) {
            return Err(Error::InvalidParams(format!(
                "mis-classification rates must lie in [0,1): alpha0 = {alpha0}, alpha1 = {alpha1}"
            )));
        }
        if alpha0 + alpha1 >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "alpha0 + alpha1 must be < 1, got {}",
                alpha0 + alpha1
            )));
        }
        if !c.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidParams("c and beta must be finite".into()));
        }
        Ok(Self {
            c,
            beta,
            alpha0,
            alpha1,
        })
    }
}

/// Whether a `MomentSet` came from sample frequencies or from exact
/// evaluation of a known data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    Empirical,
    Population,
}

/// Everything observable about one covariate cell.
///
/// Covariances with the instrument are stored for T, y, y^2, y^3, Ty and
/// Ty^2; `cell_means[t][k]` holds E[y | T=t, z=k].
#[derive(Debug, Clone, Copy)]
pub struct MomentSet {
    /// P(z = 1), in (0, 1).
    pub q: f64,
    /// Observed first stage P(T=1 | z=k), indexed by k.
    pub p: [f64; 2],
    /// Cov(T, z).
    pub cov_tz: f64,
    /// Cov(y^j, z) for j = 1, 2, 3.
    pub cov_yz: f64,
    pub cov_y2z: f64,
    pub cov_y3z: f64,
    /// Cov(T y^j, z) for j = 1, 2.
    pub cov_tyz: f64,
    pub cov_ty2z: f64,
    /// E[y | T=t, z=k], indexed `[t][k]`.
    pub cell_means: [[f64; 2]; 2],
    pub source: MomentSource,
}

impl MomentSet {
    /// E[y | z=k], recovered from the conditional means and the first stage.
    pub fn mean_y_given_z(&self, k: usize) -> f64 {
        self.p[k] * self.cell_means[1][k] + (1.0 - self.p[k]) * self.cell_means[0][k]
    }

    /// Reduced-form estimand Cov(y,z) / Var(z).
    pub fn reduced_form_estimand(&self) -> f64 {
        self.cov_yz / (self.q * (1.0 - self.q))
    }

    /// IV (Wald) estimand Cov(y,z) / Cov(T,z).
    pub fn iv_estimand(&self) -> Result<f64> {
        if self.cov_tz == 0.0 {
            return Err(Error::NoFirstStage);
        }
        Ok(self.cov_yz / self.cov_tz)
    }
}

/// Reduced-form parameter vector linking the observable covariances to the
/// structural parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaVector {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl ThetaVector {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3,
        }
    }

    /// 3*theta2^2 - 2*theta1*theta3, which equals theta1^4 (1-a0-a1)^2 for
    /// any theta induced by valid structural parameters (so it is
    /// non-negative whenever the model holds).
    pub fn gram_discriminant(&self) -> f64 {
        3.0 * self.theta2 * self.theta2 - 2.0 * self.theta1 * self.theta3
    }
}

/// Intermediate quantities of the structural-recovery quadratic:
/// A = theta2/theta1^2, B = theta3/theta1^3, discriminant 3A^2 - 2B, and the
/// two roots of (A^2 - B) + 2Ar - 2r^2 = 0.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticSummary {
    pub a: f64,
    pub b: f64,
    pub discriminant: f64,
    pub root_small: f64,
    pub root_large: f64,
}
