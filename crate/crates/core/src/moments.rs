//! Moment computation: empirical and population `MomentSet`s, conditional
//! quantiles, and truncated means.
//!
//! Empirical covariances are computed in one pass over per-sub-cell
//! compensated sums (Neumaier summation) as mean-of-products minus
//! product-of-means; third-moment covariances are cancellation-prone, which
//! is what the compensation is for.
//!
//! [`EmpiricalCell`] stores a weighted, sorted support: unit weights for raw
//! samples, arbitrary masses for discretized instances. The quantile is the
//! left-continuous (type 1) inverse of the weighted CDF. Truncated means come
//! in two forms: the threshold form with ties going to the lower set and a
//! strict `>` upper set, and the mass-exact form that splits the threshold
//! atom so the truncation set carries exactly the requested probability. The
//! mass-exact form is the extreme sub-mixture mean used by the feasibility
//! machinery; the two coincide on continuous data.

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::types::{MomentSet, MomentSource, Sample};

/// Relative mass tolerance used when locating quantile indices, so that a
/// target like 56.000000000000007 atoms out of 59 does not step past the
/// intended atom.
const MASS_EPS: f64 = 1e-9;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sorted, weighted outcome values of one (T=t, z=k) sub-cell.
#[derive(Debug, Clone)]
pub struct EmpiricalCell {
    /// Distinct values, ascending.
    values: Vec<f64>,
    /// Cumulative mass, cum[i] = total mass of values[..=i].
    cum: Vec<f64>,
    /// Cumulative mass-weighted value sums.
    cum_weighted: Vec<f64>,
    total: f64,
    n_obs: usize,
    mean: f64,
    variance: f64,
}

impl EmpiricalCell {
    /// Cell from raw observations (each value carries unit weight; ties are
    /// merged).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParams("empty cell".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut vals = Vec::with_capacity(v.len());
        let mut mass = Vec::with_capacity(v.len());
        for &x in &v {
            if vals.last() == Some(&x) {
                *mass.last_mut().unwrap() += 1.0;
            } else {
                vals.push(x);
                mass.push(1.0);
            }
        }
        Self::build(vals, mass, values.len())
    }

    /// Cell from weighted atoms (a discretized distribution).
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParams("empty cell".into()));
        }
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut mass: Vec<f64> = Vec::with_capacity(sorted.len());
        for &(x, m) in &sorted {
            if m < 0.0 {
                return Err(Error::InvalidParams("negative atom mass".into()));
            }
            if m == 0.0 {
                continue;
            }
            if vals.last() == Some(&x) {
                *mass.last_mut().unwrap() += m;
            } else {
                vals.push(x);
                mass.push(m);
            }
        }
        if vals.is_empty() {
            return Err(Error::InvalidParams("cell has no mass".into()));
        }
        let n = vals.len();
        Self::build(vals, mass, n)
    }

    fn build(values: Vec<f64>, mass: Vec<f64>, n_obs: usize) -> Result<Self> {
        let mut cum = Vec::with_capacity(mass.len());
        let mut cum_weighted = Vec::with_capacity(mass.len());
        let mut acc = Kahan::default();
        let mut acc_w = Kahan::default();
        let mut acc_w2 = Kahan::default();
        for (&m, &x) in mass.iter().zip(&values) {
            acc.add(m);
            acc_w.add(m * x);
            acc_w2.add(m * x * x);
            cum.push(acc.value());
            cum_weighted.push(acc_w.value());
        }
        let total = acc.value();
        let mean = acc_w.value() / total;
        let variance = (acc_w2.value() / total - mean * mean).max(0.0);
        Ok(Self {
            values,
            cum,
            cum_weighted,
            total,
            n_obs,
            mean,
            variance,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn atom_count(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Left-continuous empirical inverse: the smallest value whose cumulative
    /// mass fraction reaches `u`; `u = 0` returns the minimum.
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&u));
        if u <= 0.0 {
            return self.values[0];
        }
        let target = u.min(1.0) * self.total * (1.0 - MASS_EPS);
        let idx = self.cum.partition_point(|&c| c < target);
        self.values[idx.min(self.values.len() - 1)]
    }

    /// Threshold-based truncated means: mean of values `<= q_low` and mean of
    /// values `> q_high`. Empty truncation sets fall back to the cell minimum
    /// and maximum respectively, so feasibility checks degrade gracefully
    /// where one mixture component vanishes.
    pub fn truncated_means(&self, q_low: f64, q_high: f64) -> (f64, f64) {
        let lower = {
            let idx = self.values.partition_point(|&v| v <= q_low);
            if idx == 0 {
                self.min()
            } else {
                self.cum_weighted[idx - 1] / self.cum[idx - 1]
            }
        };
        let upper = {
            let idx = self.values.partition_point(|&v| v <= q_high);
            if idx == self.values.len() {
                self.max()
            } else {
                let mass = self.total - if idx == 0 { 0.0 } else { self.cum[idx - 1] };
                let sum = self.cum_weighted[self.values.len() - 1]
                    - if idx == 0 {
                        0.0
                    } else {
                        self.cum_weighted[idx - 1]
                    };
                sum / mass
            }
        };
        (lower, upper)
    }

    /// Mass-exact lower truncated mean: the mean of the bottom `r` probability
    /// mass, splitting the threshold atom as needed. Requires `0 < r <= 1`.
    pub fn lower_mean_exact(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0 && r <= 1.0 + MASS_EPS);
        let want = (r * self.total).min(self.total);
        let idx = self
            .cum
            .partition_point(|&c| c < want * (1.0 - MASS_EPS))
            .min(self.values.len() - 1);
        let below = if idx == 0 { 0.0 } else { self.cum[idx - 1] };
        let below_sum = if idx == 0 {
            0.0
        } else {
            self.cum_weighted[idx - 1]
        };
        let partial = (want - below).max(0.0);
        (below_sum + partial * self.values[idx]) / want
    }

    /// Mass-exact upper truncated mean: the mean of the top `r` probability
    /// mass. Requires `0 < r <= 1`.
    pub fn upper_mean_exact(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0 && r <= 1.0 + MASS_EPS);
        let want = (r * self.total).min(self.total);
        let keep = self.total - want;
        // First index whose cumulative mass strictly exceeds `keep`: the atom
        // that the top-r set starts in.
        let idx = self
            .cum
            .partition_point(|&c| c <= keep * (1.0 + MASS_EPS))
            .min(self.values.len() - 1);
        let below = if idx == 0 { 0.0 } else { self.cum[idx - 1] };
        let total_sum = self.cum_weighted[self.values.len() - 1];
        let partial = (self.cum[idx] - keep.max(below)).max(0.0);
        let above_sum = total_sum - self.cum_weighted[idx];
        (above_sum + partial * self.values[idx]) / want
    }
}

/// The four sub-cells and the moment set of one covariate cell, prepared for
/// the identification routines.
#[derive(Debug, Clone)]
pub struct CellData {
    pub cell_id: u32,
    pub n: usize,
    pub moments: MomentSet,
    cells: [[EmpiricalCell; 2]; 2],
}

impl CellData {
    pub fn sub_cell(&self, t: usize, k: usize) -> &EmpiricalCell {
        &self.cells[t][k]
    }

    /// Builds cell data from explicit sub-cells and moments (used for
    /// discretized instances).
    pub fn from_parts(
        cell_id: u32,
        n: usize,
        moments: MomentSet,
        cells: [[EmpiricalCell; 2]; 2],
    ) -> Self {
        Self {
            cell_id,
            n,
            moments,
            cells,
        }
    }
}

struct CellAggregates {
    count: [[usize; 2]; 2],
    moments: MomentSet,
    ys: [[Vec<f64>; 2]; 2],
}

fn aggregate_cell(sample: &Sample, cell: u32, keep_values: bool) -> Result<CellAggregates> {
    if !sample.cells().contains(&cell) {
        return Err(Error::UnknownCell { cell });
    }
    // One pass: per-(t,k) compensated sums of y, y^2, y^3 and counts.
    let mut count = [[0usize; 2]; 2];
    let mut s1 = [[Kahan::default(); 2]; 2];
    let mut s2 = [[Kahan::default(); 2]; 2];
    let mut s3 = [[Kahan::default(); 2]; 2];
    let mut ys: [[Vec<f64>; 2]; 2] = Default::default();
    for o in sample.observations() {
        if o.cell != cell {
            continue;
        }
        let (t, k) = (o.t as usize, o.z as usize);
        count[t][k] += 1;
        s1[t][k].add(o.y);
        s2[t][k].add(o.y * o.y);
        s3[t][k].add(o.y * o.y * o.y);
        if keep_values {
            ys[t][k].push(o.y);
        }
    }
    let n_z = [count[0][0] + count[1][0], count[0][1] + count[1][1]];
    if n_z[0] == 0 || n_z[1] == 0 {
        return Err(Error::DegenerateInstrument { cell });
    }
    let nf = (n_z[0] + n_z[1]) as f64;
    let sum = |s: &[[Kahan; 2]; 2], t: usize| s[t][0].value() + s[t][1].value();
    let sum_k = |s: &[[Kahan; 2]; 2], k: usize| s[0][k].value() + s[1][k].value();

    let q = n_z[1] as f64 / nf;
    let p = [
        count[1][0] as f64 / n_z[0] as f64,
        count[1][1] as f64 / n_z[1] as f64,
    ];
    // mean-of-products minus product-of-means; products with z only involve
    // the z=1 sub-cells.
    let mean_t = (count[1][0] + count[1][1]) as f64 / nf;
    let cov = |prod_mean: f64, mean_w: f64| prod_mean - mean_w * q;
    let cov_tz = cov(count[1][1] as f64 / nf, mean_t);
    let cov_yz = cov(sum_k(&s1, 1) / nf, (sum(&s1, 0) + sum(&s1, 1)) / nf);
    let cov_y2z = cov(sum_k(&s2, 1) / nf, (sum(&s2, 0) + sum(&s2, 1)) / nf);
    let cov_y3z = cov(sum_k(&s3, 1) / nf, (sum(&s3, 0) + sum(&s3, 1)) / nf);
    let cov_tyz = cov(s1[1][1].value() / nf, sum(&s1, 1) / nf);
    let cov_ty2z = cov(s2[1][1].value() / nf, sum(&s2, 1) / nf);
    // Empty sub-cells leave the corresponding conditional mean undefined.
    let mut cell_means = [[f64::NAN; 2]; 2];
    for t in 0..2 {
        for k in 0..2 {
            if count[t][k] > 0 {
                cell_means[t][k] = s1[t][k].value() / count[t][k] as f64;
            }
        }
    }
    let moments = MomentSet {
        q,
        p,
        cov_tz,
        cov_yz,
        cov_y2z,
        cov_y3z,
        cov_tyz,
        cov_ty2z,
        cell_means,
        source: MomentSource::Empirical,
    };
    Ok(CellAggregates { count, moments, ys })
}

/// Extracts one covariate cell from a sample: sorted sub-cells plus the full
/// empirical moment set. All four (t, k) sub-cells must be non-empty; the
/// error names the first that is not.
pub fn cell_data(sample: &Sample, cell: u32) -> Result<CellData> {
    let agg = aggregate_cell(sample, cell, true)?;
    for t in 0..2 {
        for k in 0..2 {
            if agg.count[t][k] == 0 {
                return Err(Error::EmptySubCell {
                    cell,
                    t: t as u8,
                    z: k as u8,
                });
            }
        }
    }
    let n = agg.count.iter().flatten().sum();
    let cells = [
        [
            EmpiricalCell::from_values(&agg.ys[0][0])?,
            EmpiricalCell::from_values(&agg.ys[0][1])?,
        ],
        [
            EmpiricalCell::from_values(&agg.ys[1][0])?,
            EmpiricalCell::from_values(&agg.ys[1][1])?,
        ],
    ];
    Ok(CellData {
        cell_id: cell,
        n,
        moments: agg.moments,
        cells,
    })
}

/// Empirical moment set of one covariate cell. Requires both instrument arms;
/// an empty (t, k) sub-cell is tolerated (its conditional mean is NaN), which
/// covers perfect-first-stage samples where p_k sits at 0 or 1.
pub fn empirical_moments(sample: &Sample, cell: u32) -> Result<MomentSet> {
    aggregate_cell(sample, cell, false).map(|a| a.moments)
}

/// Exact population moments of a data-generating process, computed in closed
/// form from its per-cell error laws (with jitter corrections).
pub fn population_moments(spec: &DgpSpec) -> MomentSet {
    let q = spec.q;
    let p = [spec.p_observed(0), spec.p_observed(1)];
    // E[y^j | z=k] and E[T y^j | z=k] by conditioning on T*; T is a coin flip
    // independent of eps given (T*, z).
    let flip = [spec.structural.alpha0, 1.0 - spec.structural.alpha1];
    let y_given_z = |j: u32, k: usize| -> f64 {
        let w = [1.0 - spec.p_star[k], spec.p_star[k]];
        (0..2).map(|t| w[t] * spec.y_raw_moment(t, k, j)).sum()
    };
    let ty_given_z = |j: u32, k: usize| -> f64 {
        let w = [1.0 - spec.p_star[k], spec.p_star[k]];
        (0..2)
            .map(|t| w[t] * flip[t] * spec.y_raw_moment(t, k, j))
            .sum()
    };
    let cov = |f: &dyn Fn(usize) -> f64| q * (1.0 - q) * (f(1) - f(0));
    let mut cell_means = [[0.0; 2]; 2];
    for k in 0..2 {
        let e_ty = ty_given_z(1, k);
        cell_means[1][k] = e_ty / p[k];
        cell_means[0][k] = (y_given_z(1, k) - e_ty) / (1.0 - p[k]);
    }
    MomentSet {
        q,
        p,
        cov_tz: cov(&|k| p[k]),
        cov_yz: cov(&|k| y_given_z(1, k)),
        cov_y2z: cov(&|k| y_given_z(2, k)),
        cov_y3z: cov(&|k| y_given_z(3, k)),
        cov_tyz: cov(&|k| ty_given_z(1, k)),
        cov_ty2z: cov(&|k| ty_given_z(2, k)),
        cell_means,
        source: MomentSource::Population,
    }
}
