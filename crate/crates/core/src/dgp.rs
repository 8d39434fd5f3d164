//! Synthetic data-generating processes.
//!
//! A [`DgpSpec`] fixes a binary instrument, a latent first stage, structural
//! parameters, and per-(T*, z) error distributions built to satisfy, exactly:
//! mean validity of the instrument, constant conditional second and third raw
//! error moments across instrument arms, and controllable endogeneity
//! E[eps | T*, z]. Mis-classification is applied as an independent coin flip
//! given T*, which certifies the non-differential conditions structurally.
//!
//! Each error distribution is a three-point discrete law matched to its first
//! three raw moments. Continuous mode adds independent uniform jitter on
//! [-h, h]: this shifts every conditional second raw moment by the same
//! h^2/3 and leaves E[eps^3 | z] unchanged because E[eps | z] = 0, so the
//! constraint families survive jitter exactly while every conditional
//! distribution of y becomes piecewise uniform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Observation, Sample, StructuralParams};

/// Name of the generator used by [`DgpSpec::simulate`]; recorded in output
/// metadata so runs can be replayed bit-exactly.
pub const PRNG_ALGORITHM: &str = "chacha8";

/// Spread factor of the three-point solver: the product of the distances from
/// the mean to the outer support points is `SPREAD * variance`, which leaves
/// 1 - 1/SPREAD of the probability on the central point.
const SPREAD: f64 = 4.0;

/// A discrete distribution on at most three support points, used as the
/// conditional error law of one (T*, z) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreePoint {
    /// (support point, probability), sorted by support point, probabilities
    /// positive and summing to one.
    atoms: Vec<(f64, f64)>,
}

impl ThreePoint {
    /// Point mass at `x`.
    pub fn degenerate(x: f64) -> Self {
        Self {
            atoms: vec![(x, 1.0)],
        }
    }

    /// Solves for a three-point distribution with raw moments
    /// (m1, m2, m3). Requires the Hankel condition m2 - m1^2 >= 0; the
    /// degenerate case m2 = m1^2 additionally needs m3 = m1^3.
    pub fn solve(m1: f64, m2: f64, m3: f64, t: u8, k: u8) -> Result<Self> {
        let var = m2 - m1 * m1;
        if var < 0.0 {
            return Err(Error::InfeasibleMomentTriple {
                t,
                k,
                reason: format!(
                    "Hankel condition violated: second raw moment {m2} below squared mean {}",
                    m1 * m1
                ),
            });
        }
        let mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
        if var == 0.0 {
            if mu3.abs() > 1e-12 {
                return Err(Error::InfeasibleMomentTriple {
                    t,
                    k,
                    reason: "degenerate variance with nonzero third central moment".into(),
                });
            }
            return Ok(Self::degenerate(m1));
        }
        // Support {m1-u, m1, m1+v} with v - u = mu3/var and u v = SPREAD*var.
        let d = mu3 / var;
        let disc = (d * d + 4.0 * SPREAD * var).sqrt();
        // Subtraction-free branch for positive skew.
        let u = if d > 0.0 {
            2.0 * SPREAD * var / (disc + d)
        } else {
            (disc - d) / 2.0
        };
        let v = u + d;
        let w = var / (u + v);
        let lam1 = w / u;
        let lam3 = w / v;
        let lam2 = 1.0 - lam1 - lam3;
        if lam1 <= 0.0 || lam3 <= 0.0 || lam2 < -1e-12 {
            return Err(Error::InfeasibleMomentTriple {
                t,
                k,
                reason: format!("no valid probability weights: ({lam1}, {lam2}, {lam3})"),
            });
        }
        Ok(Self {
            atoms: vec![(m1 - u, lam1), (m1, lam2.max(0.0)), (m1 + v, lam3)],
        })
    }

    /// Direct construction from atoms; validates only that this is a
    /// probability distribution (moment matching is `verify_assumptions`'
    /// job, so deliberately broken laws can be expressed).
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() > 3 {
            return Err(Error::InvalidParams(
                "three-point law needs 1..=3 atoms".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|&(_, p)| p).sum();
        if atoms.iter().any(|&(x, p)| p < 0.0 || !x.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(
                "atom probabilities must be non-negative and sum to one".into(),
            ));
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// E[X^j] for j = 0..=3, exact.
    pub fn raw_moment(&self, j: u32) -> f64 {
        self.atoms.iter().map(|&(x, p)| p * x.powi(j as i32)).sum()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.atoms.len() == 1 {
            return self.atoms[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(x, p) in &self.atoms {
            acc += p;
            if u < acc {
                return x;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }
}

/// A fully specified per-cell data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    /// P(z = 1).
    pub q: f64,
    /// Latent first stage P(T* = 1 | z=k), indexed by k.
    pub p_star: [f64; 2],
    pub structural: StructuralParams,
    /// Endogeneity levels E[eps | T*=t, z=k], indexed `[t][k]`.
    pub endogeneity: [[f64; 2]; 2],
    /// Common conditional second raw moment E[eps^2 | T*, z] of the discrete part.
    pub second_raw: f64,
    /// Common conditional third raw moment E[eps^3 | T*, z] of the discrete part.
    pub third_raw: f64,
    /// Uniform jitter half-width; zero in discrete mode.
    pub jitter: f64,
    /// Error law of each (T*=t, z=k) cell, indexed `[t][k]`.
    dists: [[ThreePoint; 2]; 2],
}

/// Builds a spec whose constraint families hold by construction.
///
/// The caller supplies the treated-arm endogeneity levels m_{1k}; the
/// untreated levels are derived as m_{0k} = -m_{1k} p*_k / (1 - p*_k) so that
/// E[eps | z=k] = 0 for both k. Each cell's law matches
/// (m_{tk}, second_raw, third_raw) exactly.
#[allow(clippy::too_many_arguments)]
pub fn build_spec(
    q: f64,
    p_star_0: f64,
    p_star_1: f64,
    structural: StructuralParams,
    m_treated: [f64; 2],
    second_raw: f64,
    third_raw: f64,
    jitter: f64,
) -> Result<DgpSpec> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::InvalidParams(format!("q must be in (0,1): {q}")));
    }
    for (k, &ps) in [p_star_0, p_star_1].iter().enumerate() {
        if !(0.0 < ps && ps < 1.0) {
            return Err(Error::InvalidParams(format!(
                "p_star_{k} must be in (0,1): {ps}"
            )));
        }
    }
    if p_star_0 == p_star_1 {
        return Err(Error::InvalidParams(
            "latent first stage must vary with z (p_star_0 != p_star_1)".into(),
        ));
    }
    if jitter < 0.0 {
        return Err(Error::InvalidParams("jitter must be >= 0".into()));
    }
    let p_star = [p_star_0, p_star_1];
    let mut endogeneity = [[0.0; 2]; 2];
    for k in 0..2 {
        endogeneity[1][k] = m_treated[k];
        endogeneity[0][k] = -m_treated[k] * p_star[k] / (1.0 - p_star[k]);
    }
    let build = |t: usize, k: usize| -> Result<ThreePoint> {
        let m = endogeneity[t][k];
        if second_raw < m * m {
            return Err(Error::InfeasibleMomentTriple {
                t: t as u8,
                k: k as u8,
                reason: format!(
                    "second raw moment {second_raw} below squared mean {}",
                    m * m
                ),
            });
        }
        if second_raw == 0.0 && third_raw == 0.0 && m == 0.0 {
            return Ok(ThreePoint::degenerate(0.0));
        }
        ThreePoint::solve(m, second_raw, third_raw, t as u8, k as u8)
    };
    let dists = [[build(0, 0)?, build(0, 1)?], [build(1, 0)?, build(1, 1)?]];
    let spec = DgpSpec {
        q,
        p_star,
        structural,
        endogeneity,
        second_raw,
        third_raw,
        jitter,
        dists,
    };
    let report = spec.verify_assumptions();
    let scale = 1.0 + second_raw.abs() + third_raw.abs();
    if report.max_violation() > 1e-10 * scale {
        return Err(Error::InvariantBreach(format!(
            "constructed spec violates its own constraints by {}",
            report.max_violation()
        )));
    }
    Ok(spec)
}

impl DgpSpec {
    /// Direct construction with explicit per-cell laws. The laws are
    /// validated as distributions but not re-solved, so a hand-broken spec
    /// can be expressed and then diagnosed with [`DgpSpec::verify_assumptions`].
    #[allow(clippy::too_many_arguments)]
    pub fn with_distributions(
        q: f64,
        p_star: [f64; 2],
        structural: StructuralParams,
        endogeneity: [[f64; 2]; 2],
        second_raw: f64,
        third_raw: f64,
        jitter: f64,
        dists: [[ThreePoint; 2]; 2],
    ) -> Result<Self> {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::InvalidParams(format!("q must be in (0,1): {q}")));
        }
        for &ps in &p_star {
            if !(0.0 < ps && ps < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "p_star must be in (0,1): {ps}"
                )));
            }
        }
        Ok(Self {
            q,
            p_star,
            structural,
            endogeneity,
            second_raw,
            third_raw,
            jitter,
            dists,
        })
    }

    pub fn dist(&self, t: usize, k: usize) -> &ThreePoint {
        &self.dists[t][k]
    }

    /// Replaces one cell's error law (fault-injection hook for diagnostics).
    pub fn set_dist(&mut self, t: usize, k: usize, dist: ThreePoint) {
        self.dists[t][k] = dist;
    }

    /// Observed first stage p_k = alpha0 (1 - p*_k) + (1 - alpha1) p*_k.
    pub fn p_observed(&self, k: usize) -> f64 {
        let s = &self.structural;
        s.alpha0 * (1.0 - self.p_star[k]) + (1.0 - s.alpha1) * self.p_star[k]
    }

    /// True mixing weight P(T* = 1 | T=t, z=k).
    pub fn mixing_truth(&self, t: usize, k: usize) -> f64 {
        let s = &self.structural;
        let pk = self.p_observed(k);
        if t == 1 {
            (1.0 - s.alpha1) * self.p_star[k] / pk
        } else {
            s.alpha1 * self.p_star[k] / (1.0 - pk)
        }
    }

    /// E[eps^j | T*=t, z=k] for j = 1..=3, jitter included.
    pub fn eps_raw_moment(&self, t: usize, k: usize, j: u32) -> f64 {
        let d = &self.dists[t][k];
        let h2 = self.jitter * self.jitter / 3.0;
        match j {
            1 => d.raw_moment(1),
            2 => d.raw_moment(2) + h2,
            3 => d.raw_moment(3) + 3.0 * d.raw_moment(1) * h2,
            _ => panic!("raw moment order out of range"),
        }
    }

    /// E[y^j | T*=t, z=k] for j = 1..=3.
    pub fn y_raw_moment(&self, t: usize, k: usize, j: u32) -> f64 {
        let a = self.structural.c + self.structural.beta * t as f64;
        let e1 = self.eps_raw_moment(t, k, 1);
        match j {
            1 => a + e1,
            2 => a * a + 2.0 * a * e1 + self.eps_raw_moment(t, k, 2),
            3 => {
                a * a * a
                    + 3.0 * a * a * e1
                    + 3.0 * a * self.eps_raw_moment(t, k, 2)
                    + self.eps_raw_moment(t, k, 3)
            }
            _ => panic!("raw moment order out of range"),
        }
    }

    /// The conditional distribution of y given (T=t_obs, z=k) as weighted
    /// atoms of the discrete part (each smeared by +/- jitter in continuous
    /// mode). Masses sum to one.
    pub fn cell_mixture(&self, t_obs: usize, k: usize) -> Vec<(f64, f64)> {
        let r = self.mixing_truth(t_obs, k);
        let mut out = Vec::new();
        for (t_star, weight) in [(1usize, r), (0usize, 1.0 - r)] {
            if weight == 0.0 {
                continue;
            }
            let shift = self.structural.c + self.structural.beta * t_star as f64;
            for &(x, p) in self.dists[t_star][k].atoms() {
                out.push((x + shift, weight * p));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Draws a sample of `n` observations (cell id 0). Deterministic given
    /// the seed; the generator is ChaCha8 seeded with `seed`.
    pub fn simulate(&self, n: usize, seed: u64) -> Sample {
        self.simulate_with_latents(n, seed).0
    }

    /// Like [`DgpSpec::simulate`], additionally returning the latent
    /// (T*, eps) draws row by row, for oracle cross-checks against
    /// quantities the estimators can only infer.
    pub fn simulate_with_latents(&self, n: usize, seed: u64) -> (Sample, Vec<LatentDraw>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &self.structural;
        let mut obs = Vec::with_capacity(n);
        let mut latents = Vec::with_capacity(n);
        for _ in 0..n {
            let z = u8::from(rng.random::<f64>() < self.q);
            let t_star = u8::from(rng.random::<f64>() < self.p_star[z as usize]);
            let mut eps = self.dists[t_star as usize][z as usize].sample(&mut rng);
            if self.jitter > 0.0 {
                eps += rng.random_range(-self.jitter..self.jitter);
            }
            // The flip draw is independent of eps and z given T*, which is
            // what certifies the non-differential conditions.
            let flip: f64 = rng.random();
            let t = if t_star == 1 {
                u8::from(flip >= s.alpha1)
            } else {
                u8::from(flip < s.alpha0)
            };
            let y = s.c + s.beta * t_star as f64 + eps;
            obs.push(Observation { y, t, z, cell: 0 });
            latents.push(LatentDraw { t_star, eps });
        }
        (
            Sample::new(obs).expect("simulated rows are valid by construction"),
            latents,
        )
    }

    /// Evaluates every constraint family analytically from the stored laws.
    pub fn verify_assumptions(&self) -> AssumptionReport {
        let mut mean_violation: f64 = 0.0;
        let mut second_violation: f64 = 0.0;
        let mut third_violation: f64 = 0.0;
        let mut second_by_z = [0.0; 2];
        let mut third_by_z = [0.0; 2];
        for k in 0..2 {
            let w = [1.0 - self.p_star[k], self.p_star[k]];
            let e1: f64 = (0..2).map(|t| w[t] * self.eps_raw_moment(t, k, 1)).sum();
            mean_violation = mean_violation.max(e1.abs());
            second_by_z[k] = (0..2).map(|t| w[t] * self.eps_raw_moment(t, k, 2)).sum();
            third_by_z[k] = (0..2).map(|t| w[t] * self.eps_raw_moment(t, k, 3)).sum();
        }
        second_violation = second_violation.max((second_by_z[1] - second_by_z[0]).abs());
        third_violation = third_violation.max((third_by_z[1] - third_by_z[0]).abs());
        let endogeneity = self
            .endogeneity
            .iter()
            .flatten()
            .fold(0.0f64, |a, m| a.max(m.abs()));
        // E[eps | T*, z] = E[eps | T*] requires the level not to vary with z.
        let error_mean_constant_in_z = (0..2).all(|t| {
            (self.dists[t][0].raw_moment(1) - self.dists[t][1].raw_moment(1)).abs() < 1e-12
        });
        AssumptionReport {
            mean_violation,
            second_violation,
            third_violation,
            second_by_z,
            third_by_z,
            endogeneity,
            error_mean_constant_in_z,
        }
    }
}

/// Latent values behind one simulated observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub t_star: u8,
    pub eps: f64,
}

/// Analytic constraint-violation report for a [`DgpSpec`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// max_k |E[eps | z=k]|.
    pub mean_violation: f64,
    /// |E[eps^2 | z=1] - E[eps^2 | z=0]|.
    pub second_violation: f64,
    /// |E[eps^3 | z=1] - E[eps^3 | z=0]|.
    pub third_violation: f64,
    pub second_by_z: [f64; 2],
    pub third_by_z: [f64; 2],
    /// max_{t,k} |E[eps | T*=t, z=k]|.
    pub endogeneity: f64,
    /// Whether E[eps | T*, z] is constant in z. With a nonzero first stage
    /// and instrument validity, this restriction can only hold under
    /// exogeneity (see `oracle::incompatibility_check`).
    pub error_mean_constant_in_z: bool,
}

impl AssumptionReport {
    pub fn max_violation(&self) -> f64 {
        self.mean_violation
            .max(self.second_violation)
            .max(self.third_violation)
    }
}

/// Canonical configurations used across the test suite and shipped with the
/// CLI.
pub mod presets {
    use super::*;

    /// Exogenous cell with degenerate errors (eps = 0): q = 0.5,
    /// p* = (0.3, 0.7), (c, beta, alpha0, alpha1) = (1, 2, 0.1, 0.2).
    pub fn c1() -> DgpSpec {
        build_spec(
            0.5,
            0.3,
            0.7,
            StructuralParams::new(1.0, 2.0, 0.1, 0.2).unwrap(),
            [0.0, 0.0],
            0.0,
            0.0,
            0.0,
        )
        .unwrap()
    }

    /// C1 with uniform jitter, making every conditional outcome distribution
    /// continuous.
    pub fn c1_continuous() -> DgpSpec {
        build_spec(
            0.5,
            0.3,
            0.7,
            StructuralParams::new(1.0, 2.0, 0.1, 0.2).unwrap(),
            [0.0, 0.0],
            0.0,
            0.0,
            0.5,
        )
        .unwrap()
    }

    /// Endogenous variant: treated-arm error means 0.5 in both instrument
    /// arms, E[eps^2 | .] = 2, E[eps^3 | .] = 0.5.
    pub fn c1_endog() -> DgpSpec {
        build_spec(
            0.5,
            0.3,
            0.7,
            StructuralParams::new(1.0, 2.0, 0.1, 0.2).unwrap(),
            [0.5, 0.5],
            2.0,
            0.5,
            0.0,
        )
        .unwrap()
    }

    /// Continuous-mode endogenous variant (jitter half-width 1).
    pub fn c1_endog_continuous() -> DgpSpec {
        build_spec(
            0.5,
            0.3,
            0.7,
            StructuralParams::new(1.0, 2.0, 0.1, 0.2).unwrap(),
            [0.5, 0.5],
            2.0,
            0.5,
            1.0,
        )
        .unwrap()
    }

    /// Null-effect configuration (beta = 0) with mild endogeneity.
    pub fn c_null() -> DgpSpec {
        build_spec(
            0.5,
            0.3,
            0.7,
            StructuralParams::new(1.0, 0.0, 0.1, 0.2).unwrap(),
            [0.3, 0.3],
            1.5,
            0.0,
            0.0,
        )
        .unwrap()
    }
}
