//! Sample-based estimation of the reduced form per covariate cell, with
//! structural recovery and delta-method standard errors.
//!
//! The moment conditions stack the three residual rows
//!   (y - theta1 T,  y^2 - 2 theta1 yT + theta2 T,
//!    y^3 - 3 theta1 y^2 T + 3 theta2 yT - theta3 T)
//! less free intercepts kappa, interacted with (1, z). The system is
//! just identified, so the solution coincides with the triangular
//! covariance solve and no weighting matrix enters. The covariance of
//! (theta, kappa) is the standard sandwich G^{-1} S G^{-T} / n with S the
//! outer product of the stacked residual moments at the solution.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::moments::cell_data;
use crate::point_id::{
    solve_theta, structural_map_raw, theta_to_structural, Branch, PointEstimate,
};
use crate::types::{Sample, ThetaVector};

/// |theta1| below this multiple of its standard error triggers the
/// weak-identification path: the rates are reported as unidentified instead
/// of inverting a near-singular map.
pub const WEAK_ID_SE_MULTIPLE: f64 = 3.0;

/// The 3 x 6 coefficient matrix applied to w = (T, y, yT, y^2, y^2 T, y^3).
pub fn psi_matrix(theta: &ThetaVector) -> SMatrix<f64, 3, 6> {
    SMatrix::<f64, 3, 6>::from_row_slice(&[
        -theta.theta1,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        theta.theta2,
        0.0,
        -2.0 * theta.theta1,
        1.0,
        0.0,
        0.0,
        -theta.theta3,
        0.0,
        3.0 * theta.theta2,
        0.0,
        -3.0 * theta.theta1,
        1.0,
    ])
}

fn observable_vector(y: f64, t: f64) -> SVector<f64, 6> {
    let y2 = y * y;
    SVector::<f64, 6>::from_column_slice(&[t, y, y * t, y2, y2 * t, y2 * y])
}

/// Output of the per-cell estimation.
#[derive(Debug, Clone)]
pub struct GmmResult {
    pub cell: u32,
    pub n: usize,
    pub theta: ThetaVector,
    pub kappa: [f64; 3],
    /// Covariance of (theta1..3, kappa1..3).
    pub covariance: SMatrix<f64, 6, 6>,
    pub se_theta: [f64; 3],
    pub structural: PointEstimate,
    /// Delta-method standard errors for (beta, alpha0, alpha1); absent on the
    /// weak-identification path.
    pub se_structural: Option<[f64; 3]>,
    pub weak_identification: bool,
    /// Sample covariance of each fitted residual row with z (zero at the
    /// solution up to rounding).
    pub orthogonality: [f64; 3],
}

/// Estimates one covariate cell: reduced form, intercepts, sandwich
/// covariance, structural recovery and delta-method standard errors.
pub fn estimate_cell(sample: &Sample, cell: u32) -> Result<GmmResult> {
    let cd = cell_data(sample, cell)?;
    let moments = &cd.moments;
    if moments.p[0] == moments.p[1] {
        return Err(Error::NoFirstStage);
    }
    let theta = solve_theta(moments)?;
    let psi = psi_matrix(&theta);

    let rows: Vec<(f64, f64, f64)> = sample
        .observations()
        .iter()
        .filter(|o| o.cell == cell)
        .map(|o| (o.y, o.t as f64, o.z as f64))
        .collect();
    let n = rows.len();
    let nf = n as f64;

    // Intercepts: kappa_j = mean of row j of Psi(theta) w.
    let mut kappa_v = SVector::<f64, 3>::zeros();
    for &(y, t, _) in &rows {
        kappa_v += psi * observable_vector(y, t);
    }
    kappa_v /= nf;

    // Stacked residual moments g_i = (u, u z) with u = Psi w - kappa, their
    // outer product S, and the Jacobian G of the mean moments in
    // (theta, kappa).
    let mut s = SMatrix::<f64, 6, 6>::zeros();
    let mut g = SMatrix::<f64, 6, 6>::zeros();
    let mut mean_uz = SVector::<f64, 3>::zeros();
    let q_hat = rows.iter().map(|&(_, _, z)| z).sum::<f64>() / nf;
    for &(y, t, z) in &rows {
        let u = psi * observable_vector(y, t) - kappa_v;
        let mut gi = SVector::<f64, 6>::zeros();
        for j in 0..3 {
            gi[j] = u[j];
            gi[3 + j] = u[j] * z;
        }
        s += gi * gi.transpose();
        mean_uz += u * z;
        // d u / d theta' for this row.
        let y2 = y * y;
        let d = SMatrix::<f64, 3, 3>::from_row_slice(&[
            -t,
            0.0,
            0.0,
            -2.0 * y * t,
            t,
            0.0,
            -3.0 * y2 * t,
            3.0 * y * t,
            -t,
        ]);
        for a in 0..3 {
            for b in 0..3 {
                g[(a, b)] += d[(a, b)];
                g[(3 + a, b)] += d[(a, b)] * z;
            }
        }
    }
    s /= nf;
    g /= nf;
    mean_uz /= nf;
    for j in 0..3 {
        g[(j, 3 + j)] = -1.0;
        g[(3 + j, 3 + j)] = -q_hat;
    }
    let g_inv = g
        .try_inverse()
        .ok_or_else(|| Error::MomentsInconsistent("singular moment Jacobian".into()))?;
    let covariance = g_inv * s * g_inv.transpose() / nf;

    let se_theta = [
        covariance[(0, 0)].max(0.0).sqrt(),
        covariance[(1, 1)].max(0.0).sqrt(),
        covariance[(2, 2)].max(0.0).sqrt(),
    ];
    // Orthogonality diagnostics: Cov(u_j, z) = E[u_j z] since E[u_j] = 0 by
    // the kappa conditions.
    let orthogonality = [mean_uz[0], mean_uz[1], mean_uz[2]];

    let weak = theta.theta1.abs() < WEAK_ID_SE_MULTIPLE * se_theta[0];
    let (structural, se_structural) = if weak {
        (
            PointEstimate {
                beta: 0.0,
                alpha0: None,
                alpha1: None,
                theta,
                quadratic: None,
                branch: Branch::BetaZero,
            },
            None,
        )
    } else {
        let est = theta_to_structural(&theta, 0.0)?;
        let cov_theta = covariance.fixed_view::<3, 3>(0, 0).into_owned();
        let se = delta_method_se(&cov_theta, &theta)?;
        (est, Some(se))
    };
    Ok(GmmResult {
        cell,
        n,
        theta,
        kappa: [kappa_v[0], kappa_v[1], kappa_v[2]],
        covariance,
        se_theta,
        structural,
        se_structural,
        weak_identification: weak,
        orthogonality,
    })
}

/// Delta-method standard errors for (beta, alpha0, alpha1): the structural
/// map is differentiated by central finite differences with relative step
/// 1e-6 and the covariance of theta is propagated through the gradient.
/// Errors when theta1 sits inside the weak-identification band.
pub fn delta_method_se(cov_theta: &SMatrix<f64, 3, 3>, theta: &ThetaVector) -> Result<[f64; 3]> {
    let se1 = cov_theta[(0, 0)].max(0.0).sqrt();
    if theta.theta1.abs() < WEAK_ID_SE_MULTIPLE * se1 {
        return Err(Error::WeakIdentification {
            theta1: theta.theta1,
            band: WEAK_ID_SE_MULTIPLE * se1,
        });
    }
    let grad = structural_gradient_fd(theta);
    let mut out = [0.0; 3];
    for (p, row) in grad.iter().enumerate() {
        let mut var = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                var += row[a] * cov_theta[(a, b)] * row[b];
            }
        }
        out[p] = var.max(0.0).sqrt();
    }
    Ok(out)
}

/// Central finite differences of theta -> (beta, alpha0, alpha1); rows are
/// the gradients of the three outputs.
pub(crate) fn structural_gradient_fd(theta: &ThetaVector) -> [[f64; 3]; 3] {
    let base = [theta.theta1, theta.theta2, theta.theta3];
    let mut grad = [[0.0; 3]; 3];
    for j in 0..3 {
        let step = 1e-6 * base[j].abs().max(1e-12);
        let mut plus = base;
        plus[j] += step;
        let mut minus = base;
        minus[j] -= step;
        let fp = structural_map_raw(&ThetaVector::new(plus[0], plus[1], plus[2]));
        let fm = structural_map_raw(&ThetaVector::new(minus[0], minus[1], minus[2]));
        let d = [
            (fp.0 - fm.0) / (2.0 * step),
            (fp.1 - fm.1) / (2.0 * step),
            (fp.2 - fm.2) / (2.0 * step),
        ];
        for p in 0..3 {
            grad[p][j] = d[p];
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::presets;
    use crate::moments::{empirical_moments, population_moments};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn psi_rows_select_plain_powers_at_zero() {
        let psi = psi_matrix(&ThetaVector::new(0.0, 0.0, 0.0));
        let w = observable_vector(2.0, 1.0);
        let u = psi * w;
        assert_eq!((u[0], u[1], u[2]), (2.0, 4.0, 8.0));
    }

    #[test]
    fn psi_row_two_unit_coefficients() {
        let psi = psi_matrix(&ThetaVector::new(1.0, 1.0, 1.0));
        let (y, t) = (1.5, 1.0);
        let u = psi * observable_vector(y, t);
        assert!(close(u[1], y * y - 2.0 * y * t + t, 1e-15));
    }

    #[test]
    fn psi_reproduces_wald_relation_on_population_moments() {
        // Row 1: Cov(y - theta1 T, z) = 0 at the population theta.
        let m = population_moments(&presets::c1());
        let theta = solve_theta(&m).unwrap();
        let resid = m.cov_yz - theta.theta1 * m.cov_tz;
        assert!(close(resid, 0.0, 1e-12));
    }

    #[test]
    fn just_identified_equivalence_and_orthogonality() {
        let sample = presets::c1_endog().simulate(30_000, 3);
        let r = estimate_cell(&sample, 0).unwrap();
        let m = empirical_moments(&sample, 0).unwrap();
        let t = solve_theta(&m).unwrap();
        assert!(close(r.theta.theta1, t.theta1, 1e-8));
        assert!(close(r.theta.theta2, t.theta2, 1e-8));
        assert!(close(r.theta.theta3, t.theta3, 1e-8));
        for v in r.orthogonality {
            assert!(v.abs() < 1e-10, "orthogonality residual {v}");
        }
    }

    #[test]
    fn recovery_on_moderate_sample() {
        let sample = presets::c1_endog().simulate(500_000, 3);
        let r = estimate_cell(&sample, 0).unwrap();
        assert!(!r.weak_identification);
        assert!(close(r.structural.beta, 2.0, 0.05));
        assert!(close(r.structural.alpha0.unwrap(), 0.1, 0.05));
        assert!(close(r.structural.alpha1.unwrap(), 0.2, 0.05));
        let se = r.se_structural.unwrap();
        assert!(se.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn null_effect_takes_weak_branch() {
        let sample = presets::c_null().simulate(50_000, 5);
        let r = estimate_cell(&sample, 0).unwrap();
        assert!(r.weak_identification);
        assert_eq!(r.structural.branch, Branch::BetaZero);
        assert!(r.se_structural.is_none());
        // theta1 itself within two of its standard errors of zero.
        assert!(r.theta.theta1.abs() < 2.0 * r.se_theta[0] + 1e-9);
    }

    #[test]
    fn zero_covariance_gives_zero_se() {
        let cov = SMatrix::<f64, 3, 3>::zeros();
        let se = delta_method_se(&cov, &ThetaVector::new(2.857143, 7.346939, 22.623907)).unwrap();
        assert_eq!(se, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn weak_band_blocks_delta_method() {
        let cov = SMatrix::<f64, 3, 3>::identity();
        let err = delta_method_se(&cov, &ThetaVector::new(0.5, 1.0, 1.0));
        assert!(matches!(err, Err(Error::WeakIdentification { .. })));
    }

    #[test]
    fn fd_gradient_matches_analytic_partials() {
        // Analytic partials of the inverse map, derived from
        // A = t2/t1^2, B = t3/t1^3, D = sqrt(3A^2 - 2B):
        //   beta = t1 D, alpha0 = (A - D)/2, alpha1 = 1 - (A + D)/2.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let alpha0 = 0.02 + rng.random::<f64>() * 0.35;
            let alpha1 = 0.02 + rng.random::<f64>() * (0.85 - alpha0);
            let beta =
                (0.5 + rng.random::<f64>() * 3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let s = crate::types::StructuralParams::new(0.0, beta, alpha0, alpha1).unwrap();
            let theta = crate::point_id::theta_from_structural(&s);
            let (t1, t2, t3) = (theta.theta1, theta.theta2, theta.theta3);
            let a = t2 / (t1 * t1);
            let b = t3 / (t1 * t1 * t1);
            let d = (3.0 * a * a - 2.0 * b).sqrt();
            let da = [-2.0 * t2 / t1.powi(3), 1.0 / (t1 * t1), 0.0];
            let db = [-3.0 * t3 / t1.powi(4), 0.0, 1.0 / t1.powi(3)];
            let dd: Vec<f64> = (0..3).map(|j| (3.0 * a * da[j] - db[j]) / d).collect();
            let mut analytic = [[0.0; 3]; 3];
            for j in 0..3 {
                let dt1 = if j == 0 { 1.0 } else { 0.0 };
                analytic[0][j] = dt1 * d + t1 * dd[j];
                analytic[1][j] = (da[j] - dd[j]) / 2.0;
                analytic[2][j] = -(da[j] + dd[j]) / 2.0;
            }
            let fd = structural_gradient_fd(&theta);
            for p in 0..3 {
                for j in 0..3 {
                    let denom = analytic[p][j].abs().max(1e-6);
                    assert!(
                        (fd[p][j] - analytic[p][j]).abs() / denom < 1e-5,
                        "partial ({p},{j}): fd {} vs analytic {}",
                        fd[p][j],
                        analytic[p][j]
                    );
                }
            }
        }
    }

    #[test]
    fn population_moment_injection_recovers_exactly() {
        // Bypassing sampling noise: population moments through the same
        // solve recover the truth to near machine precision.
        let m = population_moments(&presets::c1_endog());
        let t = solve_theta(&m).unwrap();
        let est = theta_to_structural(&t, 1e-10).unwrap();
        assert!(close(est.beta, 2.0, 1e-9));
        assert!(close(est.alpha0.unwrap(), 0.1, 1e-9));
        assert!(close(est.alpha1.unwrap(), 0.2, 1e-9));
    }
}
