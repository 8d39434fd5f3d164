//! Point identification: the triangular reduced-form system and the
//! closed-form structural recovery.
//!
//! The observable covariances satisfy
//!   Cov(y,z)   = Cov(T,z) theta1
//!   Cov(y^2,z) = 2 Cov(Ty,z) theta1 - Cov(T,z) theta2
//!   Cov(y^3,z) = 3 Cov(Ty^2,z) theta1 - 3 Cov(Ty,z) theta2 + Cov(T,z) theta3
//! a linear system in theta with determinant -Cov(T,z)^3, solved by back
//! substitution. With A = theta2/theta1^2 and B = theta3/theta1^3, the
//! mis-classification rates are the roots of (A^2 - B) + 2Ar - 2r^2 = 0,
//! namely r = (A +/- sqrt(3A^2 - 2B)) / 2: the smaller root is alpha0 and the
//! larger is 1 - alpha1. The effect follows from
//! beta = sign(theta1) sqrt(3 (theta2/theta1)^2 - 2 theta3/theta1), whose
//! radicand equals theta1^2 (1 - alpha0 - alpha1)^2.

use crate::error::{Error, Result};
use crate::types::{MomentSet, QuadraticSummary, StructuralParams, ThetaVector};

/// Which recovery path produced a `PointEstimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// General two-sided recovery via the quadratic.
    Full,
    /// theta1 within the zero band: the effect is zero and the rates are
    /// unidentified.
    BetaZero,
    /// One-sided restriction alpha0 = 0 imposed.
    OneSidedAlpha0Zero,
    /// One-sided restriction alpha1 = 0 imposed.
    OneSidedAlpha1Zero,
}

/// Structural recovery output. The rates are absent on the `BetaZero` branch.
#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub beta: f64,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub theta: ThetaVector,
    pub quadratic: Option<QuadraticSummary>,
    pub branch: Branch,
}

/// Forward map from structural parameters to the reduced form.
pub fn theta_from_structural(s: &StructuralParams) -> ThetaVector {
    let one_minus = 1.0 - s.alpha0 - s.alpha1;
    let theta1 = s.beta / one_minus;
    let theta2 = theta1 * theta1 * (1.0 + s.alpha0 - s.alpha1);
    let theta3 =
        theta1 * theta1 * theta1 * (one_minus * one_minus + 6.0 * s.alpha0 * (1.0 - s.alpha1));
    ThetaVector::new(theta1, theta2, theta3)
}

/// Solves the triangular covariance system for theta.
pub fn solve_theta(moments: &MomentSet) -> Result<ThetaVector> {
    let pi = moments.cov_tz;
    if pi == 0.0 {
        return Err(Error::NoFirstStage);
    }
    let theta1 = moments.cov_yz / pi;
    let theta2 = (2.0 * moments.cov_tyz * theta1 - moments.cov_y2z) / pi;
    let theta3 =
        (moments.cov_y3z - 3.0 * moments.cov_ty2z * theta1 + 3.0 * moments.cov_tyz * theta2) / pi;
    Ok(ThetaVector::new(theta1, theta2, theta3))
}

/// Inverts the reduced form to (beta, alpha0, alpha1).
///
/// `zero_tol` is the half-width of the band around zero inside which theta1
/// is treated as exactly zero (the effect-zero branch). Discriminants in
/// (-zero_band, 0) are clamped to zero; moments whose discriminant is more
/// negative, or whose roots leave [0, 1) or sum past one, reject the model.
pub fn theta_to_structural(theta: &ThetaVector, zero_tol: f64) -> Result<PointEstimate> {
    if theta.theta1.abs() <= zero_tol {
        return Ok(PointEstimate {
            beta: 0.0,
            alpha0: None,
            alpha1: None,
            theta: *theta,
            quadratic: None,
            branch: Branch::BetaZero,
        });
    }
    let t1 = theta.theta1;
    let a = theta.theta2 / (t1 * t1);
    let b = theta.theta3 / (t1 * t1 * t1);
    let mut disc = 3.0 * a * a - 2.0 * b;
    if disc < 0.0 {
        // Sampling noise can push the squared quantity slightly negative.
        if disc > -1e-9 * (1.0 + a * a) {
            disc = 0.0;
        } else {
            return Err(Error::MomentsInconsistent(format!(
                "discriminant 3A^2 - 2B = {disc} is negative (A = {a}, B = {b})"
            )));
        }
    }
    let root = disc.sqrt();
    let root_small = (a - root) / 2.0;
    let root_large = (a + root) / 2.0;
    // Rates sitting exactly on the zero boundary come out a few ulps
    // negative; treat that as zero rather than rejecting the model.
    let snap = |x: f64| if (-1e-9..0.0).contains(&x) { 0.0 } else { x };
    let alpha0 = snap(root_small);
    let alpha1 = snap(1.0 - root_large);
    if !(0.0..1.0).contains(&alpha0) || !(0.0..1.0).contains(&alpha1) || alpha0 + alpha1 >= 1.0 {
        return Err(Error::MomentsInconsistent(format!(
            "implied rates out of range: alpha0 = {alpha0}, alpha1 = {alpha1}"
        )));
    }
    let beta = t1 * root;
    Ok(PointEstimate {
        beta,
        alpha0: Some(alpha0),
        alpha1: Some(alpha1),
        theta: *theta,
        quadratic: Some(QuadraticSummary {
            a,
            b,
            discriminant: disc,
            root_small,
            root_large,
        }),
        branch: Branch::Full,
    })
}

/// The structural map without range validation, for numerical
/// differentiation: perturbed theta values near a boundary (say alpha0 = 0)
/// may step just outside [0, 1) and must still evaluate smoothly.
pub(crate) fn structural_map_raw(theta: &ThetaVector) -> (f64, f64, f64) {
    let t1 = theta.theta1;
    let a = theta.theta2 / (t1 * t1);
    let b = theta.theta3 / (t1 * t1 * t1);
    let root = (3.0 * a * a - 2.0 * b).max(0.0).sqrt();
    (t1 * root, (a - root) / 2.0, 1.0 - (a + root) / 2.0)
}

/// alpha1 - alpha0 = 1 - theta2 / theta1^2, identified whenever the effect is
/// nonzero.
pub fn alpha_difference(theta1: f64, theta2: f64) -> Result<f64> {
    if theta1 == 0.0 {
        return Err(Error::BetaZeroUnidentified);
    }
    Ok(1.0 - theta2 / (theta1 * theta1))
}

/// Side imposed by a one-sided mis-classification restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneSided {
    Alpha0Zero,
    Alpha1Zero,
}

/// Point estimate under one-sided mis-classification: only theta1 and theta2
/// are needed. The implied free rate must land in [0, 1) or the restriction
/// is rejected by the moments.
pub fn one_sided_point_estimate(theta1: f64, theta2: f64, side: OneSided) -> Result<PointEstimate> {
    if theta1 == 0.0 {
        return Err(Error::BetaZeroUnidentified);
    }
    let ratio = theta2 / (theta1 * theta1);
    let (alpha0, alpha1, branch) = match side {
        OneSided::Alpha0Zero => {
            let alpha1 = 1.0 - ratio;
            if !(0.0..1.0).contains(&alpha1) {
                return Err(Error::OneSidedRejected {
                    name: "alpha1",
                    value: alpha1,
                });
            }
            (0.0, alpha1, Branch::OneSidedAlpha0Zero)
        }
        OneSided::Alpha1Zero => {
            let alpha0 = ratio - 1.0;
            if !(0.0..1.0).contains(&alpha0) {
                return Err(Error::OneSidedRejected {
                    name: "alpha0",
                    value: alpha0,
                });
            }
            (alpha0, 0.0, Branch::OneSidedAlpha1Zero)
        }
    };
    let beta = theta1 * (1.0 - alpha0 - alpha1);
    Ok(PointEstimate {
        beta,
        alpha0: Some(alpha0),
        alpha1: Some(alpha1),
        theta: ThetaVector::new(theta1, theta2, f64::NAN),
        quadratic: None,
        branch,
    })
}

/// The intercept implied by the conditional-mean display
/// E[y | z=k] = c + beta (p_k - alpha0)/(1 - alpha0 - alpha1), averaged over
/// the two instrument arms. Derived from the bound construction rather than
/// stated as a standalone identification result.
pub fn intercept_estimate(moments: &MomentSet, beta: f64, alpha0: f64, alpha1: f64) -> f64 {
    let one_minus = 1.0 - alpha0 - alpha1;
    let c_at = |k: usize| moments.mean_y_given_z(k) - beta * (moments.p[k] - alpha0) / one_minus;
    (c_at(0) + c_at(1)) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::presets;
    use crate::moments::population_moments;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn c1_theta_solution() {
        let m = population_moments(&presets::c1());
        let t = solve_theta(&m).unwrap();
        assert!(close(t.theta1, 2.857143, 1e-6));
        assert!(close(t.theta2, 7.346939, 1e-6));
        assert!(close(t.theta3, 22.623907, 1e-6));
    }

    #[test]
    fn zero_covariances_zero_theta() {
        let mut m = population_moments(&presets::c1());
        m.cov_yz = 0.0;
        m.cov_y2z = 0.0;
        m.cov_y3z = 0.0;
        m.cov_tyz = 0.0;
        m.cov_ty2z = 0.0;
        let t = solve_theta(&m).unwrap();
        assert_eq!((t.theta1, t.theta2, t.theta3), (0.0, 0.0, 0.0));
        m.cov_tz = 0.0;
        assert!(solve_theta(&m).is_err());
    }

    #[test]
    fn clean_case_theta_is_beta_powers() {
        let s = StructuralParams::new(0.0, 2.0, 0.0, 0.0).unwrap();
        let t = theta_from_structural(&s);
        assert!(close(t.theta1, 2.0, 1e-12));
        assert!(close(t.theta2, 4.0, 1e-12));
        assert!(close(t.theta3, 8.0, 1e-12));
        let est = theta_to_structural(&t, 1e-8).unwrap();
        assert!(close(est.beta, 2.0, 1e-12));
        assert_eq!(est.alpha0, Some(0.0));
        let q = est.quadratic.unwrap();
        assert!(close(q.root_small, 0.0, 1e-12));
        assert!(close(q.root_large, 1.0, 1e-12));
    }

    #[test]
    fn c1_structural_recovery() {
        let t = ThetaVector::new(2.857143, 7.346939, 22.623907);
        let est = theta_to_structural(&t, 1e-8).unwrap();
        assert!(close(est.beta, 2.0, 1e-5));
        assert!(close(est.alpha0.unwrap(), 0.1, 1e-5));
        assert!(close(est.alpha1.unwrap(), 0.2, 1e-5));
        let q = est.quadratic.unwrap();
        assert!(close(q.a, 0.9, 1e-5));
        assert!(close(q.b, 0.97, 1e-5));
        assert!(close(q.discriminant, 0.49, 1e-5));
        assert!(close(q.root_small + q.root_large, q.a, 1e-12));
    }

    #[test]
    fn beta_zero_branch() {
        let t = ThetaVector::new(0.0, 3.0, -1.0);
        let est = theta_to_structural(&t, 1e-8).unwrap();
        assert_eq!(est.branch, Branch::BetaZero);
        assert_eq!(est.beta, 0.0);
        assert!(est.alpha0.is_none() && est.alpha1.is_none());
    }

    #[test]
    fn inconsistent_moments_rejected() {
        // B far above 3A^2/2 makes the discriminant clearly negative.
        let t = ThetaVector::new(1.0, 1.0, 5.0);
        assert!(matches!(
            theta_to_structural(&t, 1e-8),
            Err(Error::MomentsInconsistent(_))
        ));
    }

    #[test]
    fn alpha_difference_c1() {
        let m = population_moments(&presets::c1());
        let t = solve_theta(&m).unwrap();
        assert!(close(
            alpha_difference(t.theta1, t.theta2).unwrap(),
            0.1,
            1e-10
        ));
        // Symmetric rates difference zero.
        assert!(close(alpha_difference(2.0, 4.0).unwrap(), 0.0, 1e-15));
        assert!(alpha_difference(0.0, 1.0).is_err());
    }

    #[test]
    fn one_sided_recovery() {
        // beta = 2, alpha1 = 0.2, alpha0 = 0: theta1 = 2.5, theta2 = 5.
        let est = one_sided_point_estimate(2.5, 5.0, OneSided::Alpha0Zero).unwrap();
        assert!(close(est.beta, 2.0, 1e-12));
        assert!(close(est.alpha1.unwrap(), 0.2, 1e-12));
        // Clean theta recovers alpha = 0 on either side.
        let est = one_sided_point_estimate(2.0, 4.0, OneSided::Alpha1Zero).unwrap();
        assert!(close(est.beta, 2.0, 1e-12));
        assert_eq!(est.alpha0, Some(0.0));
        // ratio 1.3 with alpha0 = 0 implies alpha1 = -0.3: rejected.
        let err = one_sided_point_estimate(1.0, 1.3, OneSided::Alpha0Zero);
        assert!(matches!(err, Err(Error::OneSidedRejected { .. })));
    }

    #[test]
    fn roundtrip_and_identities() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1_000 {
            let alpha0: f64 = rng.random::<f64>() * 0.45;
            let alpha1: f64 = rng.random::<f64>() * (0.9 - alpha0);
            let mut beta: f64 = rng.random::<f64>() * 9.8 - 4.9;
            if beta.abs() < 0.1 {
                beta = 0.1f64.copysign(beta + f64::MIN_POSITIVE);
            }
            let s = StructuralParams::new(0.0, beta, alpha0, alpha1).unwrap();
            let t = theta_from_structural(&s);
            // Gram discriminant identity.
            let lhs = t.gram_discriminant();
            let rhs = t.theta1.powi(4) * (1.0 - alpha0 - alpha1).powi(2);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()),
                "gram identity off: {lhs} vs {rhs}"
            );
            let est = theta_to_structural(&t, 0.0).unwrap();
            assert!(close(est.beta, beta, 1e-8));
            assert!(close(est.alpha0.unwrap(), alpha0, 1e-8));
            assert!(close(est.alpha1.unwrap(), alpha1, 1e-8));
            // beta consistency with the wald relation.
            assert!(
                (est.beta - t.theta1 * (1.0 - alpha0 - alpha1)).abs() < 1e-10 * (1.0 + beta.abs())
            );
            let q = est.quadratic.unwrap();
            assert!(close(q.root_small + q.root_large, q.a, 1e-10));
            assert!(close(
                q.root_large - q.root_small,
                q.discriminant.sqrt(),
                1e-10
            ));
            assert!(q.root_large >= q.root_small);
        }
    }

    #[test]
    fn scale_equivariance_is_exact_for_binary_powers() {
        let m = population_moments(&presets::c1_endog());
        let t = solve_theta(&m).unwrap();
        let est = theta_to_structural(&t, 1e-10).unwrap();
        let lambda = 4.0;
        let mut scaled = m;
        scaled.cov_yz *= lambda;
        scaled.cov_y2z *= lambda * lambda;
        scaled.cov_y3z *= lambda * lambda * lambda;
        scaled.cov_tyz *= lambda;
        scaled.cov_ty2z *= lambda * lambda;
        for t in 0..2 {
            for k in 0..2 {
                scaled.cell_means[t][k] *= lambda;
            }
        }
        let ts = solve_theta(&scaled).unwrap();
        assert_eq!(ts.theta1, t.theta1 * lambda);
        assert_eq!(ts.theta2, t.theta2 * lambda * lambda);
        assert_eq!(ts.theta3, t.theta3 * lambda * lambda * lambda);
        let est_s = theta_to_structural(&ts, 1e-10).unwrap();
        assert_eq!(est_s.alpha0, est.alpha0);
        assert_eq!(est_s.alpha1, est.alpha1);
        assert_eq!(est_s.beta, est.beta * lambda);
    }

    #[test]
    fn intercept_from_display() {
        let m = population_moments(&presets::c1_endog());
        let c = intercept_estimate(&m, 2.0, 0.1, 0.2);
        assert!(close(c, 1.0, 1e-10));
    }

    #[test]
    fn attenuation_ordering() {
        // 0 <= RF <= beta <= IV = theta1 in population for positive effects.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let alpha0 = rng.random::<f64>() * 0.4;
            let alpha1 = rng.random::<f64>() * (0.9 - alpha0);
            let beta = 0.1 + rng.random::<f64>() * 4.0;
            let ps0 = 0.05 + rng.random::<f64>() * 0.4;
            let ps1 = (ps0 + 0.1 + rng.random::<f64>() * 0.4).min(0.95);
            let s = StructuralParams::new(rng.random::<f64>(), beta, alpha0, alpha1).unwrap();
            let spec = crate::dgp::build_spec(0.5, ps0, ps1, s, [0.0, 0.0], 1.0, 0.0, 0.0).unwrap();
            let m = population_moments(&spec);
            let rf = m.reduced_form_estimand();
            let iv = m.iv_estimand().unwrap();
            let t = solve_theta(&m).unwrap();
            assert!(rf >= -1e-10 && rf <= beta + 1e-10 && beta <= iv + 1e-10);
            assert!(close(iv, t.theta1, 1e-9));
        }
    }
}
