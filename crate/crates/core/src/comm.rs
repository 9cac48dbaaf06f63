//! LMMSE channel estimation and the communication metrics built on its error
//! covariance: the matrix capacity lower bound, its scalar (SINR) relaxation,
//! and the SCA tangent used by the optimizer.
//!
//! All capacities are in nats per channel use.

use crate::channel::Dictionaries;
use crate::error::{Error, Result};
use crate::linalg::{inverse_hpd, logdet_hpd, solve_hpd, trace, CMatrix, CVector, C64};

#[derive(Debug, Clone)]
pub struct LmmseResult {
    pub h_hat: CVector,
    pub c_eps: CMatrix,
    /// `K_h x R_p` weighting matrix.
    pub w: CMatrix,
}

fn check_variances(sigma_h2: f64, sigma_n2: f64) -> Result<()> {
    if !(sigma_h2 > 0.0 && sigma_h2.is_finite()) {
        return Err(Error::param("sigma_h2", "must be positive"));
    }
    if !(sigma_n2 > 0.0 && sigma_n2.is_finite()) {
        return Err(Error::param("sigma_n2", "must be positive for estimation"));
    }
    Ok(())
}

fn scaled_identity(n: usize, s: f64) -> CMatrix {
    CMatrix::identity(n, n) * C64::new(s, 0.0)
}

/// `(Ω^H Ω / σ_n² + I / σ_h²)^{-1} Ω^H / σ_n²`.
pub fn lmmse_weights(omega: &CMatrix, sigma_h2: f64, sigma_n2: f64) -> Result<CMatrix> {
    check_variances(sigma_h2, sigma_n2)?;
    let kh = omega.ncols();
    let normal = omega.adjoint() * omega / C64::new(sigma_n2, 0.0) + scaled_identity(kh, 1.0 / sigma_h2);
    Ok(solve_hpd(&normal, &omega.adjoint(), "LMMSE normal matrix")? / C64::new(sigma_n2, 0.0))
}

/// Woodbury form `κ Ω^H (κ Ω Ω^H + I)^{-1}`, `κ = σ_h² / σ_n²`.
pub fn lmmse_weights_dual(omega: &CMatrix, sigma_h2: f64, sigma_n2: f64) -> Result<CMatrix> {
    check_variances(sigma_h2, sigma_n2)?;
    let kappa = sigma_h2 / sigma_n2;
    let rp = omega.nrows();
    let gram = omega * omega.adjoint() * C64::new(kappa, 0.0) + CMatrix::identity(rp, rp);
    // (A^{-1} Ω)^H = Ω^H A^{-1} since A is Hermitian.
    let x = solve_hpd(&gram, omega, "LMMSE dual gram")?;
    Ok(x.adjoint() * C64::new(kappa, 0.0))
}

/// `C_ε = σ_h² (I + κ Ω^H Ω)^{-1}`.
pub fn error_covariance(omega: &CMatrix, sigma_h2: f64, sigma_n2: f64) -> Result<CMatrix> {
    check_variances(sigma_h2, sigma_n2)?;
    let kh = omega.ncols();
    let m = omega.adjoint() * omega * C64::new(sigma_h2 / sigma_n2, 0.0) + CMatrix::identity(kh, kh);
    Ok(inverse_hpd(&m, "error covariance")? * C64::new(sigma_h2, 0.0))
}

pub fn lmmse_estimate(y_p: &CVector, omega: &CMatrix, sigma_h2: f64, sigma_n2: f64) -> Result<LmmseResult> {
    if y_p.len() != omega.nrows() {
        return Err(Error::dim("pilot observation", omega.nrows(), y_p.len()));
    }
    let w = lmmse_weights(omega, sigma_h2, sigma_n2)?;
    let c_eps = error_covariance(omega, sigma_h2, sigma_n2)?;
    Ok(LmmseResult {
        h_hat: &w * y_p,
        c_eps,
        w,
    })
}

/// Inputs shared by both capacity bounds.
#[derive(Debug, Clone, Copy)]
pub struct CommInputs<'a> {
    pub p_d: f64,
    pub sigma_n2: f64,
    pub dicts: &'a Dictionaries,
    pub cp_factor: f64,
    /// `MN`, the number of DD channel uses per frame.
    pub mn: usize,
}

impl CommInputs<'_> {
    fn validate(&self) -> Result<()> {
        if !(self.p_d >= 0.0 && self.p_d.is_finite()) {
            return Err(Error::param("p_d", "must be nonnegative"));
        }
        if !(self.sigma_n2 >= 0.0) {
            return Err(Error::param("sigma_n2", "must be nonnegative"));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.cp_factor / self.mn as f64
    }
}

/// Effective noise covariance `p_d Ω̃_d (C_ε ⊗ I) Ω̃_d^H + σ_n² I`.
pub fn effective_noise_cov(inputs: &CommInputs, c_eps: &CMatrix) -> Result<CMatrix> {
    let rd = inputs.dicts.r_d();
    Ok(inputs.dicts.data_error_cov(c_eps)? * C64::new(inputs.p_d, 0.0) + scaled_identity(rd, inputs.sigma_n2))
}

/// `(f_CP / MN) log det(I + M Ĥ_d Ĥ_d^H)` with
/// `M = p_d (p_d Ω̃_d (C_ε ⊗ I) Ω̃_d^H + σ_n² I)^{-1}`.
pub fn capacity_lb_matrix(inputs: &CommInputs, c_eps: &CMatrix, h_hat: &CVector) -> Result<f64> {
    inputs.validate()?;
    if inputs.p_d == 0.0 {
        return Ok(0.0);
    }
    let hd = inputs.dicts.data_channel(h_hat)?;
    let cv = effective_noise_cov(inputs, c_eps)?;
    let full = &cv + &hd * hd.adjoint() * C64::new(inputs.p_d, 0.0);
    let value = logdet_hpd(&full, "capacity argument")? - logdet_hpd(&cv, "effective noise")?;
    Ok(inputs.scale() * value.max(0.0))
}

/// `(p_d/σ_n²) / ((p_d/σ_n²) tr + 1)`.
pub fn sinr_from_trace(p_d: f64, trace_c: f64, sigma_n2: f64) -> f64 {
    if p_d == 0.0 {
        return 0.0;
    }
    p_d / (p_d * trace_c + sigma_n2)
}

/// Scalar bound: `M` replaced by `SINR · I`.
pub fn capacity_lb_scalar(inputs: &CommInputs, c_eps: &CMatrix, h_hat: &CVector) -> Result<f64> {
    inputs.validate()?;
    if inputs.p_d == 0.0 {
        return Ok(0.0);
    }
    let sinr = sinr_from_trace(inputs.p_d, trace(c_eps).re, inputs.sigma_n2);
    let hd = inputs.dicts.data_channel(h_hat)?;
    let kd = hd.ncols();
    // Sylvester: det(I + s H H^H) = det(I + s H^H H).
    let gram = hd.adjoint() * &hd * C64::new(sinr, 0.0) + CMatrix::identity(kd, kd);
    Ok(inputs.scale() * logdet_hpd(&gram, "scalar capacity argument")?)
}

/// SINR metric with `C_ε` evaluated from the pilot dictionary.
pub fn sinr_metric(p_d: f64, omega_p: &CMatrix, sigma_h2: f64, sigma_n2: f64) -> Result<f64> {
    if !(p_d >= 0.0) {
        return Err(Error::param("p_d", "must be nonnegative"));
    }
    let c = error_covariance(omega_p, sigma_h2, sigma_n2)?;
    Ok(sinr_from_trace(p_d, trace(&c).re, sigma_n2))
}

/// `SINR'(p_d, s1) = p_d / (p_d s1 + σ_n²)`.
pub fn sinr_relaxed(p_d: f64, s1: f64, sigma_n2: f64) -> Result<f64> {
    if !(s1 > 0.0) {
        return Err(Error::param("s1", "must be positive"));
    }
    Ok(sinr_from_trace(p_d, s1, sigma_n2))
}

/// Tangent of `SINR'` in `s1` at `s1_ref`. `SINR'` is convex in `s1`, so the
/// tangent is a global minorizer: `sinr_sca <= sinr_relaxed`.
pub fn sinr_sca(p_d: f64, s1_ref: f64, s1: f64, sigma_n2: f64) -> Result<f64> {
    let f = sinr_relaxed(p_d, s1_ref, sigma_n2)?;
    let denom = p_d * s1_ref + sigma_n2;
    Ok(f - p_d * p_d / (denom * denom) * (s1 - s1_ref))
}

/// Slope of [`sinr_sca`] in `s1` (constant, nonpositive).
pub fn sinr_sca_slope(p_d: f64, s1_ref: f64, sigma_n2: f64) -> f64 {
    let denom = p_d * s1_ref + sigma_n2;
    -p_d * p_d / (denom * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::{build_arrangement, Block, GuardPlan};
    use crate::channel::{build_dictionaries, DopplerSign};
    use crate::linalg::{cscg_matrix, cscg_vector, max_abs, min_eigenvalue};
    use crate::modem::FrameConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn woodbury_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let omega = cscg_matrix(&mut rng, 12, 4, 1.0);
            let a = lmmse_weights(&omega, 0.5, 0.3).unwrap();
            let b = lmmse_weights_dual(&omega, 0.5, 0.3).unwrap();
            assert!(max_abs(&(a - b)) < 1e-10);
        }
    }

    #[test]
    fn prior_dominates_at_huge_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omega = cscg_matrix(&mut rng, 8, 4, 1.0);
        let h = cscg_vector(&mut rng, 4, 0.5);
        let sn = 1e6 * 0.5 * omega.norm_squared();
        let y = &omega * &h + cscg_vector(&mut rng, 8, sn);
        let est = lmmse_estimate(&y, &omega, 0.5, sn).unwrap();
        assert!(est.h_hat.norm() < 1e-3 * h.norm());
    }

    #[test]
    fn rejects_bad_variances() {
        let omega = CMatrix::identity(2, 2);
        assert!(lmmse_weights(&omega, 0.0, 1.0).is_err());
        assert!(error_covariance(&omega, 1.0, 0.0).is_err());
        assert!(sinr_relaxed(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn error_covariance_is_bounded_by_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = cscg_matrix(&mut rng, 6, 5, 1.0);
        let c = error_covariance(&omega, 0.5, 0.2).unwrap();
        let eig = nalgebra::SymmetricEigen::new(c.clone());
        assert!(eig.eigenvalues.iter().all(|v| (-1e-12..=0.5 + 1e-12).contains(v)));
    }

    fn small_setup() -> (FrameConfig, crate::arrangement::Arrangement, Dictionaries) {
        let cfg = FrameConfig::with_grid(4, 16, 12).unwrap();
        let plan = GuardPlan {
            pilot_block: Block {
                delay_start: 0,
                delay_len: 4,
                doppler_start: 0,
                doppler_len: 2,
            },
            delay_margin: 1,
            doppler_margin: 2,
            doppler_sign: DopplerSign::Unsigned,
            data_count: Some(16),
        };
        let arr = build_arrangement(&cfg, &plan).unwrap();
        let d = build_dictionaries(&arr, &cfg, &plan.taps()).unwrap();
        (cfg, arr, d)
    }

    #[test]
    fn zero_power_bounds_vanish() {
        let (cfg, _, d) = small_setup();
        let inputs = CommInputs {
            p_d: 0.0,
            sigma_n2: 1.0,
            dicts: &d,
            cp_factor: cfg.cp_factor(),
            mn: cfg.mn(),
        };
        let c = CMatrix::identity(d.k_h(), d.k_h());
        let h = CVector::from_element(d.k_h(), C64::new(1.0, 0.0));
        assert_eq!(capacity_lb_matrix(&inputs, &c, &h).unwrap(), 0.0);
        assert_eq!(capacity_lb_scalar(&inputs, &c, &h).unwrap(), 0.0);
    }

    #[test]
    fn perfect_csi_reduces_to_awgn_form() {
        let (cfg, _, d) = small_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = cscg_vector(&mut rng, d.k_h(), 0.5);
        let inputs = CommInputs {
            p_d: 2.0,
            sigma_n2: 0.5,
            dicts: &d,
            cp_factor: cfg.cp_factor(),
            mn: cfg.mn(),
        };
        let zero = CMatrix::zeros(d.k_h(), d.k_h());
        let got = capacity_lb_matrix(&inputs, &zero, &h).unwrap();
        let hd = d.data_channel(&h).unwrap();
        let arg = &hd * hd.adjoint() * C64::new(4.0, 0.0) + CMatrix::identity(d.r_d(), d.r_d());
        let want = cfg.cp_factor() / cfg.mn() as f64 * logdet_hpd(&arg, "t").unwrap();
        assert!((got - want).abs() < 1e-10);
        assert!((capacity_lb_scalar(&inputs, &zero, &h).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn bounds_coincide_when_noise_is_white() {
        // One tap and an identity dictionary: Ω̃_d (C ⊗ I) Ω̃_d^H = tr(C) I.
        let cfg = FrameConfig::with_grid(4, 4, 2).unwrap();
        let arr = crate::arrangement::Arrangement::from_indices(&cfg, vec![0], vec![5, 6, 9], vec![0], vec![5, 6, 9])
            .unwrap();
        let d = build_dictionaries(&arr, &cfg, &crate::channel::TapGrid::new(0, 0, DopplerSign::Unsigned)).unwrap();
        let c = CMatrix::identity(1, 1) * C64::new(0.2, 0.0);
        let h = CVector::from_element(1, C64::new(0.7, -0.4));
        let inputs = CommInputs {
            p_d: 1.5,
            sigma_n2: 0.3,
            dicts: &d,
            cp_factor: cfg.cp_factor(),
            mn: cfg.mn(),
        };
        let a = capacity_lb_matrix(&inputs, &c, &h).unwrap();
        let b = capacity_lb_scalar(&inputs, &c, &h).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sinr_limits() {
        let omega = CMatrix::identity(3, 3) * C64::new(1e6, 0.0);
        let s = sinr_metric(2.0, &omega, 0.5, 0.25).unwrap();
        assert!((s - 8.0).abs() < 1e-6);
        assert_eq!(sinr_metric(0.0, &omega, 0.5, 0.25).unwrap(), 0.0);
        assert_eq!(sinr_sca(0.0, 1.0, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sinr_concave_in_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let omega = cscg_matrix(&mut rng, 6, 3, 1.0);
            let sh = 0.1 + rand::Rng::random::<f64>(&mut rng);
            let sn = 0.1 + rand::Rng::random::<f64>(&mut rng);
            let step = 0.05;
            for i in 1..40 {
                let p = i as f64 * step;
                let f = |p: f64| sinr_metric(p, &omega, sh, sn).unwrap();
                let second = f(p + step) - 2.0 * f(p) + f(p - step);
                assert!(second <= 1e-9);
                assert!(f(p + step) >= f(p));
            }
        }
    }

    #[test]
    fn sca_is_tangent_minorizer() {
        for i in 0..1000 {
            let s_ref = 0.01 + (i % 37) as f64 * 0.13;
            let s = 0.01 + (i / 37) as f64 * 0.19;
            let p = 1.7;
            let relaxed = sinr_relaxed(p, s, 0.4).unwrap();
            let sca = sinr_sca(p, s_ref, s, 0.4).unwrap();
            assert!(sca <= relaxed + 1e-12);
        }
        assert_eq!(
            sinr_sca(1.3, 0.7, 0.7, 0.4).unwrap(),
            sinr_relaxed(1.3, 0.7, 0.4).unwrap()
        );
    }

    #[test]
    fn sinr_grows_with_pilot_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let omega = cscg_matrix(&mut rng, 8, 4, 1.0);
        let extra = cscg_matrix(&mut rng, 3, 4, 1.0);
        let mut stacked = CMatrix::zeros(11, 4);
        stacked.rows_mut(0, 8).copy_from(&omega);
        stacked.rows_mut(8, 3).copy_from(&extra);
        let a = sinr_metric(1.0, &omega, 0.5, 0.5).unwrap();
        let b = sinr_metric(1.0, &stacked, 0.5, 0.5).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn trace_bound_dominates_effective_noise_for_spike_pilots() {
        let (_, arr, d) = small_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for j in 0..arr.k_p() {
            let mut xp = CVector::zeros(arr.k_p());
            xp[j] = cscg_vector(&mut rng, 1, 4.0)[0];
            let c = error_covariance(&d.omega_p(&xp).unwrap(), 0.5, 0.1).unwrap();
            let tr = trace(&c).re;
            let gap = CMatrix::identity(d.r_d(), d.r_d()) * C64::new(tr, 0.0) - d.data_error_cov(&c).unwrap();
            assert!(min_eigenvalue(&gap) > -1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scalar_bound_below_matrix_bound(seed in any::<u64>(), p in 0.05f64..5.0, sn in 0.05f64..2.0) {
            let (cfg, arr, d) = small_setup();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xp = cscg_vector(&mut rng, arr.k_p(), 1.0);
            let omega = d.omega_p(&xp).unwrap();
            let h = cscg_vector(&mut rng, d.k_h(), 0.5);
            let y = &omega * &h + cscg_vector(&mut rng, omega.nrows(), sn);
            let est = lmmse_estimate(&y, &omega, 0.5, sn).unwrap();
            let inputs = CommInputs { p_d: p, sigma_n2: sn, dicts: &d, cp_factor: cfg.cp_factor(), mn: cfg.mn() };
            let m = capacity_lb_matrix(&inputs, &est.c_eps, &est.h_hat).unwrap();
            let s = capacity_lb_scalar(&inputs, &est.c_eps, &est.h_hat).unwrap();
            prop_assert!(s <= m + 1e-12, "scalar {} matrix {}", s, m);
            prop_assert!(s >= 0.0);
        }
    }
}
