//! Small dense solvers used by the optimizer.
//!
//! * [`maximize_concave_1d`]: safeguarded bisection on the derivative, with a
//!   golden-section fallback.
//! * [`solve_qp`]: convex complex QP `min z^H Q z + 2 Re(q^H z) + c0` subject to
//!   `Re(a^H z) <= b` (or `>=`), solved by a real-embedded Mehrotra
//!   predictor-corrector interior-point method.
//! * [`solve_a_update`]: `min ζ/2 ‖A Ξ - I‖_F²` subject to `Re Tr(σ_h² A) <= s1`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{embed_hermitian, embed_vector, hermitian_part, unembed_vector, CMatrix, CVector, C64};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximizes a concave `f` on `[lo, hi]`. With a derivative the optimum is
/// bracketed by the sign change of `f'`; boundary optima are returned when
/// `f'` keeps one sign. Without it, golden-section search is used.
pub fn maximize_concave_1d(
    f: impl Fn(f64) -> f64,
    df: Option<&dyn Fn(f64) -> f64>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if !(lo <= hi) {
        return Err(Error::Infeasible(format!("empty interval [{lo}, {hi}]")));
    }
    let tol = tol.max(f64::EPSILON * hi.abs().max(lo.abs()).max(1.0));
    if hi - lo <= tol {
        let x = 0.5 * (lo + hi);
        return Ok((x, f(x)));
    }
    let x = match df {
        Some(df) => {
            if df(lo) <= 0.0 {
                lo
            } else if df(hi) >= 0.0 {
                hi
            } else {
                let (mut a, mut b) = (lo, hi);
                while b - a > tol {
                    let mid = 0.5 * (a + b);
                    if df(mid) > 0.0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                0.5 * (a + b)
            }
        }
        None => {
            let (mut a, mut b) = (lo, hi);
            let mut c = b - GOLDEN * (b - a);
            let mut d = a + GOLDEN * (b - a);
            let (mut fc, mut fd) = (f(c), f(d));
            while b - a > tol {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - GOLDEN * (b - a);
                    fc = f(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + GOLDEN * (b - a);
                    fd = f(d);
                }
            }
            let mid = 0.5 * (a + b);
            // Concave functions can peak at an endpoint the bracket never samples.
            [lo, mid, hi]
                .into_iter()
                .map(|x| (x, f(x)))
                .fold(
                    (mid, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                )
                .0
        }
    };
    Ok((x, f(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `Re(a^H z) <= b`.
    Le,
    /// `Re(a^H z) >= b`.
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: CVector,
    pub b: f64,
    pub sense: Sense,
    /// Name used in infeasibility diagnostics.
    pub label: &'static str,
}

/// `min z^H Q z + 2 Re(q^H z) + c0` subject to real-part affine constraints.
#[derive(Debug, Clone)]
pub struct ComplexQp {
    pub quad: CMatrix,
    pub lin: CVector,
    pub c0: f64,
    pub ineqs: Vec<LinearConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub z_star: CVector,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// For `Infeasible`: nonnegative multipliers `y` with `G^T y ≈ 0`, `h^T y < 0`.
    pub certificate: Option<DVector<f64>>,
    /// `max(‖r_p‖∞, ‖r_d‖∞)` per iteration; nonincreasing by construction.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl ComplexQp {
    pub fn new(quad: CMatrix, lin: CVector) -> Result<Self> {
        if quad.nrows() != quad.ncols() || quad.nrows() != lin.len() {
            return Err(Error::dim("QP quadratic term", lin.len(), quad.nrows()));
        }
        Ok(ComplexQp {
            quad,
            lin,
            c0: 0.0,
            ineqs: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn push(&mut self, a: CVector, b: f64, sense: Sense, label: &'static str) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::dim("constraint vector", self.dim(), a.len()));
        }
        self.ineqs.push(LinearConstraint { a, b, sense, label });
        Ok(())
    }

    pub fn objective(&self, z: &CVector) -> f64 {
        z.dotc(&(&self.quad * z)).re + 2.0 * self.lin.dotc(z).re + self.c0
    }

    /// Largest violation over all constraints (0 when feasible).
    pub fn max_violation(&self, z: &CVector) -> f64 {
        self.ineqs
            .iter()
            .map(|c| {
                let v = c.a.dotc(z).re;
                match c.sense {
                    Sense::Le => v - c.b,
                    Sense::Ge => c.b - v,
                }
            })
            .fold(0.0, f64::max)
    }

    /// Symmetrizes `Q` and floors negative eigenvalues at zero. Returns the
    /// magnitude of the most negative eigenvalue removed.
    pub fn repair_psd(&mut self) -> f64 {
        let h = hermitian_part(&self.quad);
        let eig = SymmetricEigen::new(h.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min >= 0.0 {
            self.quad = h;
            return 0.0;
        }
        let floored = eig.eigenvalues.map(|v| C64::new(v.max(0.0), 0.0));
        let v = eig.eigenvectors;
        self.quad = hermitian_part(&(&v * CMatrix::from_diagonal(&floored) * v.adjoint()));
        if -min > 1e-10 * eig.eigenvalues.amax().max(1.0) {
            log::debug!("QP quadratic term floored, min eigenvalue {min:.3e}");
        }
        -min
    }

    /// Real form `min ½ ξ^T P ξ + c^T ξ` subject to `G ξ <= h`.
    pub fn real_form(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let n2 = 2 * self.dim();
        let p = embed_hermitian(&hermitian_part(&self.quad)) * 2.0;
        let c = embed_vector(&self.lin) * 2.0;
        let m = self.ineqs.len();
        let mut g = DMatrix::zeros(m, n2);
        let mut h = DVector::zeros(m);
        for (i, con) in self.ineqs.iter().enumerate() {
            let row = embed_vector(&con.a);
            let s = match con.sense {
                Sense::Le => 1.0,
                Sense::Ge => -1.0,
            };
            for j in 0..n2 {
                g[(i, j)] = s * row[j];
            }
            h[i] = s * con.b;
        }
        (p, c, g, h)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

fn factor_solve(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = k.diagonal().amax().max(1.0);
    let mut reg = 0.0;
    for _ in 0..6 {
        let mut m = k.clone();
        if reg > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += reg;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch.solve(rhs));
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    k.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("singular interior-point system".into()))
}

/// Solves the QP from `z0` (used to seed the primal iterate).
pub fn solve_qp(prob: &ComplexQp, z0: Option<&CVector>, opts: QpOptions) -> Result<SolveReport> {
    let n = prob.dim();
    if let Some(z) = z0 {
        if z.len() != n {
            return Err(Error::dim("QP start", n, z.len()));
        }
    }
    let mut prob = prob.clone();
    prob.repair_psd();
    let (p, c, g, h) = prob.real_form();
    let n2 = 2 * n;
    let m = h.len();
    let mut x = z0.map(embed_vector).unwrap_or_else(|| DVector::zeros(n2));
    let finish = |x: &DVector<f64>, kkt: f64, it: usize, status, cert, hist| {
        let z = unembed_vector(x);
        SolveReport {
            objective: prob.objective(&z),
            z_star: z,
            kkt_residual: kkt,
            iterations: it,
            status,
            certificate: cert,
            residual_history: hist,
        }
    };

    let c_scale = 1.0 + inf_norm(&c);
    if m == 0 {
        let r = &p * &x + &c;
        let dx = factor_solve(&p, &(-&r))?;
        x += dx;
        let res = inf_norm(&(&p * &x + &c)) / c_scale;
        let status = if res < opts.tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        };
        return Ok(finish(&x, res, 1, status, None, vec![res]));
    }

    let h_scale = 1.0 + inf_norm(&h);
    let gx = &g * &x;
    let mut s = DVector::from_fn(m, |i, _| (h[i] - gx[i]).max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let mut history = Vec::new();
    let mut kkt = f64::INFINITY;

    for it in 0..opts.max_iter {
        let r_d = &p * &x + &c + g.transpose() * &lam;
        let r_p = &g * &x + &s - &h;
        let mu = s.dot(&lam) / m as f64;
        let res = (inf_norm(&r_p) / h_scale).max(inf_norm(&r_d) / c_scale);
        history.push(res);
        kkt = res.max(mu);
        if kkt < opts.tol {
            return Ok(finish(&x, kkt, it, SolveStatus::Optimal, None, history));
        }
        // Farkas test: y >= 0, G^T y = 0, h^T y < 0 proves {Gx <= h} empty.
        let hy = h.dot(&lam);
        if hy < 0.0 {
            let gty = inf_norm(&(g.transpose() * &lam));
            if gty <= 1e-9 * -hy {
                let y = &lam / -hy;
                return Ok(finish(&x, kkt, it, SolveStatus::Infeasible, Some(y), history));
            }
        }

        let w = DVector::from_fn(m, |i, _| lam[i] / s[i]);
        let mut kmat = p.clone();
        for i in 0..m {
            let gi = g.row(i);
            kmat += gi.transpose() * gi * w[i];
        }
        let solve_dir = |r_c: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let s_inv_rc = DVector::from_fn(m, |i, _| r_c[i] / s[i]);
            let w_rp = w.component_mul(&r_p);
            let rhs = -&r_d - g.transpose() * (&w_rp - &s_inv_rc);
            let dx = factor_solve(&kmat, &rhs)?;
            let gdx = &g * &dx;
            let dlam = DVector::from_fn(m, |i, _| w[i] * (gdx[i] + r_p[i]) - s_inv_rc[i]);
            let ds = -&r_p - gdx;
            Ok((dx, ds, dlam))
        };

        let r_aff = s.component_mul(&lam);
        let (_, ds_a, dl_a) = solve_dir(&r_aff)?;
        let alpha_a = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (&s + &ds_a * alpha_a).dot(&(&lam + &dl_a * alpha_a)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let r_c = DVector::from_fn(m, |i, _| s[i] * lam[i] + ds_a[i] * dl_a[i] - sigma * mu);
        let (dx, ds, dl) = solve_dir(&r_c)?;
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        x += &dx * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
        for v in s.iter_mut().chain(lam.iter_mut()) {
            *v = v.max(1e-300);
        }
    }
    let hy = h.dot(&lam);
    let cert = (hy < 0.0 && inf_norm(&(g.transpose() * &lam)) <= 1e-6 * -hy).then(|| &lam / -hy);
    let status = if cert.is_some() {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIter
    };
    Ok(finish(&x, kkt, opts.max_iter, status, cert, history))
}

/// Conditioning above which `ΞΞ^H` is Tikhonov-regularized.
pub const A_UPDATE_MAX_COND: f64 = 1e12;

/// `argmin_A ζ/2 ‖A Ξ - I‖_F²` subject to `Re Tr(σ_h² A) <= s1`.
///
/// Stationarity gives `A(λ) = (Ξ^H - (λσ_h²/ζ) I)(ΞΞ^H)^{-1}`, whose trace is
/// affine in `λ`, so the multiplier of an active constraint is explicit.
pub fn solve_a_update(xi: &CMatrix, s1: f64, sigma_h2: f64, zeta: f64) -> Result<CMatrix> {
    let k = xi.nrows();
    if xi.ncols() != k {
        return Err(Error::dim("Xi columns", k, xi.ncols()));
    }
    if !(sigma_h2 > 0.0) || !(zeta > 0.0) {
        return Err(Error::param("sigma_h2/zeta", "must be positive"));
    }
    let mut gram = hermitian_part(&(xi * xi.adjoint()));
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo > 0.0) || hi / lo > A_UPDATE_MAX_COND {
        let delta = hi.max(f64::MIN_POSITIVE) / A_UPDATE_MAX_COND;
        log::debug!("A-update: regularizing Xi Xi^H (cond {:.3e}) by {delta:.3e}", hi / lo);
        for i in 0..k {
            gram[(i, i)] += C64::new(delta, 0.0);
        }
    }
    let ch = Cholesky::new(gram).ok_or_else(|| Error::Numerical("Xi Xi^H not positive definite".into()))?;
    let ginv = ch.inverse();
    let a0 = xi.adjoint() * &ginv;
    let tr0 = sigma_h2 * a0.trace().re;
    if tr0 <= s1 {
        return Ok(a0);
    }
    let tr_ginv = ginv.trace().re;
    let lambda = zeta * (tr0 - s1) / (sigma_h2 * sigma_h2 * tr_ginv);
    Ok(a0 - ginv * C64::new(lambda * sigma_h2 / zeta, 0.0))
}

/// `ζ/2 ‖A Ξ - I‖_F²`.
pub fn a_update_objective(a: &CMatrix, xi: &CMatrix, zeta: f64) -> f64 {
    let k = xi.nrows();
    0.5 * zeta * (a * xi - CMatrix::identity(k, k)).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cscg_matrix, cscg_vector, max_abs};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> CVector {
        let mut v = CVector::zeros(n);
        v[i] = C64::new(1.0, 0.0);
        v
    }

    #[test]
    fn concave_interior_and_boundary() {
        let f = |x: f64| -(x - 1.0) * (x - 1.0);
        let df = |x: f64| -2.0 * (x - 1.0);
        let (x, _) = maximize_concave_1d(f, Some(&df), 0.0, 2.0, 1e-10).unwrap();
        assert!((x - 1.0).abs() < 1e-8);
        let (x, _) = maximize_concave_1d(f, None, 0.0, 2.0, 1e-10).unwrap();
        assert!((x - 1.0).abs() < 1e-7);
        let g = |x: f64| -(x - 3.0) * (x - 3.0);
        let dg = |x: f64| -2.0 * (x - 3.0);
        assert_eq!(maximize_concave_1d(g, Some(&dg), 0.0, 2.0, 1e-10).unwrap().0, 2.0);
        assert_eq!(maximize_concave_1d(g, None, 0.0, 2.0, 1e-10).unwrap().0, 2.0);
        assert!(matches!(
            maximize_concave_1d(g, None, 1.0, 0.0, 1e-9),
            Err(Error::Infeasible(_))
        ));
        let (x, _) = maximize_concave_1d(g, Some(&dg), 0.5, 0.5, 1e-9).unwrap();
        assert_eq!(x, 0.5);
    }

    #[test]
    fn unconstrained_qp() {
        let prob = ComplexQp::new(CMatrix::identity(3, 3), CVector::zeros(3)).unwrap();
        let r = solve_qp(&prob, None, QpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.z_star.norm() < 1e-12);
    }

    #[test]
    fn projection_onto_halfspace() {
        let mut prob = ComplexQp::new(CMatrix::identity(3, 3), -e(3, 0)).unwrap();
        prob.push(e(3, 0), 0.5, Sense::Le, "cap").unwrap();
        let r = solve_qp(&prob, None, QpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.z_star.clone() - e(3, 0) * C64::new(0.5, 0.0)).norm() < 1e-7);
        // Residuals shrink by (1 - α) each step.
        assert!(r
            .residual_history
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15));
    }

    #[test]
    fn ge_constraint_and_complex_direction() {
        let a = CVector::from_iterator(2, [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]);
        let mut prob = ComplexQp::new(CMatrix::identity(2, 2), CVector::zeros(2)).unwrap();
        prob.push(a.clone(), 2.0, Sense::Ge, "floor").unwrap();
        let r = solve_qp(&prob, None, QpOptions::default()).unwrap();
        // Re(a^H z) = Im(z_0) >= 2; the closest point is z_0 = 2j.
        assert!((r.z_star[0] - C64::new(0.0, 2.0)).norm() < 1e-7);
        assert!(prob.max_violation(&r.z_star) < 1e-8);
    }

    #[test]
    fn infeasible_constraints_are_certified() {
        let mut prob = ComplexQp::new(CMatrix::identity(2, 2), CVector::zeros(2)).unwrap();
        prob.push(e(2, 0), 0.0, Sense::Le, "upper").unwrap();
        prob.push(e(2, 0), 1.0, Sense::Ge, "lower").unwrap();
        let r = solve_qp(&prob, None, QpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        let y = r.certificate.unwrap();
        let (_, _, g, h) = prob.real_form();
        assert!(y.iter().all(|v| *v >= 0.0));
        assert!(h.dot(&y) < 0.0);
        assert!((g.transpose() * y).amax() < 1e-6);
    }

    #[test]
    fn psd_repair_floors_negative_modes() {
        let mut q = CMatrix::identity(2, 2);
        q[(1, 1)] = C64::new(-1e-12, 0.0);
        let mut prob = ComplexQp::new(q, CVector::zeros(2)).unwrap();
        let removed = prob.repair_psd();
        assert!((removed - 1e-12).abs() < 1e-20);
        assert!(crate::linalg::min_eigenvalue(&prob.quad) >= 0.0);
    }

    #[test]
    fn a_update_hand_cases() {
        let k = 4;
        let id = CMatrix::identity(k, k);
        let a = solve_a_update(&id, 0.5 * k as f64 * 3.0, 0.5, 1.0).unwrap();
        assert!(max_abs(&(a - &id)) < 1e-12);
        let a = solve_a_update(&id, 0.5 * k as f64 / 2.0, 0.5, 2.0).unwrap();
        assert!(max_abs(&(a - &id * C64::new(0.5, 0.0))) < 1e-12);
    }

    #[test]
    fn a_update_singular_xi_is_regularized() {
        let mut xi = CMatrix::identity(3, 3);
        xi[(2, 2)] = C64::new(0.0, 0.0);
        let a = solve_a_update(&xi, 10.0, 1.0, 1.0).unwrap();
        assert!(a.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn a_update_is_kkt_optimal(seed in any::<u64>(), frac in 0.1f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 3;
            let xi = CMatrix::identity(k, k) + cscg_matrix(&mut rng, k, k, 0.2);
            let sh = 0.7;
            let free = xi.clone().try_inverse().unwrap();
            let s1 = frac * sh * free.trace().re.abs().max(0.1);
            let a = solve_a_update(&xi, s1, sh, 1.3).unwrap();
            let tr = sh * a.trace().re;
            prop_assert!(tr <= s1 + 1e-8);
            // Any feasible perturbation that keeps the trace can only increase the objective.
            let base = a_update_objective(&a, &xi, 1.3);
            for _ in 0..5 {
                let mut d = cscg_matrix(&mut rng, k, k, 1e-3);
                let t = d.trace() / C64::new(k as f64, 0.0);
                for i in 0..k { d[(i, i)] -= t; }
                prop_assert!(a_update_objective(&(&a + d), &xi, 1.3) >= base - 1e-10);
            }
        }

        #[test]
        fn optimal_points_survive_perturbation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let r = cscg_matrix(&mut rng, n, n, 1.0);
            let mut prob = ComplexQp::new(r.adjoint() * &r + CMatrix::identity(n, n) * C64::new(0.1, 0.0),
                cscg_vector(&mut rng, n, 1.0)).unwrap();
            for _ in 0..3 {
                prob.push(cscg_vector(&mut rng, n, 1.0), 0.5, Sense::Le, "rand").unwrap();
            }
            let rep = solve_qp(&prob, None, QpOptions::default()).unwrap();
            prop_assert_eq!(rep.status, SolveStatus::Optimal);
            for _ in 0..20 {
                let d = cscg_vector(&mut rng, n, 1.0);
                let d = &d * C64::new(1e-4 / d.norm(), 0.0);
                let z = &rep.z_star + d;
                if prob.max_violation(&z) <= 0.0 {
                    prop_assert!(prob.objective(&z) >= rep.objective - 1e-8);
                }
            }
        }
    }
}
