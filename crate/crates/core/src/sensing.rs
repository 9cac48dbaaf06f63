//! Ambiguity-function machinery for the transmitted OTFS frame.
//!
//! With `B = Γ (F_N^H ⊗ I_M)` the transmit map, the AF sample at bin `(l, k)`
//! is `f_lk = x^H A_lk x`, `A_lk = B^H J_l D_k B`, where `J_l` is a linear
//! (non-cyclic) delay and `D_k = diag(exp(-j2π k n / (MN + N_cp)))`.
//!
//! For data `d ~ CN(0, p_d I)` the expected squared AF at a bin is
//! `|c|² + p_d²(a + |b|²) + p_d x^H B_lk x + 2 p_d Re(b c̄)` with
//! `c = x^H A_p x`, `B_lk = A_pd A_pd^H + A_dp^H A_dp` (Table-I blocks).
//! Terms pairing `d` with `d^T` vanish under circular symmetry.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrangement::Arrangement;
use crate::error::{Error, Result};
use crate::linalg::{cis, cscg_vector, frobenius_sq, quad_form, real_part, trace, CMatrix, CVector, C64, ONE, ZERO};
use crate::modem::{cp_matrix, modulate, DdVector, FrameConfig};
use crate::parallel::{map_chunks, sum_in_order};
use crate::rng::stream;

const IMAG_TOL: f64 = 1e-9;

/// Linear down-shift: `(J_l v)[i] = v[i - l]` when in range.
pub fn delay_matrix(l: i64, size: usize) -> Result<CMatrix> {
    if l.unsigned_abs() as usize >= size {
        return Err(Error::param("l", format!("|{l}| must be below {size}")));
    }
    Ok(CMatrix::from_fn(size, size, |i, j| {
        if i as i64 - j as i64 == l {
            ONE
        } else {
            ZERO
        }
    }))
}

/// `diag(exp(-j2π k n / size))`.
pub fn doppler_matrix(k: i64, size: usize) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_fn(size, |n, _| doppler_phase(k, n, size)))
}

#[inline]
fn doppler_phase(k: i64, n: usize, size: usize) -> C64 {
    let r = (k.rem_euclid(size as i64) as usize * n) % size;
    cis(-2.0 * PI * r as f64 / size as f64)
}

/// `B = Γ (F_N^H ⊗ I_M)`.
pub fn transmit_matrix(cfg: &FrameConfig) -> CMatrix {
    let k = crate::linalg::dft_matrix(cfg.n)
        .adjoint()
        .kronecker(&CMatrix::identity(cfg.m, cfg.m));
    cp_matrix(cfg) * k
}

/// Dense `A_lk = B^H J_l D_k B`.
pub fn build_a_lk(l: i64, k: i64, cfg: &FrameConfig) -> Result<CMatrix> {
    let t = cfg.frame_len();
    let b = transmit_matrix(cfg);
    Ok(b.adjoint() * delay_matrix(l, t)? * doppler_matrix(k, t) * b)
}

/// `Σ_i s̃*(i) e^{-j2π k (i-l)/T} s̃(i-l)` on the time-domain frame.
pub fn correlate(s: &CVector, l: i64, k: i64) -> C64 {
    let t = s.len();
    let mut acc = ZERO;
    for i in 0..t {
        let src = i as i64 - l;
        if src < 0 || src >= t as i64 {
            continue;
        }
        let src = src as usize;
        acc += s[i].conj() * doppler_phase(k, src, t) * s[src];
    }
    acc
}

/// `f_lk = x^H A_lk x`, evaluated on the time-domain frame.
pub fn cross_correlation(x: &DdVector, l: i64, k: i64, cfg: &FrameConfig) -> Result<C64> {
    if l.unsigned_abs() as usize >= cfg.frame_len() {
        return Err(Error::param("l", "delay bin outside the frame"));
    }
    Ok(correlate(&modulate(x, cfg)?, l, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfBin {
    pub l: i64,
    pub k: i64,
}

/// All bins in `[-L̂, L̂] x [-Q̂, Q̂]` except `(0, 0)`, delay-major.
pub fn isl_bins(l_hat: usize, q_hat: usize) -> Vec<AfBin> {
    let (lh, qh) = (l_hat as i64, q_hat as i64);
    let mut out = Vec::with_capacity((2 * l_hat + 1) * (2 * q_hat + 1) - 1);
    for l in -lh..=lh {
        for k in -qh..=qh {
            if l != 0 || k != 0 {
                out.push(AfBin { l, k });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinConstants {
    pub bin: AfBin,
    /// `Φ_p^H A Φ_p`.
    pub a_p: CMatrix,
    /// `‖Φ_d^H A Φ_d‖_F²`.
    pub a: f64,
    /// `Tr(Φ_d^H A Φ_d)`.
    pub b: C64,
    /// `A_pd A_pd^H + A_dp^H A_dp`.
    pub b_mat: CMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensingConstants {
    pub l_hat: usize,
    pub q_hat: usize,
    pub frame_len: usize,
    pub bins: Vec<BinConstants>,
    /// `Φ_p^H B^H B Φ_p`.
    pub g_p: CMatrix,
    /// `Tr(Φ_d^H B^H B Φ_d)`.
    pub g_d: f64,
    /// `Σ (a + |b|²)`.
    pub c1: f64,
    /// `Σ B_lk`.
    pub b_sum: CMatrix,
    /// `Σ b̄_lk A_p,lk`.
    pub ab_sum: CMatrix,
}

/// `B[:, idx]` for the given DD cells.
pub fn transmit_columns(cfg: &FrameConfig, idx: &[usize]) -> Result<CMatrix> {
    let t = cfg.frame_len();
    let mut out = CMatrix::zeros(t, idx.len());
    for (j, &c) in idx.iter().enumerate() {
        let mut e = DdVector::zeros(cfg);
        e.as_mut_vector()[c] = ONE;
        let s = modulate(&e, cfg)?;
        out.set_column(j, &s);
    }
    Ok(out)
}

fn shift_rows(b: &CMatrix, l: i64, k: i64) -> CMatrix {
    let t = b.nrows();
    let mut z = CMatrix::zeros(t, b.ncols());
    for i in 0..t {
        let src = i as i64 - l;
        if src < 0 || src >= t as i64 {
            continue;
        }
        let src = src as usize;
        let ph = doppler_phase(k, src, t);
        for j in 0..b.ncols() {
            z[(i, j)] = ph * b[(src, j)];
        }
    }
    z
}

pub fn build_sensing_constants(
    arr: &Arrangement,
    cfg: &FrameConfig,
    l_hat: usize,
    q_hat: usize,
) -> Result<SensingConstants> {
    if l_hat >= cfg.frame_len() {
        return Err(Error::param("isl_max_delay", "must be below the frame length"));
    }
    if arr.grid() != (cfg.m, cfg.n) {
        return Err(Error::dim("arrangement grid", cfg.mn(), arr.grid().0 * arr.grid().1));
    }
    let (kp, kd) = (arr.k_p(), arr.k_d());
    let cells: Vec<usize> = arr.pilot_tx().iter().chain(arr.data_tx()).copied().collect();
    let bsel = transmit_columns(cfg, &cells)?;
    let bsel_h = bsel.adjoint();

    let bins: Vec<BinConstants> = isl_bins(l_hat, q_hat)
        .into_par_iter()
        .map(|bin| {
            let a_sel = &bsel_h * shift_rows(&bsel, bin.l, bin.k);
            let a_p = a_sel.view((0, 0), (kp, kp)).into_owned();
            let a_pd = a_sel.view((0, kp), (kp, kd)).into_owned();
            let a_dp = a_sel.view((kp, 0), (kd, kp)).into_owned();
            let a_dd = a_sel.view((kp, kp), (kd, kd)).into_owned();
            let b_mat = a_dp.adjoint() * &a_dp + &a_pd * a_pd.adjoint();
            BinConstants {
                bin,
                a_p,
                a: frobenius_sq(&a_dd),
                b: trace(&a_dd),
                b_mat,
            }
        })
        .collect();

    let bp = bsel.columns(0, kp);
    let bd = bsel.columns(kp, kd);
    let g_p = bp.adjoint() * bp;
    let g_d = bd.iter().map(|z| z.norm_sqr()).sum();
    let c1 = bins.iter().map(|b| b.a + b.b.norm_sqr()).sum();
    let mut b_sum = CMatrix::zeros(kp, kp);
    let mut ab_sum = CMatrix::zeros(kp, kp);
    for b in &bins {
        b_sum += &b.b_mat;
        ab_sum += &b.a_p * b.b.conj();
    }
    Ok(SensingConstants {
        l_hat,
        q_hat,
        frame_len: cfg.frame_len(),
        bins,
        g_p,
        g_d,
        c1,
        b_sum,
        ab_sum,
    })
}

/// Coefficients of `ISL(p_d) = c1 p_d² + c2 p_d + c3` for a fixed pilot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslPolynomial {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl SensingConstants {
    pub fn k_p(&self) -> usize {
        self.g_p.nrows()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    fn check_pilot(&self, x_p: &CVector) -> Result<()> {
        if x_p.len() != self.k_p() {
            return Err(Error::dim("pilot vector", self.k_p(), x_p.len()));
        }
        Ok(())
    }

    /// Pilot AF samples `x^H A_p,lk x` per bin.
    pub fn pilot_af(&self, x_p: &CVector) -> Vec<C64> {
        self.bins.iter().map(|b| quad_form(x_p, &b.a_p)).collect()
    }

    pub fn isl_polynomial(&self, x_p: &CVector) -> Result<IslPolynomial> {
        self.check_pilot(x_p)?;
        let mut c2 = real_part(quad_form(x_p, &self.b_sum), IMAG_TOL, "pilot/data cross term")?;
        let mut c3 = 0.0;
        for (b, c) in self.bins.iter().zip(self.pilot_af(x_p)) {
            c2 += 2.0 * (b.b * c.conj()).re;
            c3 += c.norm_sqr();
        }
        Ok(IslPolynomial { c1: self.c1, c2, c3 })
    }

    /// `x^H G_p x`.
    pub fn pilot_mainlobe(&self, x_p: &CVector) -> Result<f64> {
        self.check_pilot(x_p)?;
        real_part(quad_form(x_p, &self.g_p), IMAG_TOL, "pilot mainlobe")
    }

    /// SHA-256 key over everything the constants depend on.
    pub fn cache_key(cfg: &FrameConfig, arr: &Arrangement, l_hat: usize, q_hat: usize) -> String {
        let mut h = Sha256::new();
        for v in [cfg.m, cfg.n, cfg.n_cp, l_hat, q_hat] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(arr.fingerprint().as_bytes());
        h.update(b"isl-v1");
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads the constants from `dir` when cached, otherwise builds and stores them.
    pub fn load_or_build(
        dir: Option<&Path>,
        arr: &Arrangement,
        cfg: &FrameConfig,
        l_hat: usize,
        q_hat: usize,
    ) -> Result<SensingConstants> {
        let Some(dir) = dir else {
            return build_sensing_constants(arr, cfg, l_hat, q_hat);
        };
        let file = dir.join(format!("sensing-{}.bin", Self::cache_key(cfg, arr, l_hat, q_hat)));
        if let Ok(bytes) = fs::read(&file) {
            match bincode::deserialize::<SensingConstants>(&bytes) {
                Ok(c) => return Ok(c),
                Err(e) => log::warn!("ignoring unreadable cache {}: {e}", file.display()),
            }
        }
        let consts = build_sensing_constants(arr, cfg, l_hat, q_hat)?;
        fs::create_dir_all(dir).map_err(|e| Error::Cache(e.to_string()))?;
        let bytes = bincode::serialize(&consts).map_err(|e| Error::Cache(e.to_string()))?;
        fs::write(&file, bytes).map_err(|e| Error::Cache(e.to_string()))?;
        Ok(consts)
    }
}

/// Analytic expected ISL over CSCG data of power `p_d`.
pub fn expected_isl(p_d: f64, x_p: &CVector, consts: &SensingConstants) -> Result<f64> {
    if !(p_d >= 0.0) {
        return Err(Error::param("p_d", "must be nonnegative"));
    }
    let poly = consts.isl_polynomial(x_p)?;
    Ok(poly.c1 * p_d * p_d + poly.c2 * p_d + poly.c3)
}

/// `f̄_00 = p_d g_d + x^H G_p x`.
pub fn expected_mainlobe(p_d: f64, x_p: &CVector, consts: &SensingConstants) -> Result<f64> {
    Ok(p_d * consts.g_d + consts.pilot_mainlobe(x_p)?)
}

/// `P_T = f̄_00 / (MN + N_cp)`.
pub fn transmit_power(p_d: f64, x_p: &CVector, consts: &SensingConstants) -> Result<f64> {
    Ok(expected_mainlobe(p_d, x_p, consts)? / consts.frame_len as f64)
}

/// Mean `|f_lk|²` over `[-L̂, L̂] x [-Q̂, Q̂]`, including `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfMap {
    pub l_hat: usize,
    pub q_hat: usize,
    /// Row-major over delay then Doppler.
    pub values: Vec<f64>,
}

impl AfMap {
    pub fn get(&self, l: i64, k: i64) -> f64 {
        let cols = 2 * self.q_hat + 1;
        let r = (l + self.l_hat as i64) as usize;
        let c = (k + self.q_hat as i64) as usize;
        self.values[r * cols + c]
    }

    pub fn off_peak_sum(&self) -> f64 {
        self.values.iter().sum::<f64>() - self.get(0, 0)
    }

    /// Largest value on the `k = 0` slice away from the peak.
    pub fn max_zero_doppler_sidelobe(&self) -> f64 {
        let lh = self.l_hat as i64;
        (-lh..=lh)
            .filter(|&l| l != 0)
            .map(|l| self.get(l, 0))
            .fold(0.0, f64::max)
    }

    /// Largest value on the `l = 0` slice away from the peak.
    pub fn max_zero_delay_sidelobe(&self) -> f64 {
        let qh = self.q_hat as i64;
        (-qh..=qh)
            .filter(|&k| k != 0)
            .map(|k| self.get(0, k))
            .fold(0.0, f64::max)
    }
}

/// Empirical AF of pilot `x_p` plus CSCG data of power `p_d`, averaged over
/// `trials` draws. Trial `t` uses stream `(seed, 0, t)`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_af(
    x_p: &CVector,
    p_d: f64,
    arr: &Arrangement,
    cfg: &FrameConfig,
    l_hat: usize,
    q_hat: usize,
    seed: u64,
    trials: usize,
) -> Result<AfMap> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if x_p.len() != arr.k_p() {
        return Err(Error::dim("pilot vector", arr.k_p(), x_p.len()));
    }
    if l_hat >= cfg.frame_len() {
        return Err(Error::param("l_hat", "must be below the frame length"));
    }
    let bp = transmit_columns(cfg, arr.pilot_tx())?;
    let bd = transmit_columns(cfg, arr.data_tx())?;
    let s_pilot = &bp * x_p;
    let (lh, qh) = (l_hat as i64, q_hat as i64);
    let nbins = (2 * l_hat + 1) * (2 * q_hat + 1);
    let one_trial = |s: &CVector, acc: &mut [f64]| {
        let mut idx = 0;
        for l in -lh..=lh {
            for k in -qh..=qh {
                acc[idx] += correlate(s, l, k).norm_sqr();
                idx += 1;
            }
        }
    };
    if p_d == 0.0 {
        let mut acc = vec![0.0; nbins];
        one_trial(&s_pilot, &mut acc);
        return Ok(AfMap {
            l_hat,
            q_hat,
            values: acc,
        });
    }
    let parts = map_chunks(trials, 256, |a, b| {
        let mut acc = vec![0.0; nbins];
        for t in a..b {
            let mut rng = stream(seed, 0, t as u64, 0);
            let d = cscg_vector(&mut rng, arr.k_d(), p_d);
            let s = &s_pilot + &bd * d;
            one_trial(&s, &mut acc);
        }
        acc
    });
    let values = sum_in_order(parts).into_iter().map(|v| v / trials as f64).collect();
    Ok(AfMap { l_hat, q_hat, values })
}

/// Time-domain frame for a pilot plus data symbols on the arrangement.
pub fn frame_signal(x_p: &CVector, d: &CVector, arr: &Arrangement, cfg: &FrameConfig) -> Result<CVector> {
    let mut x = DdVector::zeros(cfg);
    for (&c, &v) in arr.pilot_tx().iter().zip(x_p.iter()) {
        x.as_mut_vector()[c] = v;
    }
    for (&c, &v) in arr.data_tx().iter().zip(d.iter()) {
        x.as_mut_vector()[c] = v;
    }
    modulate(&x, cfg)
}
