//! Integer-tap delay-Doppler channels and the estimator dictionaries.
//!
//! A path with delay `l` and Doppler `k` maps DD cell `(m, n)` to
//! `((m + l) mod M, (n + k) mod N)` with phase `exp(j2π k m / MN)`, times
//! `exp(-j2π (n + k) / N)` when the delay shift wraps. This is the exact
//! action of `(F_N ⊗ I_M) Π^l Δ^k (F_N^H ⊗ I_M)`; [`single_path_matrix`] keeps
//! the dense product as the reference route.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrangement::{gather, Arrangement};
use crate::error::{Error, Result};
use crate::linalg::{cis, cscg_vector, dft_matrix, CMatrix, CVector, C64, ZERO};
use crate::modem::{time_to_dd, DdVector, FrameConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DopplerSign {
    /// Doppler taps in `[0, Q]`.
    #[default]
    Unsigned,
    /// Doppler taps in `[-Q, Q]`.
    Signed,
}

/// The `(l, k)` tap set of an `(L, Q)` channel, delay-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapGrid {
    pub max_delay: usize,
    pub max_doppler: usize,
    pub sign: DopplerSign,
}

impl TapGrid {
    pub fn new(max_delay: usize, max_doppler: usize, sign: DopplerSign) -> Self {
        TapGrid {
            max_delay,
            max_doppler,
            sign,
        }
    }

    pub fn doppler_range(&self) -> RangeInclusive<i64> {
        let q = self.max_doppler as i64;
        match self.sign {
            DopplerSign::Unsigned => 0..=q,
            DopplerSign::Signed => -q..=q,
        }
    }

    pub fn doppler_count(&self) -> usize {
        match self.sign {
            DopplerSign::Unsigned => self.max_doppler + 1,
            DopplerSign::Signed => 2 * self.max_doppler + 1,
        }
    }

    /// `K_h`.
    pub fn len(&self) -> usize {
        (self.max_delay + 1) * self.doppler_count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, l: usize, k: i64) -> Option<usize> {
        let r = self.doppler_range();
        if l > self.max_delay || !r.contains(&k) {
            return None;
        }
        Some(l * self.doppler_count() + (k - r.start()) as usize)
    }

    pub fn coords(&self, i: usize) -> (usize, i64) {
        let nd = self.doppler_count();
        (i / nd, *self.doppler_range().start() + (i % nd) as i64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.len()).map(move |i| self.coords(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: C64,
    pub delay: usize,
    pub doppler: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub paths: Vec<Path>,
    pub taps: TapGrid,
    /// Prior variance of each DD channel coefficient.
    pub sigma_h2: f64,
    /// AWGN variance.
    pub sigma_n2: f64,
}

impl ChannelSpec {
    pub fn new(paths: Vec<Path>, taps: TapGrid, sigma_h2: f64, sigma_n2: f64) -> Result<Self> {
        let spec = ChannelSpec {
            paths,
            taps,
            sigma_h2,
            sigma_n2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Nonzero entries of the tap vector `h` as paths.
    pub fn from_taps(h: &CVector, taps: TapGrid, sigma_h2: f64, sigma_n2: f64) -> Result<Self> {
        if h.len() != taps.len() {
            return Err(Error::dim("tap vector", taps.len(), h.len()));
        }
        let paths = h
            .iter()
            .enumerate()
            .filter(|(_, g)| **g != ZERO)
            .map(|(i, &gain)| {
                let (delay, doppler) = taps.coords(i);
                Path { gain, delay, doppler }
            })
            .collect();
        Self::new(paths, taps, sigma_h2, sigma_n2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::param("paths", "at least one path required"));
        }
        for p in &self.paths {
            if self.taps.index(p.delay, p.doppler).is_none() {
                return Err(Error::param(
                    "paths",
                    format!(
                        "tap (l={}, k={}) outside L={}, Q={} ({:?})",
                        p.delay, p.doppler, self.taps.max_delay, self.taps.max_doppler, self.taps.sign
                    ),
                ));
            }
        }
        if !(self.sigma_h2 > 0.0) {
            return Err(Error::param("sigma_h2", "must be positive"));
        }
        if !(self.sigma_n2 >= 0.0) {
            return Err(Error::param("sigma_n2", "must be nonnegative"));
        }
        Ok(())
    }

    /// Dense tap vector `h` of length `K_h`.
    pub fn tap_vector(&self) -> CVector {
        let mut h = CVector::zeros(self.taps.len());
        for p in &self.paths {
            if let Some(i) = self.taps.index(p.delay, p.doppler) {
                h[i] += p.gain;
            }
        }
        h
    }
}

/// Destination cell and phase of DD cell `cell` under path `(l, k)`.
#[inline]
pub fn dd_shift(cfg: &FrameConfig, l: usize, k: i64, cell: usize) -> (usize, C64) {
    let (m, n) = (cfg.m, cfg.n);
    let (m0, n0) = cfg.coords(cell);
    let k_mod = k.rem_euclid(n as i64) as usize;
    let n1 = (n0 + k_mod) % n;
    let mut theta = 2.0 * PI * ((k.rem_euclid(cfg.mn() as i64) as usize * m0) % cfg.mn()) as f64 / cfg.mn() as f64;
    let shifted = m0 + l % m;
    let m1 = shifted % m;
    if shifted >= m {
        theta -= 2.0 * PI * n1 as f64 / n as f64;
    }
    (cfg.cell(m1, n1), cis(theta))
}

/// Dense `(F_N ⊗ I_M) Π^l Δ^k (F_N^H ⊗ I_M)`.
pub fn single_path_matrix(l: usize, k: i64, cfg: &FrameConfig) -> CMatrix {
    let mn = cfg.mn();
    let mut p = CMatrix::zeros(mn, mn);
    for t in 0..mn {
        let phase = cis(2.0 * PI * ((k.rem_euclid(mn as i64) as usize * t) % mn) as f64 / mn as f64);
        p[((t + l) % mn, t)] = phase;
    }
    let kf = dft_matrix(cfg.n).kronecker(&CMatrix::identity(cfg.m, cfg.m));
    &kf * p * kf.adjoint()
}

/// Dense `H_DD` for all paths of `spec`.
pub fn dd_channel_matrix(spec: &ChannelSpec, cfg: &FrameConfig) -> Result<CMatrix> {
    spec.validate()?;
    let mut h = CMatrix::zeros(cfg.mn(), cfg.mn());
    for p in &spec.paths {
        h += single_path_matrix(p.delay, p.doppler, cfg) * p.gain;
    }
    Ok(h)
}

/// `H_DD x` through the shift map.
pub fn apply_channel(spec: &ChannelSpec, cfg: &FrameConfig, x: &DdVector) -> Result<DdVector> {
    spec.validate()?;
    if x.len() != cfg.mn() {
        return Err(Error::dim("channel input", cfg.mn(), x.len()));
    }
    let mut y = DdVector::zeros(cfg);
    let out = y.as_mut_vector();
    for p in &spec.paths {
        for (c, &v) in x.iter().enumerate() {
            if v != ZERO {
                let (t, ph) = dd_shift(cfg, p.delay, p.doppler, c);
                out[t] += p.gain * ph * v;
            }
        }
    }
    Ok(y)
}

/// Tap vector with `paths` nonzero CSCG entries of variance `sigma_h2`;
/// `paths == taps.len()` gives the dense prior.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, taps: &TapGrid, sigma_h2: f64, paths: usize) -> Result<CVector> {
    let kh = taps.len();
    if paths == 0 || paths > kh {
        return Err(Error::param("paths", format!("must lie in 1..={kh}, got {paths}")));
    }
    if !(sigma_h2 > 0.0) {
        return Err(Error::param("sigma_h2", "must be positive"));
    }
    let gains = cscg_vector(rng, paths, sigma_h2);
    if paths == kh {
        return Ok(gains);
    }
    let mut h = CVector::zeros(kh);
    for (pos, g) in sample(rng, kh, paths).into_iter().zip(gains.iter()) {
        h[pos] = *g;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct RxObservation {
    pub y_dd: DdVector,
    pub y_p: CVector,
    pub y_d: CVector,
}

/// `y = H_DD x + (F_N ⊗ I_M) n`, `n ~ CN(0, σ_n² I)`, gathered on both regions.
pub fn simulate_rx<R: Rng + ?Sized>(
    x: &DdVector,
    spec: &ChannelSpec,
    cfg: &FrameConfig,
    arr: &Arrangement,
    rng: &mut R,
) -> Result<RxObservation> {
    let mut y = apply_channel(spec, cfg, x)?;
    if spec.sigma_n2 > 0.0 {
        let n = cscg_vector(rng, cfg.mn(), spec.sigma_n2);
        let n_dd = time_to_dd(&n, cfg)?;
        *y.as_mut_vector() += n_dd.as_vector();
    }
    let y_p = gather(y.as_vector(), arr.pilot_rx())?;
    let y_d = gather(y.as_vector(), arr.data_rx())?;
    Ok(RxObservation { y_dd: y, y_p, y_d })
}

/// One nonzero of a dictionary block column: row within the observation
/// region and its phase. `None` means the shifted cell left the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub row: usize,
    pub phase: C64,
}

/// Pilot and data dictionaries. Block `i` of `Ω̃_p` is `Ψ_p^H H_i Φ_p`
/// (`R_p x K_p`) for the `i`-th unit tap; each of its columns has at most one
/// nonzero, recorded in the link tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dictionaries {
    taps: TapGrid,
    k_p: usize,
    k_d: usize,
    r_p: usize,
    r_d: usize,
    pilot_links: Vec<Option<Link>>,
    data_links: Vec<Option<Link>>,
    omega_tilde_p: CMatrix,
}

fn link_table(cfg: &FrameConfig, taps: &TapGrid, tx: &[usize], rx: &[usize]) -> Vec<Option<Link>> {
    let mut row_of = vec![usize::MAX; cfg.mn()];
    for (r, &c) in rx.iter().enumerate() {
        row_of[c] = r;
    }
    let mut out = Vec::with_capacity(taps.len() * tx.len());
    for (l, k) in taps.iter() {
        for &c in tx {
            let (t, phase) = dd_shift(cfg, l, k, c);
            out.push((row_of[t] != usize::MAX).then(|| Link { row: row_of[t], phase }));
        }
    }
    out
}

pub fn build_dictionaries(arr: &Arrangement, cfg: &FrameConfig, taps: &TapGrid) -> Result<Dictionaries> {
    if arr.grid() != (cfg.m, cfg.n) {
        return Err(Error::dim("arrangement grid", cfg.mn(), arr.grid().0 * arr.grid().1));
    }
    let pilot_links = link_table(cfg, taps, arr.pilot_tx(), arr.pilot_rx());
    let data_links = link_table(cfg, taps, arr.data_tx(), arr.data_rx());
    let (k_p, r_p) = (arr.k_p(), arr.r_p());
    let mut omega_tilde_p = CMatrix::zeros(r_p, taps.len() * k_p);
    for (col, link) in pilot_links.iter().enumerate() {
        if let Some(lk) = link {
            omega_tilde_p[(lk.row, col)] = lk.phase;
        }
    }
    Ok(Dictionaries {
        taps: *taps,
        k_p,
        k_d: arr.k_d(),
        r_p,
        r_d: arr.r_d(),
        pilot_links,
        data_links,
        omega_tilde_p,
    })
}

impl Dictionaries {
    pub fn taps(&self) -> &TapGrid {
        &self.taps
    }
    pub fn k_h(&self) -> usize {
        self.taps.len()
    }
    pub fn k_p(&self) -> usize {
        self.k_p
    }
    pub fn k_d(&self) -> usize {
        self.k_d
    }
    pub fn r_p(&self) -> usize {
        self.r_p
    }
    pub fn r_d(&self) -> usize {
        self.r_d
    }

    /// Link of pilot `j` under tap `i`.
    #[inline]
    pub fn pilot_link(&self, i: usize, j: usize) -> Option<Link> {
        self.pilot_links[i * self.k_p + j]
    }

    #[inline]
    pub fn data_link(&self, i: usize, j: usize) -> Option<Link> {
        self.data_links[i * self.k_d + j]
    }

    /// `Ω̃_p`, `R_p x (K_h K_p)`.
    pub fn omega_tilde_p(&self) -> &CMatrix {
        &self.omega_tilde_p
    }

    /// `Ω̃_d`, `R_d x (K_h K_d)`, materialized on demand.
    pub fn omega_tilde_d(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.r_d, self.k_h() * self.k_d);
        for (col, link) in self.data_links.iter().enumerate() {
            if let Some(lk) = link {
                out[(lk.row, col)] = lk.phase;
            }
        }
        out
    }

    /// `Ω_p(x) = Ω̃_p (I ⊗ x)`, `R_p x K_h`.
    pub fn omega_p(&self, x_p: &CVector) -> Result<CMatrix> {
        if x_p.len() != self.k_p {
            return Err(Error::dim("pilot vector", self.k_p, x_p.len()));
        }
        let mut out = CMatrix::zeros(self.r_p, self.k_h());
        for i in 0..self.k_h() {
            for j in 0..self.k_p {
                if let Some(lk) = self.pilot_link(i, j) {
                    out[(lk.row, i)] += lk.phase * x_p[j];
                }
            }
        }
        Ok(out)
    }

    fn block_sum(
        &self,
        h: &CVector,
        rows: usize,
        cols: usize,
        link: impl Fn(usize, usize) -> Option<Link>,
    ) -> Result<CMatrix> {
        if h.len() != self.k_h() {
            return Err(Error::dim("tap vector", self.k_h(), h.len()));
        }
        let mut out = CMatrix::zeros(rows, cols);
        for (i, &hi) in h.iter().enumerate() {
            if hi == ZERO {
                continue;
            }
            for j in 0..cols {
                if let Some(lk) = link(i, j) {
                    out[(lk.row, j)] += hi * lk.phase;
                }
            }
        }
        Ok(out)
    }

    /// `H_d = Ψ_d^H H_DD Φ_d = Σ_i h_i Ω̃_{d,i}`.
    pub fn data_channel(&self, h: &CVector) -> Result<CMatrix> {
        self.block_sum(h, self.r_d, self.k_d, |i, j| self.data_link(i, j))
    }

    /// `Ψ_p^H H_DD Φ_p`.
    pub fn pilot_channel(&self, h: &CVector) -> Result<CMatrix> {
        self.block_sum(h, self.r_p, self.k_p, |i, j| self.pilot_link(i, j))
    }

    /// `Ω̃_d (C ⊗ I_{K_d}) Ω̃_d^H`, assembled from the link table.
    pub fn data_error_cov(&self, c: &CMatrix) -> Result<CMatrix> {
        let kh = self.k_h();
        if c.nrows() != kh || c.ncols() != kh {
            return Err(Error::dim("error covariance", kh, c.nrows()));
        }
        let mut out = CMatrix::zeros(self.r_d, self.r_d);
        let mut col_links: Vec<(usize, usize, C64)> = Vec::with_capacity(kh);
        for j in 0..self.k_d {
            col_links.clear();
            for i in 0..kh {
                if let Some(lk) = self.data_link(i, j) {
                    col_links.push((i, lk.row, lk.phase));
                }
            }
            for &(a, ra, pa) in &col_links {
                for &(b, rb, pb) in &col_links {
                    out[(ra, rb)] += c[(a, b)] * pa * pb.conj();
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::{build_arrangement, scatter, Block, GuardPlan};
    use crate::linalg::{max_abs, max_abs_slice, ONE};
    use crate::modem::{dd_to_time, time_to_dd};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(l: usize, k: i64, taps: TapGrid) -> ChannelSpec {
        ChannelSpec::new(
            vec![Path {
                gain: ONE,
                delay: l,
                doppler: k,
            }],
            taps,
            0.5,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn tap_indexing_is_delay_major() {
        let t = TapGrid::new(7, 3, DopplerSign::Unsigned);
        assert_eq!(t.len(), 32);
        assert_eq!(t.index(2, 1), Some(9));
        assert_eq!(t.coords(9), (2, 1));
        let s = TapGrid::new(1, 2, DopplerSign::Signed);
        assert_eq!(s.len(), 10);
        assert_eq!(s.index(1, -2), Some(5));
        assert_eq!(s.coords(5), (1, -2));
        assert_eq!(s.index(0, 3), None);
    }

    #[test]
    fn identity_path_is_identity() {
        let cfg = FrameConfig::with_grid(4, 4, 0).unwrap();
        let h = dd_channel_matrix(&unit(0, 0, TapGrid::new(0, 0, DopplerSign::Unsigned)), &cfg).unwrap();
        assert!(max_abs(&(h - CMatrix::identity(16, 16))) < 1e-12);
    }

    #[test]
    fn shift_map_matches_dense_matrix() {
        for (m, n) in [(4, 2), (3, 5), (4, 4), (2, 6)] {
            let cfg = FrameConfig::with_grid(m, n, 0).unwrap();
            for l in 0..m {
                for k in -(n as i64)..(n as i64) {
                    let h = single_path_matrix(l, k, &cfg);
                    for c in 0..cfg.mn() {
                        let (t, ph) = dd_shift(&cfg, l, k, c);
                        let mut col = h.column(c).into_owned();
                        col[t] -= ph;
                        assert!(max_abs_slice(col.as_slice()) < 1e-12, "m={m} n={n} l={l} k={k} c={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn delay_path_matches_time_pipeline() {
        let cfg = FrameConfig::with_grid(4, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DdVector::from_vector(&cfg, cscg_vector(&mut rng, 8, 1.0)).unwrap();
        for l in 0..4 {
            let spec = unit(l, 0, TapGrid::new(3, 0, DopplerSign::Unsigned));
            let y = apply_channel(&spec, &cfg, &x).unwrap();
            let s = dd_to_time(&x, &cfg).unwrap();
            let shifted = CVector::from_fn(8, |t, _| s[(t + 8 - l) % 8]);
            let want = time_to_dd(&shifted, &cfg).unwrap();
            assert!((y.as_vector() - want.as_vector()).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_matrix_is_linear_in_paths() {
        let cfg = FrameConfig::with_grid(3, 4, 0).unwrap();
        let taps = TapGrid::new(2, 1, DopplerSign::Signed);
        let a = Path {
            gain: C64::new(0.3, -0.2),
            delay: 1,
            doppler: -1,
        };
        let b = Path {
            gain: C64::new(-0.7, 0.1),
            delay: 2,
            doppler: 1,
        };
        let both = ChannelSpec::new(vec![a, b], taps, 0.5, 0.0).unwrap();
        let ha = ChannelSpec::new(vec![a], taps, 0.5, 0.0).unwrap();
        let hb = ChannelSpec::new(vec![b], taps, 0.5, 0.0).unwrap();
        let diff = dd_channel_matrix(&both, &cfg).unwrap()
            - dd_channel_matrix(&ha, &cfg).unwrap()
            - dd_channel_matrix(&hb, &cfg).unwrap();
        assert!(max_abs(&diff) < 1e-12);
    }

    #[test]
    fn out_of_range_taps_rejected() {
        let taps = TapGrid::new(1, 1, DopplerSign::Unsigned);
        let p = Path {
            gain: ONE,
            delay: 2,
            doppler: 0,
        };
        assert!(ChannelSpec::new(vec![p], taps, 0.5, 0.0).is_err());
        let q = Path {
            gain: ONE,
            delay: 0,
            doppler: -1,
        };
        assert!(ChannelSpec::new(vec![q], taps, 0.5, 0.0).is_err());
        assert!(ChannelSpec::new(vec![], taps, 0.5, 0.0).is_err());
    }

    #[test]
    fn draw_respects_sparsity() {
        let taps = TapGrid::new(3, 2, DopplerSign::Unsigned);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(draw_channel(&mut rng, &taps, 0.5, 0).is_err());
        assert!(draw_channel(&mut rng, &taps, 0.5, 13).is_err());
        let h = draw_channel(&mut rng, &taps, 0.5, 1).unwrap();
        assert_eq!(h.iter().filter(|z| **z != ZERO).count(), 1);
        let h = draw_channel(&mut rng, &taps, 0.5, 5).unwrap();
        let spec = ChannelSpec::from_taps(&h, taps, 0.5, 0.1).unwrap();
        assert_eq!(spec.paths.len(), 5);
        assert_eq!(spec.tap_vector(), h);
    }

    #[test]
    fn dense_draw_covariance() {
        let taps = TapGrid::new(1, 1, DopplerSign::Unsigned);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 100_000;
        let mut acc = CMatrix::zeros(4, 4);
        for _ in 0..trials {
            let h = draw_channel(&mut rng, &taps, 0.5, 4).unwrap();
            acc += &h * h.adjoint();
        }
        acc /= C64::new(trials as f64, 0.0);
        let target = CMatrix::identity(4, 4) * C64::new(0.5, 0.0);
        let rel = (acc - &target).norm() / target.norm();
        assert!(rel < 0.03, "relative error {rel}");
    }

    #[test]
    fn noiseless_identity_rx() {
        let cfg = FrameConfig::with_grid(4, 4, 0).unwrap();
        let arr = crate::arrangement::Arrangement::from_indices(&cfg, vec![0], vec![5], vec![0], vec![5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DdVector::from_vector(&cfg, cscg_vector(&mut rng, 16, 1.0)).unwrap();
        let spec = unit(0, 0, TapGrid::new(0, 0, DopplerSign::Unsigned));
        let rx = simulate_rx(&x, &spec, &cfg, &arr, &mut rng).unwrap();
        assert_eq!(rx.y_dd, x);
    }

    fn small_plan() -> (FrameConfig, crate::arrangement::Arrangement, TapGrid) {
        let cfg = FrameConfig::with_grid(4, 8, 4).unwrap();
        let plan = GuardPlan {
            pilot_block: Block {
                delay_start: 0,
                delay_len: 4,
                doppler_start: 0,
                doppler_len: 2,
            },
            delay_margin: 1,
            doppler_margin: 1,
            doppler_sign: DopplerSign::Unsigned,
            data_count: None,
        };
        (cfg, build_arrangement(&cfg, &plan).unwrap(), plan.taps())
    }

    #[test]
    fn pilot_only_frame_leaves_data_region_silent() {
        let (cfg, arr, taps) = small_plan();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xp = cscg_vector(&mut rng, arr.k_p(), 1.0);
        let x = scatter(&xp, arr.pilot_tx(), &cfg).unwrap();
        let h = draw_channel(&mut rng, &taps, 0.5, taps.len()).unwrap();
        let spec = ChannelSpec::from_taps(&h, taps, 0.5, 0.0).unwrap();
        let rx = simulate_rx(&x, &spec, &cfg, &arr, &mut rng).unwrap();
        assert!(rx.y_d.norm() < 1e-12);
    }

    #[test]
    fn dd_noise_covariance_is_white() {
        let cfg = FrameConfig::with_grid(2, 4, 0).unwrap();
        let arr = crate::arrangement::Arrangement::from_indices(&cfg, vec![0], vec![], vec![0], vec![]).unwrap();
        let taps = TapGrid::new(0, 0, DopplerSign::Unsigned);
        let spec = ChannelSpec::new(
            vec![Path {
                gain: ONE,
                delay: 0,
                doppler: 0,
            }],
            taps,
            0.5,
            0.2,
        )
        .unwrap();
        let x = DdVector::zeros(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 10_000;
        let mut acc = CMatrix::zeros(8, 8);
        for _ in 0..trials {
            let rx = simulate_rx(&x, &spec, &cfg, &arr, &mut rng).unwrap();
            acc += rx.y_dd.as_vector() * rx.y_dd.as_vector().adjoint();
        }
        acc /= C64::new(trials as f64, 0.0);
        let target = CMatrix::identity(8, 8) * C64::new(0.2, 0.0);
        assert!((acc - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn zero_shift_dictionary_is_identity_selection() {
        let cfg = FrameConfig::with_grid(4, 4, 0).unwrap();
        let arr = crate::arrangement::Arrangement::from_indices(&cfg, vec![1, 6], vec![], vec![1, 6], vec![]).unwrap();
        let d = build_dictionaries(&arr, &cfg, &TapGrid::new(0, 0, DopplerSign::Unsigned)).unwrap();
        assert!(max_abs(&(d.omega_tilde_p() - CMatrix::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn table3_dictionary_dims() {
        let cfg = FrameConfig::with_grid(8, 16, 16).unwrap();
        let plan = GuardPlan::table3();
        let arr = build_arrangement(&cfg, &plan).unwrap();
        let d = build_dictionaries(&arr, &cfg, &plan.taps()).unwrap();
        let xp = CVector::from_element(arr.k_p(), ONE);
        let op = d.omega_p(&xp).unwrap();
        assert_eq!((op.nrows(), op.ncols()), (48, 32));
    }

    #[test]
    fn data_error_cov_matches_kronecker() {
        let (cfg, arr, taps) = small_plan();
        let d = build_dictionaries(&arr, &cfg, &taps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = crate::linalg::cscg_matrix(&mut rng, taps.len(), taps.len(), 1.0);
        let c = &a * a.adjoint();
        let od = d.omega_tilde_d();
        let dense = &od * c.kronecker(&CMatrix::identity(d.k_d(), d.k_d())) * od.adjoint();
        assert!(max_abs(&(dense - d.data_error_cov(&c).unwrap())) < 1e-10);
        let h = cscg_vector(&mut rng, taps.len(), 0.5);
        let hd = &od * h.kronecker(&CMatrix::identity(d.k_d(), d.k_d()));
        assert!(max_abs(&(hd - d.data_channel(&h).unwrap())) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn two_routes_agree(seed in any::<u64>(), m in 3usize..9, n in 3usize..9, sparse in 1usize..5) {
            let cfg = FrameConfig::with_grid(m, n, 0).unwrap();
            let plan = GuardPlan {
                pilot_block: Block { delay_start: 0, delay_len: 1.max(m / 2), doppler_start: 0, doppler_len: 1 },
                delay_margin: 1,
                doppler_margin: 1,
                doppler_sign: DopplerSign::Unsigned,
                data_count: None,
            };
            let arr = build_arrangement(&cfg, &plan).unwrap();
            let taps = plan.taps();
            let d = build_dictionaries(&arr, &cfg, &taps).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xp = cscg_vector(&mut rng, arr.k_p(), 1.0);
            let h = draw_channel(&mut rng, &taps, 0.5, sparse.min(taps.len())).unwrap();
            let spec = ChannelSpec::from_taps(&h, taps, 0.5, 0.0).unwrap();
            let hdd = dd_channel_matrix(&spec, &cfg).unwrap();
            let x = scatter(&xp, arr.pilot_tx(), &cfg).unwrap();
            let route1 = gather(&(&hdd * x.as_vector()), arr.pilot_rx()).unwrap();
            let route2 = d.omega_p(&xp).unwrap() * &h;
            prop_assert!((route1 - &route2).norm() < 1e-10);
            let ident = CMatrix::identity(taps.len(), taps.len());
            let lifted = d.omega_tilde_p() * ident.kronecker(&xp);
            prop_assert!(max_abs(&(lifted - d.omega_p(&xp).unwrap())) < 1e-10);
        }
    }
}
