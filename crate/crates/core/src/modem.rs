//! Matrix-form OTFS modem with rectangular pulses.
//!
//! `X_TF = F_M X_DD F_N^H`, `s = (F_N^H ⊗ I_M) x_DD`, and the reduced cyclic
//! prefix copies the last `N_cp` samples of the frame to its front.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dft_matrix, CMatrix, CVector, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// Subcarriers (delay bins).
    pub m: usize,
    /// Time slots (Doppler bins).
    pub n: usize,
    /// Cyclic prefix length in samples.
    pub n_cp: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
}

impl FrameConfig {
    pub fn new(m: usize, n: usize, n_cp: usize, delta_f: f64, f_c: f64) -> Result<Self> {
        let cfg = FrameConfig {
            m,
            n,
            n_cp,
            delta_f,
            f_c,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid with 15 kHz spacing at 3.5 GHz.
    pub fn with_grid(m: usize, n: usize, n_cp: usize) -> Result<Self> {
        Self::new(m, n, n_cp, 15e3, 3.5e9)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("m", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.n_cp >= self.m * self.n {
            return Err(Error::param(
                "n_cp",
                format!("{} must be below M*N = {}", self.n_cp, self.m * self.n),
            ));
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return Err(Error::param("delta_f", "must be positive"));
        }
        if !(self.f_c.is_finite() && self.f_c > 0.0) {
            return Err(Error::param("f_c", "must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Samples per frame including the prefix.
    #[inline]
    pub fn frame_len(&self) -> usize {
        self.m * self.n + self.n_cp
    }

    pub fn cp_factor(&self) -> f64 {
        self.mn() as f64 / self.frame_len() as f64
    }

    pub fn slot_duration(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    #[inline]
    pub fn cell(&self, delay: usize, doppler: usize) -> usize {
        delay + self.m * doppler
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.m, index / self.m)
    }
}

/// Vectorized DD grid; entry `delay + M * doppler`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdVector {
    m: usize,
    entries: CVector,
}

impl DdVector {
    pub fn zeros(cfg: &FrameConfig) -> Self {
        DdVector {
            m: cfg.m,
            entries: CVector::zeros(cfg.mn()),
        }
    }

    pub fn from_vector(cfg: &FrameConfig, entries: CVector) -> Result<Self> {
        if entries.len() != cfg.mn() {
            return Err(Error::dim("DD vector", cfg.mn(), entries.len()));
        }
        Ok(DdVector { m: cfg.m, entries })
    }

    pub fn from_grid(grid: &CMatrix) -> Self {
        DdVector {
            m: grid.nrows(),
            entries: CVector::from_column_slice(grid.as_slice()),
        }
    }

    pub fn to_grid(&self) -> CMatrix {
        CMatrix::from_column_slice(self.m, self.entries.len() / self.m, self.entries.as_slice())
    }

    pub fn as_vector(&self) -> &CVector {
        &self.entries
    }

    pub fn as_mut_vector(&mut self) -> &mut CVector {
        &mut self.entries
    }

    pub fn into_vector(self) -> CVector {
        self.entries
    }
}

impl Deref for DdVector {
    type Target = CVector;
    fn deref(&self) -> &CVector {
        &self.entries
    }
}

fn check_grid(grid: &CMatrix, cfg: &FrameConfig, context: &'static str) -> Result<()> {
    if grid.nrows() != cfg.m {
        return Err(Error::dim(context, cfg.m, grid.nrows()));
    }
    if grid.ncols() != cfg.n {
        return Err(Error::dim(context, cfg.n, grid.ncols()));
    }
    Ok(())
}

/// `F_M X F_N^H`.
pub fn isfft_to_tf(grid: &CMatrix, cfg: &FrameConfig) -> Result<CMatrix> {
    check_grid(grid, cfg, "ISFFT input")?;
    Ok(dft_matrix(cfg.m) * grid * dft_matrix(cfg.n).adjoint())
}

/// `F_M^H Y F_N`.
pub fn sfft_to_dd(grid_tf: &CMatrix, cfg: &FrameConfig) -> Result<CMatrix> {
    check_grid(grid_tf, cfg, "SFFT input")?;
    Ok(dft_matrix(cfg.m).adjoint() * grid_tf * dft_matrix(cfg.n))
}

/// `(F_N^H ⊗ I_M) x`, evaluated as `X F_N^H` on the reshaped grid.
pub fn dd_to_time(x: &DdVector, cfg: &FrameConfig) -> Result<CVector> {
    if x.len() != cfg.mn() || x.m != cfg.m {
        return Err(Error::dim("DD vector", cfg.mn(), x.len()));
    }
    let s = x.to_grid() * dft_matrix(cfg.n).adjoint();
    Ok(CVector::from_column_slice(s.as_slice()))
}

/// `(F_N ⊗ I_M) r`.
pub fn time_to_dd(r: &CVector, cfg: &FrameConfig) -> Result<DdVector> {
    if r.len() != cfg.mn() {
        return Err(Error::dim("time vector", cfg.mn(), r.len()));
    }
    let grid = CMatrix::from_column_slice(cfg.m, cfg.n, r.as_slice()) * dft_matrix(cfg.n);
    Ok(DdVector::from_grid(&grid))
}

/// `Γ = [Γ_cp; I_MN]`, size `(MN + N_cp) x MN`.
pub fn cp_matrix(cfg: &FrameConfig) -> CMatrix {
    let mn = cfg.mn();
    CMatrix::from_fn(cfg.frame_len(), mn, |i, j| {
        let src = if i < cfg.n_cp { i + mn - cfg.n_cp } else { i - cfg.n_cp };
        if src == j {
            ONE
        } else {
            ZERO
        }
    })
}

pub fn add_cp(s: &CVector, cfg: &FrameConfig) -> Result<CVector> {
    let mn = cfg.mn();
    if cfg.n_cp >= mn {
        return Err(Error::param("n_cp", "prefix must be shorter than the frame"));
    }
    if s.len() != mn {
        return Err(Error::dim("add_cp input", mn, s.len()));
    }
    Ok(CVector::from_fn(cfg.frame_len(), |i, _| {
        if i < cfg.n_cp {
            s[i + mn - cfg.n_cp]
        } else {
            s[i - cfg.n_cp]
        }
    }))
}

pub fn remove_cp(s_tilde: &CVector, cfg: &FrameConfig) -> Result<CVector> {
    if s_tilde.len() != cfg.frame_len() {
        return Err(Error::dim("remove_cp input", cfg.frame_len(), s_tilde.len()));
    }
    Ok(s_tilde.rows(cfg.n_cp, cfg.mn()).into_owned())
}

/// Transmit signal `Γ (F_N^H ⊗ I_M) x`.
pub fn modulate(x: &DdVector, cfg: &FrameConfig) -> Result<CVector> {
    add_cp(&dd_to_time(x, cfg)?, cfg)
}

pub fn demodulate(r: &CVector, cfg: &FrameConfig) -> Result<DdVector> {
    time_to_dd(&remove_cp(r, cfg)?, cfg)
}
