//! Pilot, data and guard placement on the DD grid.
//!
//! A [`GuardPlan`] fixes a rectangular pilot block and the channel extent the
//! layout must tolerate. Data cells avoid the block dilated by every
//! difference of two channel shifts, so the pilot and data observation regions
//! never overlap. All dilations wrap cyclically in both axes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{single_path_matrix, DopplerSign, TapGrid};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, CMatrix, CVector, ONE};
use crate::modem::{DdVector, FrameConfig};

/// Rectangle `[delay_start, delay_start + delay_len) x [doppler_start, doppler_start + doppler_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub delay_start: usize,
    pub delay_len: usize,
    pub doppler_start: usize,
    pub doppler_len: usize,
}

impl Block {
    pub fn cells(&self, cfg: &FrameConfig) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.delay_len * self.doppler_len);
        for k in self.doppler_start..self.doppler_start + self.doppler_len {
            for l in self.delay_start..self.delay_start + self.delay_len {
                out.push(cfg.cell(l, k));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardPlan {
    pub pilot_block: Block,
    /// Largest channel delay tap the layout is guarded against.
    pub delay_margin: usize,
    /// Largest channel Doppler tap the layout is guarded against.
    pub doppler_margin: usize,
    #[serde(default)]
    pub doppler_sign: DopplerSign,
    /// Number of data cells; `None` takes every eligible cell.
    #[serde(default)]
    pub data_count: Option<usize>,
}

impl GuardPlan {
    pub fn taps(&self) -> TapGrid {
        TapGrid::new(self.delay_margin, self.doppler_margin, self.doppler_sign)
    }

    /// Table III layout: 8x16 grid, pilot block spanning all delays and
    /// three Doppler columns, 40 data cells, `L = 7`, `Q = 3`.
    pub fn table3() -> Self {
        GuardPlan {
            pilot_block: Block {
                delay_start: 0,
                delay_len: 8,
                doppler_start: 0,
                doppler_len: 3,
            },
            delay_margin: 7,
            doppler_margin: 3,
            doppler_sign: DopplerSign::Unsigned,
            data_count: Some(40),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrangement {
    m: usize,
    n: usize,
    pilot_tx: Vec<usize>,
    data_tx: Vec<usize>,
    pilot_rx: Vec<usize>,
    data_rx: Vec<usize>,
    pilot_block: Option<Block>,
}

fn dilate(cells: &[usize], cfg: &FrameConfig, delays: &[i64], dopplers: &[i64]) -> BTreeSet<usize> {
    let (m, n) = (cfg.m as i64, cfg.n as i64);
    let mut out = BTreeSet::new();
    for &c in cells {
        let (l0, k0) = cfg.coords(c);
        for &dl in delays {
            for &dk in dopplers {
                let l = (l0 as i64 + dl).rem_euclid(m) as usize;
                let k = (k0 as i64 + dk).rem_euclid(n) as usize;
                out.insert(cfg.cell(l, k));
            }
        }
    }
    out
}

fn shift_offsets(taps: &TapGrid) -> (Vec<i64>, Vec<i64>) {
    let delays = (0..=taps.max_delay as i64).collect();
    let dopplers = taps.doppler_range().collect();
    (delays, dopplers)
}

fn difference_offsets(v: &[i64]) -> Vec<i64> {
    let set: BTreeSet<i64> = v.iter().flat_map(|a| v.iter().map(move |b| a - b)).collect();
    set.into_iter().collect()
}

pub fn build_arrangement(cfg: &FrameConfig, plan: &GuardPlan) -> Result<Arrangement> {
    let b = plan.pilot_block;
    if b.delay_len == 0 || b.delay_start + b.delay_len > cfg.m {
        return Err(Error::Layout {
            dimension: "delay",
            reason: format!(
                "pilot rows [{}, {}) outside 0..{}",
                b.delay_start,
                b.delay_start + b.delay_len,
                cfg.m
            ),
        });
    }
    if b.doppler_len == 0 || b.doppler_start + b.doppler_len > cfg.n {
        return Err(Error::Layout {
            dimension: "Doppler",
            reason: format!(
                "pilot columns [{}, {}) outside 0..{}",
                b.doppler_start,
                b.doppler_start + b.doppler_len,
                cfg.n
            ),
        });
    }
    if plan.delay_margin >= cfg.m {
        return Err(Error::Layout {
            dimension: "delay",
            reason: format!("margin {} must be below M = {}", plan.delay_margin, cfg.m),
        });
    }
    let doppler_extent = match plan.doppler_sign {
        DopplerSign::Unsigned => plan.doppler_margin,
        DopplerSign::Signed => 2 * plan.doppler_margin,
    };
    if doppler_extent >= cfg.n {
        return Err(Error::Layout {
            dimension: "Doppler",
            reason: format!("channel Doppler spread {doppler_extent} must be below N = {}", cfg.n),
        });
    }

    let taps = plan.taps();
    let (delays, dopplers) = shift_offsets(&taps);
    let pilot_tx = b.cells(cfg);
    let pilot_rx: Vec<usize> = dilate(&pilot_tx, cfg, &delays, &dopplers).into_iter().collect();
    let forbidden = dilate(
        &pilot_tx,
        cfg,
        &difference_offsets(&delays),
        &difference_offsets(&dopplers),
    );

    // Scan Doppler columns starting just after the block, delay fastest.
    let mut eligible = Vec::new();
    for dk in 0..cfg.n {
        let k = (b.doppler_start + b.doppler_len + dk) % cfg.n;
        for l in 0..cfg.m {
            let c = cfg.cell(l, k);
            if !forbidden.contains(&c) {
                eligible.push(c);
            }
        }
    }
    let want = plan.data_count.unwrap_or(eligible.len());
    if want > eligible.len() {
        return Err(Error::Layout {
            dimension: "Doppler",
            reason: format!(
                "{want} data cells requested but only {} cells clear the pilot guard",
                eligible.len()
            ),
        });
    }
    let mut data_tx: Vec<usize> = eligible[..want].to_vec();
    data_tx.sort_unstable();
    let data_rx: Vec<usize> = dilate(&data_tx, cfg, &delays, &dopplers).into_iter().collect();

    let arr = Arrangement {
        m: cfg.m,
        n: cfg.n,
        pilot_tx,
        data_tx,
        pilot_rx,
        data_rx,
        pilot_block: Some(b),
    };
    arr.validate()?;
    Ok(arr)
}

/// Pass/fail plus the largest pilot/data leakage entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecouplingReport {
    pub decoupled: bool,
    pub max_leakage: f64,
}

pub const LEAKAGE_TOL: f64 = 1e-9;

/// Checks `Ψ_p^H H Φ_d = 0` and `Ψ_d^H H Φ_p = 0` for every unit single-path
/// channel in `taps`, using the dense channel matrix.
pub fn verify_decoupling(arr: &Arrangement, cfg: &FrameConfig, taps: &TapGrid) -> DecouplingReport {
    let mut worst = 0.0f64;
    for (l, k) in taps.iter() {
        let h = single_path_matrix(l, k, cfg);
        for &r in &arr.pilot_rx {
            for &c in &arr.data_tx {
                worst = worst.max(h[(r, c)].norm());
            }
        }
        for &r in &arr.data_rx {
            for &c in &arr.pilot_tx {
                worst = worst.max(h[(r, c)].norm());
            }
        }
    }
    DecouplingReport {
        decoupled: worst < LEAKAGE_TOL,
        max_leakage: worst,
    }
}

impl Arrangement {
    /// Arrangement from explicit index lists; lists are kept in the given order.
    pub fn from_indices(
        cfg: &FrameConfig,
        pilot_tx: Vec<usize>,
        data_tx: Vec<usize>,
        pilot_rx: Vec<usize>,
        data_rx: Vec<usize>,
    ) -> Result<Self> {
        let arr = Arrangement {
            m: cfg.m,
            n: cfg.n,
            pilot_tx,
            data_tx,
            pilot_rx,
            data_rx,
            pilot_block: None,
        };
        arr.validate()?;
        Ok(arr)
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.m * self.n;
        for list in [&self.pilot_tx, &self.data_tx, &self.pilot_rx, &self.data_rx] {
            check_indices(list, size)?;
        }
        let pilots: BTreeSet<_> = self.pilot_tx.iter().collect();
        if let Some(&c) = self.data_tx.iter().find(|c| pilots.contains(c)) {
            return Err(Error::Index {
                index: c,
                size,
                reason: "cell carries both pilot and data",
            });
        }
        let prx: BTreeSet<_> = self.pilot_rx.iter().collect();
        if let Some(&c) = self.data_rx.iter().find(|c| prx.contains(c)) {
            return Err(Error::Index {
                index: c,
                size,
                reason: "cell observed in both pilot and data regions",
            });
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.m, self.n)
    }
    pub fn pilot_tx(&self) -> &[usize] {
        &self.pilot_tx
    }
    pub fn data_tx(&self) -> &[usize] {
        &self.data_tx
    }
    pub fn pilot_rx(&self) -> &[usize] {
        &self.pilot_rx
    }
    pub fn data_rx(&self) -> &[usize] {
        &self.data_rx
    }
    pub fn pilot_block(&self) -> Option<Block> {
        self.pilot_block
    }
    pub fn k_p(&self) -> usize {
        self.pilot_tx.len()
    }
    pub fn k_d(&self) -> usize {
        self.data_tx.len()
    }
    pub fn r_p(&self) -> usize {
        self.pilot_rx.len()
    }
    pub fn r_d(&self) -> usize {
        self.data_rx.len()
    }

    /// `K_p / (K_p + K_d)`.
    pub fn pilot_ratio(&self) -> f64 {
        self.k_p() as f64 / (self.k_p() + self.k_d()) as f64
    }

    /// `(MN - K_p - K_d) / MN`.
    pub fn guard_ratio(&self) -> f64 {
        let mn = (self.m * self.n) as f64;
        (mn - (self.k_p() + self.k_d()) as f64) / mn
    }

    /// Stable content hash, used as a cache key.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.m as u64).to_le_bytes());
        hasher.update((self.n as u64).to_le_bytes());
        for list in [&self.pilot_tx, &self.data_tx, &self.pilot_rx, &self.data_rx] {
            hasher.update((list.len() as u64).to_le_bytes());
            for &i in list.iter() {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Dense 0/1 selection matrix with one column per index.
    pub fn selection_matrix(&self, idx: &[usize]) -> CMatrix {
        let mut out = CMatrix::zeros(self.m * self.n, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            out[(i, j)] = ONE;
        }
        out
    }
}

fn check_indices(idx: &[usize], size: usize) -> Result<()> {
    let mut seen = vec![false; size];
    for &i in idx {
        if i >= size {
            return Err(Error::Index {
                index: i,
                size,
                reason: "out of range",
            });
        }
        if seen[i] {
            return Err(Error::Index {
                index: i,
                size,
                reason: "duplicate",
            });
        }
        seen[i] = true;
    }
    Ok(())
}

/// Places `values` on `idx`, zeros elsewhere.
pub fn scatter(values: &CVector, idx: &[usize], cfg: &FrameConfig) -> Result<DdVector> {
    if values.len() != idx.len() {
        return Err(Error::dim("scatter values", idx.len(), values.len()));
    }
    check_indices(idx, cfg.mn())?;
    let mut x = DdVector::zeros(cfg);
    let v = x.as_mut_vector();
    for (&i, &z) in idx.iter().zip(values.iter()) {
        v[i] = z;
    }
    Ok(x)
}

pub fn gather(x: &CVector, idx: &[usize]) -> Result<CVector> {
    check_indices(idx, x.len())?;
    Ok(CVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i])))
}

/// Max entry of `Φ^T Φ - I` for the given index list.
pub fn selection_orthonormality_defect(arr: &Arrangement, idx: &[usize]) -> f64 {
    let phi = arr.selection_matrix(idx);
    max_abs(&(phi.transpose() * &phi - CMatrix::identity(idx.len(), idx.len())))
}
