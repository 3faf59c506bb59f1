//! Data compensation: dividing demodulated subcarriers by the known data
//! removes the payload and, when UEs occupy disjoint subcarriers, every
//! other UE's contribution. What remains is the delay-Doppler CSI.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::model::{shared_subcarrier, DataGrid, ResourceAssignment};
use crate::synthesis::{dft_rows, forward_plan, OfdmaFrameSet};

/// Data symbols below this modulus are treated as non-invertible.
pub const MIN_DATA_MODULUS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationMatrix {
    /// Diagonal `c_k` over all `N` subcarriers.
    pub diag: DVector<Complex64>,
    pub ue_index: usize,
}

impl CompensationMatrix {
    /// Subcarriers (1-based) where the diagonal is nonzero.
    pub fn support(&self) -> Vec<usize> {
        self.diag
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sqr() != 0.0)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Compensated CSI of one UE on one receive antenna, `G_k x N_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiBlock {
    pub values: DMatrix<Complex64>,
    pub antenna_index: usize,
    pub ue_index: usize,
}

impl CsiBlock {
    /// Row-major vectorization, entry `g * N_k + n`.
    pub fn vectorize(&self) -> DVector<Complex64> {
        let (rows, cols) = self.values.shape();
        DVector::from_fn(rows * cols, |i, _| self.values[(i / cols, i % cols)])
    }
}

/// Reciprocal of the data of UE position `ue` in OFDM symbol `symbol`
/// (1-based) on its subcarriers, zero elsewhere.
pub fn build_compensator(
    data: &DataGrid,
    ue: usize,
    assignment: &ResourceAssignment,
    symbol: usize,
    n_total: usize,
) -> Result<CompensationMatrix> {
    if ue >= data.n_ues() || symbol == 0 || symbol > data.n_symbols() {
        return Err(IsacError::DimensionMismatch(format!(
            "no data for UE position {ue}, symbol {symbol}"
        )));
    }
    let row = data.get(ue, symbol - 1);
    if row.len() != assignment.n_subcarriers() {
        return Err(IsacError::DimensionMismatch(format!(
            "{} data symbols for {} subcarriers",
            row.len(),
            assignment.n_subcarriers()
        )));
    }
    let mut diag = DVector::zeros(n_total);
    for (&z, &s) in assignment.subcarriers.iter().zip(row) {
        if z == 0 || z > n_total {
            return Err(IsacError::InvalidAssignment(format!("subcarrier {z} outside [1, {n_total}]")));
        }
        let modulus = s.norm();
        if !(modulus >= MIN_DATA_MODULUS) {
            return Err(IsacError::IllConditionedCompensation {
                ue: assignment.ue_index,
                symbol,
                subcarrier: z,
                modulus,
            });
        }
        diag[z - 1] = s.inv();
    }
    Ok(CompensationMatrix {
        diag,
        ue_index: assignment.ue_index,
    })
}

/// Fails if UE position `ue` shares a subcarrier with any other UE.
fn check_disjoint(frames: &OfdmaFrameSet, ue: usize) -> Result<()> {
    let a = &frames.assignments[ue];
    for (j, b) in frames.assignments.iter().enumerate() {
        if j == ue {
            continue;
        }
        if let Some(s) = shared_subcarrier(a, b) {
            return Err(IsacError::SubcarrierOverlap {
                ue_a: a.ue_index,
                ue_b: b.ue_index,
                subcarrier: s,
            });
        }
    }
    Ok(())
}

/// CSI of UE position `ue` on one antenna (0-based).
pub fn extract_csi(frames: &OfdmaFrameSet, ue: usize, antenna: usize) -> Result<CsiBlock> {
    let mut all = extract_csi_all(frames, ue)?;
    if antenna >= all.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "antenna {antenna} outside [0, {})",
            all.len()
        )));
    }
    Ok(all.swap_remove(antenna))
}

/// CSI of UE position `ue` on every receive antenna.
pub fn extract_csi_all(frames: &OfdmaFrameSet, ue: usize) -> Result<Vec<CsiBlock>> {
    if ue >= frames.assignments.len() {
        return Err(IsacError::DimensionMismatch(format!("no UE at position {ue}")));
    }
    check_disjoint(frames, ue)?;
    extract_csi_unchecked(frames, ue)
}

/// Compensation without the disjointness check, for measuring the leakage
/// that overlapping assignments cause.
pub fn extract_csi_unchecked(frames: &OfdmaFrameSet, ue: usize) -> Result<Vec<CsiBlock>> {
    let assignment = frames
        .assignments
        .get(ue)
        .ok_or_else(|| IsacError::DimensionMismatch(format!("no UE at position {ue}")))?;
    let n = frames.frames.first().map_or(0, |f| f.ncols());
    let m_r = frames.frames.first().map_or(0, |f| f.nrows());
    let (g_k, n_k) = (assignment.n_symbols(), assignment.n_subcarriers());
    let plan = forward_plan(n);
    let mut blocks: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(g_k, n_k); m_r];
    for (row, &psi) in assignment.symbols.iter().enumerate() {
        let frame = frames.frames.get(psi - 1).ok_or_else(|| {
            IsacError::DimensionMismatch(format!("symbol {psi} beyond {} frames", frames.frames.len()))
        })?;
        let comp = build_compensator(&frames.data, ue, assignment, psi, n)?;
        let freq = dft_rows(frame, plan.as_ref());
        for (m, block) in blocks.iter_mut().enumerate() {
            for (col, &z) in assignment.subcarriers.iter().enumerate() {
                block[(row, col)] = freq[(m, z - 1)] * comp.diag[z - 1];
            }
        }
    }
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(m, values)| CsiBlock {
            values,
            antenna_index: m,
            ue_index: assignment.ue_index,
        })
        .collect())
}

/// `sum |x - y|^2 / sum |y|^2` over all antennas.
pub fn relative_leakage(with_others: &[CsiBlock], alone: &[CsiBlock]) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    for (x, y) in with_others.iter().zip(alone) {
        diff += (&x.values - &y.values).norm_squared();
        base += y.values.norm_squared();
    }
    diff / base
}
