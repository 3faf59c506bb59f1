//! Shared domain types: system numerology, per-UE resource assignments,
//! propagation paths and the transmitted data grid.
//!
//! All index vectors (subcarriers and sensing symbols) are 1-based, exactly
//! as they appear in the CRB closed forms. Conversion to 0-based storage
//! happens only where a buffer is indexed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

const REL_TOL: f64 = 1e-12;

/// Global OFDMA numerology and array geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Total number of subcarriers `N`.
    pub n_subcarriers: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
    /// Full OFDM symbol duration (CP included) in seconds.
    pub symbol_duration: f64,
    /// Cyclic prefix duration in seconds.
    pub cp_duration: f64,
    /// Duration of one time-domain sample in seconds.
    pub sample_duration: f64,
    pub n_rx_antennas: usize,
    pub n_tx_antennas: usize,
    pub n_ues: usize,
    /// Number of OFDM symbols `G` in a frame set.
    pub n_symbols: usize,
    /// Antenna element spacing in meters.
    pub antenna_spacing: f64,
    /// Per-sample time-domain noise power.
    pub noise_power: f64,
}

impl Default for SystemConfig {
    /// 48-subcarrier, 48-symbol mmWave numerology with 100 kHz spacing at
    /// 28 GHz, 8 receive and 2 transmit antennas, three UEs.
    fn default() -> Self {
        let n = 48;
        let df = 100e3;
        let t_sam = 1.0 / (n as f64 * df);
        let t_s = 1.0 / 90e3;
        let fc = 28e9;
        Self {
            n_subcarriers: n,
            subcarrier_spacing: df,
            carrier_freq: fc,
            symbol_duration: t_s,
            cp_duration: t_s - n as f64 * t_sam,
            sample_duration: t_sam,
            n_rx_antennas: 8,
            n_tx_antennas: 2,
            n_ues: 3,
            n_symbols: 48,
            antenna_spacing: SPEED_OF_LIGHT / fc / 2.0,
            noise_power: 1e-3,
        }
    }
}

impl SystemConfig {
    /// Builds a configuration from the subcarrier count and spacing, deriving
    /// the sample and CP durations from the given symbol duration.
    pub fn with_numerology(
        n_subcarriers: usize,
        subcarrier_spacing: f64,
        carrier_freq: f64,
        symbol_duration: f64,
    ) -> Result<Self> {
        let t_sam = 1.0 / (n_subcarriers as f64 * subcarrier_spacing);
        let cfg = Self {
            n_subcarriers,
            subcarrier_spacing,
            carrier_freq,
            symbol_duration,
            cp_duration: symbol_duration - n_subcarriers as f64 * t_sam,
            sample_duration: t_sam,
            antenna_spacing: SPEED_OF_LIGHT / carrier_freq / 2.0,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subcarriers", self.n_subcarriers),
            ("n_rx_antennas", self.n_rx_antennas),
            ("n_tx_antennas", self.n_tx_antennas),
            ("n_ues", self.n_ues),
            ("n_symbols", self.n_symbols),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(IsacError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        let positive = [
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("carrier_freq", self.carrier_freq),
            ("symbol_duration", self.symbol_duration),
            ("cp_duration", self.cp_duration),
            ("sample_duration", self.sample_duration),
            ("antenna_spacing", self.antenna_spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(IsacError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.noise_power.is_finite() && self.noise_power >= 0.0) {
            return Err(IsacError::InvalidConfig(format!(
                "noise_power must be >= 0, got {}",
                self.noise_power
            )));
        }
        let n = self.n_subcarriers as f64;
        let body = n * self.sample_duration;
        if !rel_close(self.symbol_duration, self.cp_duration + body, REL_TOL) {
            return Err(IsacError::InvalidConfig(format!(
                "symbol_duration {} != cp_duration + N*sample_duration = {}",
                self.symbol_duration,
                self.cp_duration + body
            )));
        }
        if !rel_close(self.sample_duration, 1.0 / (n * self.subcarrier_spacing), REL_TOL) {
            return Err(IsacError::InvalidConfig(format!(
                "sample_duration {} != 1/(N*subcarrier_spacing) = {}",
                self.sample_duration,
                1.0 / (n * self.subcarrier_spacing)
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Array phase increment `2 pi d cos(theta) / lambda` for a physical angle.
    pub fn spatial_phase(&self, angle: f64) -> f64 {
        2.0 * PI * self.antenna_spacing * angle.cos() / self.wavelength()
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Subcarrier and sensing-symbol indices assigned to one UE (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceAssignment {
    pub ue_index: usize,
    pub subcarriers: Vec<usize>,
    pub symbols: Vec<usize>,
}

impl ResourceAssignment {
    /// Validates indices against an `n_subcarriers` x `n_symbols` grid.
    pub fn new(
        ue_index: usize,
        subcarriers: Vec<usize>,
        symbols: Vec<usize>,
        n_subcarriers: usize,
        n_symbols: usize,
    ) -> Result<Self> {
        let a = Self {
            ue_index,
            subcarriers,
            symbols,
        };
        a.validate(n_subcarriers, n_symbols)?;
        Ok(a)
    }

    pub fn validate(&self, n_subcarriers: usize, n_symbols: usize) -> Result<()> {
        if self.ue_index == 0 {
            return Err(IsacError::InvalidAssignment("ue_index is 1-based".into()));
        }
        check_index_list("subcarrier", &self.subcarriers, n_subcarriers)?;
        check_index_list("symbol", &self.symbols, n_symbols)?;
        Ok(())
    }

    /// `N_k`.
    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    /// `G_k`.
    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }
}

fn check_index_list(what: &str, idx: &[usize], upper: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(IsacError::InvalidAssignment(format!("empty {what} list")));
    }
    let mut seen = vec![false; upper + 1];
    for &i in idx {
        if i == 0 || i > upper {
            return Err(IsacError::InvalidAssignment(format!(
                "{what} index {i} outside [1, {upper}]"
            )));
        }
        if seen[i] {
            return Err(IsacError::InvalidAssignment(format!("duplicate {what} index {i}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Returns the first subcarrier shared by two assignments, if any.
pub fn shared_subcarrier(a: &ResourceAssignment, b: &ResourceAssignment) -> Option<usize> {
    a.subcarriers
        .iter()
        .copied()
        .find(|s| b.subcarriers.contains(s))
}

/// One propagation path of a UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPath {
    pub gain: Complex64,
    /// Propagation delay in seconds.
    pub delay: f64,
    /// Radial velocity in m/s.
    pub radial_velocity: f64,
    /// Angle of arrival in radians.
    pub aoa: f64,
    /// Angle of departure in radians.
    pub aod: f64,
}

impl ChannelPath {
    pub const MAX_SPEED: f64 = 1e4;

    pub fn new(gain: Complex64, delay: f64, radial_velocity: f64, aoa: f64, aod: f64) -> Result<Self> {
        let p = Self {
            gain,
            delay,
            radial_velocity,
            aoa,
            aod,
        };
        p.validate()?;
        Ok(p)
    }

    /// Path whose delay corresponds to range `range` under `R = c * tau`.
    pub fn from_range(gain: Complex64, range: f64, radial_velocity: f64, aoa: f64, aod: f64) -> Result<Self> {
        Self::new(gain, range / SPEED_OF_LIGHT, radial_velocity, aoa, aod)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay.is_finite() && self.delay >= 0.0) {
            return Err(IsacError::InvalidConfig(format!("path delay must be >= 0, got {}", self.delay)));
        }
        if !(self.radial_velocity.abs() < Self::MAX_SPEED) {
            return Err(IsacError::InvalidConfig(format!(
                "|radial_velocity| must be < {} m/s, got {}",
                Self::MAX_SPEED,
                self.radial_velocity
            )));
        }
        Ok(())
    }

    /// Normalized Doppler stretch `2v/c`.
    pub fn doppler_ratio(&self) -> f64 {
        2.0 * self.radial_velocity / SPEED_OF_LIGHT
    }

    pub fn range(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay
    }
}

/// Paths and transmit beamformer of one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct UeChannel {
    pub paths: Vec<ChannelPath>,
    pub beamformer: DVector<Complex64>,
}

impl UeChannel {
    pub fn new(paths: Vec<ChannelPath>, beamformer: DVector<Complex64>) -> Result<Self> {
        let norm = beamformer.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(IsacError::InvalidConfig(format!("beamformer norm must be 1, got {norm}")));
        }
        for p in &paths {
            p.validate()?;
        }
        Ok(Self { paths, beamformer })
    }

    /// Channel with the uniform unit-norm beamformer `(1/sqrt(M_T)) * 1`.
    pub fn with_uniform_beamformer(paths: Vec<ChannelPath>, n_tx: usize) -> Result<Self> {
        Self::new(paths, uniform_beamformer(n_tx))
    }

    /// Complex transmit gain `a_t(Omega_t)^T w` of a path.
    pub fn transmit_gain(&self, path: &ChannelPath, cfg: &SystemConfig) -> Complex64 {
        let at = steering_vector(cfg.spatial_phase(path.aod), self.beamformer.len());
        at.iter().zip(self.beamformer.iter()).map(|(a, w)| a * w).sum()
    }
}

pub fn uniform_beamformer(n_tx: usize) -> DVector<Complex64> {
    let v = Complex64::new(1.0 / (n_tx as f64).sqrt(), 0.0);
    DVector::from_element(n_tx, v)
}

/// Transmitted data symbols, indexed `[ue position][OFDM symbol][assigned subcarrier]`.
///
/// Every UE transmits in all `G` OFDM symbols; the sensing-symbol
/// assignment only selects which of them are fed to the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGrid {
    symbols: Vec<Vec<Vec<Complex64>>>,
}

impl DataGrid {
    pub fn from_symbols(symbols: Vec<Vec<Vec<Complex64>>>) -> Self {
        Self { symbols }
    }

    /// Unit-modulus QPSK symbols drawn from a seeded generator.
    pub fn qpsk(assignments: &[ResourceAssignment], n_symbols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let symbols = assignments
            .iter()
            .map(|a| {
                (0..n_symbols)
                    .map(|_| {
                        (0..a.n_subcarriers())
                            .map(|_| {
                                let re = if rng.random::<bool>() { s } else { -s };
                                let im = if rng.random::<bool>() { s } else { -s };
                                Complex64::new(re, im)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { symbols }
    }

    pub fn ones(assignments: &[ResourceAssignment], n_symbols: usize) -> Self {
        let symbols = assignments
            .iter()
            .map(|a| vec![vec![Complex64::new(1.0, 0.0); a.n_subcarriers()]; n_symbols])
            .collect();
        Self { symbols }
    }

    pub fn n_ues(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    /// Data of UE at position `ue` in OFDM symbol `symbol` (both 0-based).
    pub fn get(&self, ue: usize, symbol: usize) -> &[Complex64] {
        &self.symbols[ue][symbol]
    }

    pub fn check_against(&self, assignments: &[ResourceAssignment], n_symbols: usize) -> Result<()> {
        if self.symbols.len() != assignments.len() {
            return Err(IsacError::DimensionMismatch(format!(
                "data grid holds {} UEs, {} assignments given",
                self.symbols.len(),
                assignments.len()
            )));
        }
        for (k, (ue, a)) in self.symbols.iter().zip(assignments).enumerate() {
            if ue.len() != n_symbols {
                return Err(IsacError::DimensionMismatch(format!(
                    "UE position {k}: {} OFDM symbols of data, expected {n_symbols}",
                    ue.len()
                )));
            }
            if let Some(row) = ue.iter().find(|row| row.len() != a.n_subcarriers()) {
                return Err(IsacError::DimensionMismatch(format!(
                    "UE position {k}: data row of length {}, expected {}",
                    row.len(),
                    a.n_subcarriers()
                )));
            }
        }
        Ok(())
    }
}

/// Uniform linear array response `[1, e^{j w}, ..., e^{j (n-1) w}]`.
pub fn steering_vector(phase: f64, n_elements: usize) -> DVector<Complex64> {
    DVector::from_iterator(
        n_elements,
        (0..n_elements).map(|i| Complex64::from_polar(1.0, phase * i as f64)),
    )
}

/// 0/1 selection matrix with a single one per row at column `subcarriers[i]`.
pub fn selection_matrix(assignment: &ResourceAssignment, n_total: usize) -> Result<DMatrix<f64>> {
    let idx = &assignment.subcarriers;
    let mut m = DMatrix::zeros(idx.len(), n_total);
    for (row, &col) in idx.iter().enumerate() {
        if col == 0 || col > n_total {
            return Err(IsacError::InvalidAssignment(format!(
                "subcarrier index {col} outside [1, {n_total}]"
            )));
        }
        m[(row, col - 1)] = 1.0;
    }
    Ok(m)
}

/// Population variance of an index set.
pub fn index_variance(indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(IsacError::Domain("variance of an empty index list".into()));
    }
    let v = index_variance_exact(indices);
    Ok(*v.numer() as f64 / *v.denom() as f64)
}

/// Exact population variance `(n * sum x^2 - (sum x)^2) / n^2`.
///
/// Panics on an empty slice.
pub fn index_variance_exact(indices: &[usize]) -> Ratio<i128> {
    assert!(!indices.is_empty(), "variance of an empty index list");
    let n = indices.len() as i128;
    let (s1, s2) = indices.iter().fold((0i128, 0i128), |(s1, s2), &x| {
        let x = x as i128;
        (s1 + x, s2 + x * x)
    });
    Ratio::new(n * s2 - s1 * s1, n * n)
}
