//! 2-D MUSIC over the delay-Doppler lattice of one UE.
//!
//! Snapshots are the vectorized CSI blocks of every receive antenna,
//! optionally multiplied by forward spatial smoothing when the assigned
//! subcarriers and symbols both form arithmetic progressions. The noise
//! subspace is handled implicitly as the complement of the `L` dominant
//! eigenvectors, so the pseudo-spectrum denominator is
//! `|a|^2 - sum_i |u_i^H a|^2`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::compensation::CsiBlock;
use crate::error::{IsacError, Result};
use crate::fisher::manifold_from_slopes;
use crate::model::{ResourceAssignment, SystemConfig, SPEED_OF_LIGHT};

/// Diagonal loading applied when smoothing is unavailable, relative to the
/// covariance trace.
pub const DIAGONAL_LOADING: f64 = 1e-6;

/// Inclusive search axis `min, min + step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let g = Self { min, max, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.max >= self.min && self.min.is_finite() && self.max.is_finite()) {
            return Err(IsacError::InvalidConfig(format!("bad grid {self:?}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min + i as f64 * self.step).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicConfig {
    /// Range axis in meters.
    pub range_grid: GridSpec,
    /// Velocity axis in m/s.
    pub velocity_grid: GridSpec,
    pub n_sources: usize,
    /// Subarray sizes `(subcarriers, symbols)` for forward smoothing.
    pub smoothing: Option<(usize, usize)>,
}

impl MusicConfig {
    pub fn validate(&self) -> Result<()> {
        self.range_grid.validate()?;
        self.velocity_grid.validate()?;
        if self.n_sources == 0 {
            return Err(IsacError::InvalidConfig("n_sources must be >= 1".into()));
        }
        if let Some((f, t)) = self.smoothing {
            if f < 2 || t < 2 {
                return Err(IsacError::InvalidConfig("smoothing subarrays must be at least 2x2".into()));
            }
        }
        Ok(())
    }
}

/// Index geometry of the steering vectors, plus the numerology that turns
/// indices into phase slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub subcarriers: Vec<usize>,
    pub symbols: Vec<usize>,
    pub subcarrier_spacing: f64,
    pub carrier_freq: f64,
    pub symbol_duration: f64,
}

impl Lattice {
    pub fn new(assignment: &ResourceAssignment, cfg: &SystemConfig) -> Self {
        Self {
            subcarriers: assignment.subcarriers.clone(),
            symbols: assignment.symbols.clone(),
            subcarrier_spacing: cfg.subcarrier_spacing,
            carrier_freq: cfg.carrier_freq,
            symbol_duration: cfg.symbol_duration,
        }
    }

    fn slopes(&self) -> (Vec<f64>, Vec<f64>) {
        let freq = self
            .subcarriers
            .iter()
            .map(|&z| 2.0 * PI * z as f64 * self.subcarrier_spacing)
            .collect();
        let time = self
            .symbols
            .iter()
            .map(|&p| 2.0 * PI * self.carrier_freq * (p as f64 - 1.0) * self.symbol_duration)
            .collect();
        (freq, time)
    }

    /// Steering vector at `(range m, velocity m/s)`, entry `g * N + n`.
    pub fn steering(&self, range: f64, velocity: f64) -> nalgebra::DVector<Complex64> {
        let (freq, time) = self.slopes();
        manifold_from_slopes(&freq, &time, range / SPEED_OF_LIGHT, 2.0 * velocity / SPEED_OF_LIGHT)
    }
}

fn is_progression(idx: &[usize]) -> bool {
    idx.len() < 2 || idx.windows(2).all(|w| w[1] as i64 - w[0] as i64 == idx[1] as i64 - idx[0] as i64)
}

/// Sample covariance with the snapshots that produced it.
#[derive(Debug, Clone)]
pub struct Covariance {
    /// `Y Y^H / J`.
    pub matrix: DMatrix<Complex64>,
    /// Snapshots as columns, `d x J`.
    pub snapshots: DMatrix<Complex64>,
    /// Steering geometry matching the snapshot layout.
    pub lattice: Lattice,
    /// Loading added to the diagonal before eigendecomposition.
    pub loading: f64,
    pub smoothed: bool,
}

/// Averages outer products of the antenna snapshots, with forward smoothing
/// when configured and the index lattices are uniform.
pub fn sample_covariance(csi: &[CsiBlock], lattice: &Lattice, config: &MusicConfig) -> Result<Covariance> {
    config.validate()?;
    let first = csi
        .first()
        .ok_or(IsacError::InsufficientSnapshots { available: 0, required: 1 })?;
    let (g_k, n_k) = first.values.shape();
    if g_k != lattice.symbols.len() || n_k != lattice.subcarriers.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "CSI is {g_k}x{n_k}, lattice is {}x{}",
            lattice.symbols.len(),
            lattice.subcarriers.len()
        )));
    }
    if csi.iter().any(|b| b.values.shape() != (g_k, n_k)) {
        return Err(IsacError::DimensionMismatch("CSI blocks differ in shape".into()));
    }

    let uniform = is_progression(&lattice.subcarriers) && is_progression(&lattice.symbols);
    let (fs, ts) = match config.smoothing {
        Some((f, t)) if uniform => {
            if f > n_k || t > g_k {
                return Err(IsacError::InvalidConfig(format!(
                    "subarray {f}x{t} exceeds the {n_k}x{g_k} lattice"
                )));
            }
            let positions = (n_k - f + 1) * (g_k - t + 1);
            if positions < config.n_sources + 1 && positions > 1 {
                return Err(IsacError::InsufficientSnapshots {
                    available: positions,
                    required: config.n_sources + 1,
                });
            }
            (f, t)
        }
        _ => (n_k, g_k),
    };
    let smoothed = (fs, ts) != (n_k, g_k);
    let d = fs * ts;
    let per_block = (n_k - fs + 1) * (g_k - ts + 1);
    let j = per_block * csi.len();
    if j < config.n_sources {
        return Err(IsacError::InsufficientSnapshots {
            available: j,
            required: config.n_sources,
        });
    }

    let mut snapshots = DMatrix::zeros(d, j);
    let mut col = 0;
    for block in csi {
        for t0 in 0..=g_k - ts {
            for f0 in 0..=n_k - fs {
                for t in 0..ts {
                    for f in 0..fs {
                        snapshots[(t * fs + f, col)] = block.values[(t0 + t, f0 + f)];
                    }
                }
                col += 1;
            }
        }
    }
    let matrix = &snapshots * snapshots.adjoint() / Complex64::new(j as f64, 0.0);
    let trace = matrix.trace().re;
    let loading = if smoothed { 0.0 } else { DIAGONAL_LOADING * trace };
    Ok(Covariance {
        matrix,
        snapshots,
        lattice: Lattice {
            subcarriers: lattice.subcarriers[..fs].to_vec(),
            symbols: lattice.symbols[..ts].to_vec(),
            ..lattice.clone()
        },
        loading,
        smoothed,
    })
}

/// Orthonormal basis of the `n_sources` dominant eigenvectors, `d x L`.
///
/// With fewer snapshots than dimensions the eigenvectors come from the
/// `J x J` Gram matrix `Y^H Y`, which shares the nonzero spectrum of `Y Y^H`.
/// Diagonal loading shifts every eigenvalue equally and leaves the basis
/// unchanged.
pub fn signal_subspace(cov: &Covariance, n_sources: usize) -> Result<DMatrix<Complex64>> {
    let d = cov.matrix.nrows();
    if n_sources >= d {
        return Err(IsacError::InsufficientSnapshots {
            available: d,
            required: n_sources + 1,
        });
    }
    let y = &cov.snapshots;
    let j = y.ncols();
    if j < d {
        let gram = y.adjoint() * y;
        let eig = gram.symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut cols = Vec::new();
        for &i in order.iter().take(n_sources) {
            let lambda = eig.eigenvalues[i];
            if !(lambda > 1e-300 && lambda > top * 1e-13) {
                break;
            }
            let u = y * eig.eigenvectors.column(i) / Complex64::new(lambda.sqrt(), 0.0);
            cols.push(u);
        }
        if cols.is_empty() {
            return Err(IsacError::InsufficientSnapshots { available: 0, required: n_sources });
        }
        Ok(DMatrix::from_columns(&cols))
    } else {
        let eig = cov.matrix.clone().symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        let cols: Vec<_> = order
            .iter()
            .take(n_sources)
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        Ok(DMatrix::from_columns(&cols))
    }
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// `|a|^2 - sum |u_i^H a|^2`, floored at zero.
pub fn spectrum_denominator(subspace: &DMatrix<Complex64>, a: &nalgebra::DVector<Complex64>) -> f64 {
    let proj: f64 = subspace.column_iter().map(|u| u.dotc(a).norm_sqr()).sum();
    (a.norm_squared() - proj).max(0.0)
}

fn spectrum_from_denominator(den: f64) -> f64 {
    if den > 0.0 {
        1.0 / den
    } else {
        f64::INFINITY
    }
}

/// Pseudo-spectrum `1 / (a^H U_n U_n^H a)` at `(range, velocity)`; `+inf`
/// on exact orthogonality.
pub fn music_spectrum(cov: &Covariance, n_sources: usize, range: f64, velocity: f64) -> Result<f64> {
    let u = signal_subspace(cov, n_sources)?;
    let a = cov.lattice.steering(range, velocity);
    Ok(spectrum_from_denominator(spectrum_denominator(&u, &a)))
}

/// Pseudo-spectrum over the full grid, `velocities x ranges`.
///
/// The steering vector is a Kronecker product, so `u^H a` factors as
/// `xi^T conj(U) tau` with `U` the `G x N` reshaped eigenvector.
pub fn spectrum_grid(
    subspace: &DMatrix<Complex64>,
    lattice: &Lattice,
    ranges: &[f64],
    velocities: &[f64],
) -> DMatrix<f64> {
    let (freq, time) = lattice.slopes();
    let (n, g) = (freq.len(), time.len());
    let tau = DMatrix::from_fn(n, ranges.len(), |i, r| {
        Complex64::from_polar(1.0, -freq[i] * ranges[r] / SPEED_OF_LIGHT)
    });
    let xi = DMatrix::from_fn(velocities.len(), g, |v, i| {
        Complex64::from_polar(1.0, -time[i] * 2.0 * velocities[v] / SPEED_OF_LIGHT)
    });
    let norm = (n * g) as f64;
    let mut den = DMatrix::from_element(velocities.len(), ranges.len(), norm);
    for u in subspace.column_iter() {
        let u_conj = DMatrix::from_fn(g, n, |r, c| u[r * n + c].conj());
        let inner = &xi * (u_conj * &tau);
        den.zip_apply(&inner, |d, x| *d -= x.norm_sqr());
    }
    den.map(|d| spectrum_from_denominator(d.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub range: f64,
    pub velocity: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    /// Sorted by descending peak value.
    pub pairs: Vec<Estimate>,
    /// False when fewer local maxima than sources were found.
    pub resolved: bool,
}

/// Local maxima of a `V x R` grid in raster order of descending value.
/// Plateaus count once: a point must beat earlier neighbours strictly.
fn local_maxima(s: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = s.shape();
    let mut peaks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = s[(r, c)];
            let mut is_peak = true;
            'nb: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        continue;
                    }
                    let w = s[(rr as usize, cc as usize)];
                    let earlier = (dr, dc) < (0, 0);
                    if w > v || (earlier && w == v) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                peaks.push((r, c));
            }
        }
    }
    peaks.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
    peaks
}

/// Moves to the vertex of the parabola through `f(x-h), f(x), f(x+h)`,
/// staying within `[lo, hi]` and never moving uphill.
fn parabolic_step<F: Fn(f64) -> f64>(f: F, x: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
    let curv = fm - 2.0 * f0 + fp;
    if !(curv > 0.0) {
        return x;
    }
    let step = (h * (fm - fp) / (2.0 * curv)).clamp(-h, h);
    let next = (x + step).clamp(lo, hi);
    if f(next) <= f0 {
        next
    } else {
        x
    }
}

/// Peak picking plus per-axis quadratic refinement of the denominator,
/// alternating axes with a shrinking stencil.
pub fn estimate(csi: &[CsiBlock], lattice: &Lattice, config: &MusicConfig) -> Result<EstimateSet> {
    let cov = sample_covariance(csi, lattice, config)?;
    let u = signal_subspace(&cov, config.n_sources)?;
    let ranges = config.range_grid.points();
    let velocities = config.velocity_grid.points();
    let grid = spectrum_grid(&u, &cov.lattice, &ranges, &velocities);
    let peaks = local_maxima(&grid);
    let resolved = peaks.len() >= config.n_sources;

    let den = |r: f64, v: f64| spectrum_denominator(&u, &cov.lattice.steering(r, v));
    let (rg, vg) = (config.range_grid, config.velocity_grid);
    let mut pairs: Vec<Estimate> = peaks
        .iter()
        .take(config.n_sources)
        .map(|&(vi, ri)| {
            let (mut r, mut v) = (ranges[ri], velocities[vi]);
            let (mut hr, mut hv) = (rg.step, vg.step);
            for _ in 0..6 {
                r = parabolic_step(|x| den(x, v), r, hr, rg.min, rg.max);
                v = parabolic_step(|x| den(r, x), v, hv, vg.min, vg.max);
                hr /= 4.0;
                hv /= 4.0;
            }
            Estimate {
                range: r,
                velocity: v,
                peak: spectrum_from_denominator(den(r, v)),
            }
        })
        .collect();
    pairs.sort_by(|a, b| b.peak.total_cmp(&a.peak));
    Ok(EstimateSet { pairs, resolved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compensation::extract_csi_all;
    use crate::distribution::{generate_scheme, SchemeKind};
    use crate::model::{ChannelPath, DataGrid, UeChannel};
    use crate::synthesis::{synthesize_frames, time_noise_for_re_noise};

    fn cfg() -> SystemConfig {
        SystemConfig {
            noise_power: 0.0,
            ..SystemConfig::default()
        }
    }

    fn music(smoothing: Option<(usize, usize)>, n_sources: usize) -> MusicConfig {
        MusicConfig {
            range_grid: GridSpec::new(0.0, 150.0, 0.5).unwrap(),
            velocity_grid: GridSpec::new(-40.0, 80.0, 0.25).unwrap(),
            n_sources,
            smoothing,
        }
    }

    fn scheme_assignment(kind: SchemeKind) -> ResourceAssignment {
        let stride_ues = if kind == SchemeKind::Interleaved { 3 } else { 1 };
        let list = generate_scheme(kind, 48, 16, 1, stride_ues).unwrap();
        ResourceAssignment::new(1, list.clone(), list, 48, 48).unwrap()
    }

    fn csi_for(
        config: &SystemConfig,
        a: &ResourceAssignment,
        paths: Vec<ChannelPath>,
        seed: u64,
    ) -> Vec<CsiBlock> {
        let ch = UeChannel::with_uniform_beamformer(paths, config.n_tx_antennas).unwrap();
        let data = DataGrid::qpsk(std::slice::from_ref(a), config.n_symbols, seed);
        let set = synthesize_frames(config, &[ch], std::slice::from_ref(a), &data, seed).unwrap();
        extract_csi_all(&set, 0).unwrap()
    }

    fn target() -> ChannelPath {
        ChannelPath::from_range(Complex64::new(1.0, 0.0), 50.0, 20.0, 0.7, 1.2).unwrap()
    }

    #[test]
    fn grid_points_are_inclusive() {
        let g = GridSpec::new(0.0, 1.0, 0.25).unwrap();
        assert_eq!(g.points(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(GridSpec::new(1.0, 0.0, 0.1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_snapshot_covariance_is_rank_one() {
        let config = cfg();
        let a = scheme_assignment(SchemeKind::EdgeFirst);
        let csi = csi_for(&config, &a, vec![target()], 1);
        let lat = Lattice::new(&a, &config);
        let cov = sample_covariance(&csi[..1], &lat, &music(None, 1)).unwrap();
        let y = csi[0].vectorize();
        let expected = &y * y.adjoint();
        assert!((&cov.matrix - &expected).norm() < 1e-9 * expected.norm());
        // all antennas together: still rank one
        let cov = sample_covariance(&csi, &lat, &music(None, 1)).unwrap();
        let sv = cov.matrix.clone().singular_values();
        assert!(sv[1] < 1e-9 * sv[0]);
        let energy: f64 = csi.iter().map(|b| b.values.norm_squared()).sum::<f64>() / csi.len() as f64;
        assert!((cov.matrix.trace().re - energy).abs() < 1e-9 * energy);
        assert!(cov.loading > 0.0);
    }

    #[test]
    fn hermitian_psd() {
        let mut config = cfg();
        config.noise_power = time_noise_for_re_noise(0.1, 48);
        let a = scheme_assignment(SchemeKind::Subband);
        let csi = csi_for(&config, &a, vec![target()], 3);
        let cov = sample_covariance(&csi, &Lattice::new(&a, &config), &music(Some((8, 8)), 1)).unwrap();
        assert!(cov.smoothed);
        assert!((&cov.matrix - cov.matrix.adjoint()).norm() < 1e-12 * cov.matrix.norm());
        let eig = cov.matrix.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12 * cov.matrix.norm()));
    }

    #[test]
    fn smoothing_restores_rank_for_coherent_paths() {
        let mut config = cfg();
        config.n_rx_antennas = 1;
        let a = scheme_assignment(SchemeKind::Subband);
        let p2 = ChannelPath::from_range(Complex64::new(0.7, -0.2), 90.0, -10.0, 0.7, 1.2).unwrap();
        let csi = csi_for(&config, &a, vec![target(), p2], 5);
        let lat = Lattice::new(&a, &config);
        let rank = |m: &DMatrix<Complex64>| {
            let sv = m.clone().singular_values();
            sv.iter().filter(|&&s| s > 1e-9 * sv[0]).count()
        };
        let plain = sample_covariance(&csi, &lat, &music(None, 1)).unwrap();
        assert_eq!(rank(&plain.matrix), 1);
        let smooth = sample_covariance(&csi, &lat, &music(Some((6, 6)), 2)).unwrap();
        assert_eq!(rank(&smooth.matrix), 2);

        // both true steering vectors are orthogonal to the noise subspace
        let u = signal_subspace(&smooth, 2).unwrap();
        for (r, v) in [(50.0, 20.0), (90.0, -10.0)] {
            let s = smooth.lattice.steering(r, v);
            assert!(spectrum_denominator(&u, &s) <= 1e-9 * s.norm_squared());
        }
    }

    #[test]
    fn non_uniform_lattice_disables_smoothing() {
        let config = cfg();
        let a = scheme_assignment(SchemeKind::EdgeFirst);
        let csi = csi_for(&config, &a, vec![target()], 2);
        let cov = sample_covariance(&csi, &Lattice::new(&a, &config), &music(Some((4, 4)), 1)).unwrap();
        assert!(!cov.smoothed);
        assert_eq!(cov.matrix.nrows(), 256);
    }

    #[test]
    fn insufficient_snapshots() {
        let config = cfg();
        let a = scheme_assignment(SchemeKind::Subband);
        let csi = csi_for(&config, &a, vec![target()], 2);
        let lat = Lattice::new(&a, &config);
        assert!(matches!(
            sample_covariance(&csi[..1], &lat, &music(None, 2)),
            Err(IsacError::InsufficientSnapshots { .. })
        ));
        assert!(matches!(
            sample_covariance(&csi, &lat, &music(Some((16, 15)), 2)),
            Err(IsacError::InsufficientSnapshots { .. })
        ));
        assert!(sample_covariance(&[], &lat, &music(None, 1)).is_err());
    }

    #[test]
    fn gram_and_full_subspaces_agree() {
        let mut config = cfg();
        config.noise_power = time_noise_for_re_noise(0.05, 48);
        let a = scheme_assignment(SchemeKind::Interleaved);
        let csi = csi_for(&config, &a, vec![target()], 9);
        let cov = sample_covariance(&csi, &Lattice::new(&a, &config), &music(None, 1)).unwrap();
        let gram = signal_subspace(&cov, 2).unwrap();
        let eig = cov.matrix.clone().symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        for (k, &i) in order.iter().take(2).enumerate() {
            let v = eig.eigenvectors.column(i);
            assert!((v.dotc(&gram.column(k)).norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn noiseless_peak_at_truth() {
        let config = cfg();
        for kind in [SchemeKind::EdgeFirst, SchemeKind::Interleaved, SchemeKind::Subband] {
            let a = scheme_assignment(kind);
            let csi = csi_for(&config, &a, vec![target()], 4);
            let lat = Lattice::new(&a, &config);
            let cov = sample_covariance(&csi, &lat, &music(None, 1)).unwrap();
            let u = signal_subspace(&cov, 1).unwrap();
            let s = lat.steering(50.0, 20.0);
            assert!(spectrum_denominator(&u, &s) <= 1e-12 * s.norm_squared());

            // one range bin c / (N df) away
            let bin = SPEED_OF_LIGHT / (48.0 * 100e3);
            let peak = 1.0 / (1e-12 * s.norm_squared());
            let off = music_spectrum(&cov, 1, 50.0 + bin, 20.0).unwrap();
            assert!(off.is_finite());
            assert!(10.0 * (peak / off).log10() >= 40.0, "{kind}");

            let est = estimate(&csi, &lat, &music(None, 1)).unwrap();
            assert!(est.resolved);
            let e = est.pairs[0];
            assert!((e.range - 50.0).abs() < 1e-3, "{kind}: {e:?}");
            assert!((e.velocity - 20.0).abs() < 1e-3, "{kind}: {e:?}");
        }
    }

    #[test]
    fn noise_only_spectrum_is_flat() {
        let mut config = cfg();
        config.n_subcarriers = 48;
        config.n_rx_antennas = 8;
        let a = ResourceAssignment::new(1, (1..=8).collect(), (1..=8).collect(), 48, 48).unwrap();
        let lat = Lattice::new(&a, &config);
        config.noise_power = time_noise_for_re_noise(1.0, 48);
        let zero = ChannelPath::new(Complex64::new(0.0, 0.0), 0.0, 0.0, 0.0, 0.0).unwrap();
        let mut avg: Option<DMatrix<f64>> = None;
        let seeds = 40;
        for seed in 0..seeds {
            let csi = csi_for(&config, &a, vec![zero], seed);
            let cov = sample_covariance(&csi, &lat, &music(None, 1)).unwrap();
            let u = signal_subspace(&cov, 1).unwrap();
            let ranges = GridSpec::new(0.0, 150.0, 5.0).unwrap().points();
            let vels = GridSpec::new(-40.0, 80.0, 4.0).unwrap().points();
            let db = spectrum_grid(&u, &lat, &ranges, &vels).map(|x| 10.0 * x.log10());
            avg = Some(match avg {
                None => db,
                Some(acc) => acc + db,
            });
        }
        let avg = avg.unwrap() / seeds as f64;
        let spread = avg.max() - avg.min();
        assert!(spread < 3.0, "spread {spread} dB");
    }

    #[test]
    fn edge_first_beats_subband_single_trial() {
        let mut config = cfg();
        config.noise_power = time_noise_for_re_noise(1e-3, 48);
        let mut err = Vec::new();
        for kind in [SchemeKind::EdgeFirst, SchemeKind::Subband] {
            let a = scheme_assignment(kind);
            let mut sq = 0.0;
            for seed in 0..20 {
                let csi = csi_for(&config, &a, vec![target()], 1000 + seed);
                let e = estimate(&csi, &Lattice::new(&a, &config), &music(None, 1)).unwrap().pairs[0];
                sq += (e.range - 50.0).powi(2);
            }
            err.push(sq / 20.0);
        }
        assert!(err[0] < err[1], "{err:?}");
    }
}
