//! Received OFDMA frames through a delay-Doppler channel.
//!
//! Each UE places its data on its subcarriers; every path contributes a
//! per-symbol Doppler phase, a delay phase ramp across subcarriers, and the
//! receive/transmit array responses. Frames are post-CP-removal time-domain
//! samples, one `M_R x N` matrix per OFDM symbol. The IDFT carries the `1/N`
//! factor so an unscaled forward DFT recovers the frequency-domain grid.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{IsacError, Result};
use crate::model::{shared_subcarrier, steering_vector, ChannelPath, DataGrid, ResourceAssignment, SystemConfig, UeChannel};

#[derive(Debug, Clone, PartialEq)]
pub struct OfdmaFrameSet {
    /// One `M_R x N` time-domain matrix per OFDM symbol.
    pub frames: Vec<DMatrix<Complex64>>,
    pub data: DataGrid,
    pub assignments: Vec<ResourceAssignment>,
    pub rng_seed: u64,
}

impl OfdmaFrameSet {
    pub fn n_symbols(&self) -> usize {
        self.frames.len()
    }
}

/// Effective coefficient `b_m` seen on antenna `m` (0-based) after
/// compensation: the path gain with the carrier-delay rotation, both array
/// responses, and the CP part of the Doppler phase.
pub fn path_beta(path: &ChannelPath, channel: &UeChannel, cfg: &SystemConfig, antenna: usize) -> Complex64 {
    let mu = path.doppler_ratio();
    let fc = cfg.carrier_freq;
    let carrier = Complex64::from_polar(1.0, -2.0 * PI * fc * path.delay * (1.0 - mu));
    let cp = Complex64::from_polar(1.0, -2.0 * PI * fc * mu * cfg.cp_duration);
    let rx = Complex64::from_polar(1.0, cfg.spatial_phase(path.aoa) * antenna as f64);
    path.gain * carrier * cp * rx * channel.transmit_gain(path, cfg)
}

/// Frequency-domain contribution of one UE in OFDM symbol `g` (0-based),
/// `M_R x N`, before the IDFT.
fn ue_grid(
    cfg: &SystemConfig,
    channel: &UeChannel,
    assignment: &ResourceAssignment,
    data: &[Complex64],
    g: usize,
    grid: &mut DMatrix<Complex64>,
) {
    let m_r = cfg.n_rx_antennas;
    for path in &channel.paths {
        let mu = path.doppler_ratio();
        // CP phase lives in path_beta; the rest of the symbol-start phase here
        let slow = Complex64::from_polar(1.0, -2.0 * PI * cfg.carrier_freq * mu * g as f64 * cfg.symbol_duration);
        let rx = steering_vector(cfg.spatial_phase(path.aoa), m_r);
        let beta0 = path_beta(path, channel, cfg, 0) * slow;
        for (&z, &s) in assignment.subcarriers.iter().zip(data) {
            let delay = Complex64::from_polar(1.0, -2.0 * PI * z as f64 * cfg.subcarrier_spacing * path.delay);
            let v = beta0 * delay * s;
            for m in 0..m_r {
                grid[(m, z - 1)] += v * rx[m];
            }
        }
    }
}

pub(crate) fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(n)
}

pub(crate) fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

/// Row-wise IDFT with `1/N` scaling.
pub(crate) fn idft_rows(grid: &DMatrix<Complex64>, plan: &dyn Fft<f64>) -> DMatrix<Complex64> {
    let (rows, n) = grid.shape();
    let scale = 1.0 / n as f64;
    let mut out = DMatrix::zeros(rows, n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = grid[(r, i)];
        }
        plan.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            out[(r, i)] = b * scale;
        }
    }
    out
}

/// Row-wise unscaled forward DFT.
pub(crate) fn dft_rows(frame: &DMatrix<Complex64>, plan: &dyn Fft<f64>) -> DMatrix<Complex64> {
    let (rows, n) = frame.shape();
    let mut out = DMatrix::zeros(rows, n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = frame[(r, i)];
        }
        plan.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            out[(r, i)] = *b;
        }
    }
    out
}

fn check_inputs(
    config: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    data: &DataGrid,
    allow_overlap: bool,
) -> Result<()> {
    config.validate()?;
    if channels.len() != assignments.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "{} channels for {} assignments",
            channels.len(),
            assignments.len()
        )));
    }
    for (a, ch) in assignments.iter().zip(channels) {
        a.validate(config.n_subcarriers, config.n_symbols)?;
        if ch.beamformer.len() != config.n_tx_antennas {
            return Err(IsacError::DimensionMismatch(format!(
                "beamformer length {} != n_tx_antennas {}",
                ch.beamformer.len(),
                config.n_tx_antennas
            )));
        }
    }
    data.check_against(assignments, config.n_symbols)?;
    if !allow_overlap {
        for (i, a) in assignments.iter().enumerate() {
            for b in &assignments[i + 1..] {
                if let Some(s) = shared_subcarrier(a, b) {
                    return Err(IsacError::SubcarrierOverlap {
                        ue_a: a.ue_index,
                        ue_b: b.ue_index,
                        subcarrier: s,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Synthesizes all `G` frames and adds AWGN of `config.noise_power` per
/// time-domain sample, seeded by `seed`. Assignments must be
/// subcarrier-disjoint.
pub fn synthesize_frames(
    config: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    data: &DataGrid,
    seed: u64,
) -> Result<OfdmaFrameSet> {
    synthesize(config, channels, assignments, data, seed, false)
}

/// As [`synthesize_frames`], but UEs may share subcarriers.
pub fn synthesize_frames_overlapping(
    config: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    data: &DataGrid,
    seed: u64,
) -> Result<OfdmaFrameSet> {
    synthesize(config, channels, assignments, data, seed, true)
}

fn synthesize(
    config: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    data: &DataGrid,
    seed: u64,
    allow_overlap: bool,
) -> Result<OfdmaFrameSet> {
    check_inputs(config, channels, assignments, data, allow_overlap)?;
    let plan = inverse_plan(config.n_subcarriers);
    let clean: Vec<DMatrix<Complex64>> = (0..config.n_symbols)
        .into_par_iter()
        .map(|g| {
            let mut grid = DMatrix::zeros(config.n_rx_antennas, config.n_subcarriers);
            for (k, (ch, a)) in channels.iter().zip(assignments).enumerate() {
                ue_grid(config, ch, a, data.get(k, g), g, &mut grid);
            }
            idft_rows(&grid, plan.as_ref())
        })
        .collect();
    let frames = add_awgn(&clean, config.noise_power, seed)?;
    Ok(OfdmaFrameSet {
        frames,
        data: data.clone(),
        assignments: assignments.to_vec(),
        rng_seed: seed,
    })
}

/// Adds circular complex Gaussian noise of variance `noise_power` to every
/// sample. Stream `g * M_R + m` of the seeded generator drives antenna `m`
/// of frame `g`, so the result does not depend on scheduling.
pub fn add_awgn(frames: &[DMatrix<Complex64>], noise_power: f64, seed: u64) -> Result<Vec<DMatrix<Complex64>>> {
    if !(noise_power.is_finite() && noise_power >= 0.0) {
        return Err(IsacError::Domain(format!("noise power must be >= 0, got {noise_power}")));
    }
    if noise_power == 0.0 {
        return Ok(frames.to_vec());
    }
    let sd = (noise_power / 2.0).sqrt();
    Ok(frames
        .par_iter()
        .enumerate()
        .map(|(g, frame)| {
            let mut out = frame.clone();
            let rows = frame.nrows();
            for m in 0..rows {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((g * rows + m) as u64);
                for p in 0..frame.ncols() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    out[(m, p)] += Complex64::new(re * sd, im * sd);
                }
            }
            out
        })
        .collect())
}

/// Time-domain per-sample noise power giving per-RE noise `re_noise` after
/// the unscaled DFT.
pub fn time_noise_for_re_noise(re_noise: f64, n_subcarriers: usize) -> f64 {
    re_noise / n_subcarriers as f64
}

/// Per-RE noise power after the unscaled DFT for per-sample noise `time_noise`.
pub fn re_noise_for_time_noise(time_noise: f64, n_subcarriers: usize) -> f64 {
    time_noise * n_subcarriers as f64
}

/// Mean `|X|^2` over the occupied resource elements of a noiseless frame set.
pub fn useful_power_per_re(frames: &OfdmaFrameSet) -> f64 {
    let n = frames.frames.first().map_or(0, |f| f.ncols());
    if n == 0 {
        return 0.0;
    }
    let plan = forward_plan(n);
    let mut total = 0.0;
    let mut count = 0usize;
    for frame in &frames.frames {
        let freq = dft_rows(frame, plan.as_ref());
        for a in &frames.assignments {
            for &z in &a.subcarriers {
                for m in 0..freq.nrows() {
                    total += freq[(m, z - 1)].norm_sqr();
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelPath;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    fn small_config(n: usize, g: usize, m_r: usize, m_t: usize) -> SystemConfig {
        let mut cfg = SystemConfig::with_numerology(n, 100e3, 28e9, 1.0 / 90e3).unwrap();
        cfg.n_symbols = g;
        cfg.n_rx_antennas = m_r;
        cfg.n_tx_antennas = m_t;
        cfg.noise_power = 0.0;
        cfg
    }

    fn single(cfg: &SystemConfig, subs: Vec<usize>, path: ChannelPath) -> (Vec<UeChannel>, Vec<ResourceAssignment>) {
        let ch = UeChannel::with_uniform_beamformer(vec![path], cfg.n_tx_antennas).unwrap();
        let a = ResourceAssignment::new(1, subs, (1..=cfg.n_symbols).collect(), cfg.n_subcarriers, cfg.n_symbols).unwrap();
        (vec![ch], vec![a])
    }

    fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn phaseless_channel_is_plain_idft_of_mask() {
        let cfg = small_config(8, 2, 1, 1);
        let subs = vec![2, 5, 6];
        let path = ChannelPath::new(one(), 0.0, 0.0, 0.0, 0.0).unwrap();
        let (ch, a) = single(&cfg, subs.clone(), path);
        let data = DataGrid::ones(&a, cfg.n_symbols);
        let set = synthesize_frames(&cfg, &ch, &a, &data, 1).unwrap();
        for frame in &set.frames {
            for p in 0..8 {
                // direct IDFT sum with 1/N
                let expected: Complex64 = subs
                    .iter()
                    .map(|&z| Complex64::from_polar(1.0 / 8.0, 2.0 * PI * ((z - 1) * p) as f64 / 8.0))
                    .sum();
                assert!((frame[(0, p)] - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn doppler_is_a_per_symbol_scalar() {
        let cfg = small_config(16, 4, 2, 1);
        let subs = vec![1, 4, 9, 16];
        let still = ChannelPath::from_range(one(), 40.0, 0.0, 0.4, 0.0).unwrap();
        let moving = ChannelPath { radial_velocity: 25.0, ..still };
        let (ch0, a) = single(&cfg, subs.clone(), still);
        let (ch1, _) = single(&cfg, subs, moving);
        let data = DataGrid::qpsk(&a, cfg.n_symbols, 3);
        let f0 = synthesize_frames(&cfg, &ch0, &a, &data, 0).unwrap();
        let f1 = synthesize_frames(&cfg, &ch1, &a, &data, 0).unwrap();
        let mu = moving.doppler_ratio();
        let fc = cfg.carrier_freq;
        for g in 0..cfg.n_symbols {
            let t = g as f64 * cfg.symbol_duration + cfg.cp_duration;
            let doppler = Complex64::from_polar(1.0, -2.0 * PI * fc * mu * t);
            // the carrier-delay rotation also carries a tiny (1 - mu) term
            let carrier = Complex64::from_polar(1.0, 2.0 * PI * fc * still.delay * mu);
            let expected = f0.frames[g].map(|z| z * doppler * carrier);
            assert!(max_diff(&f1.frames[g], &expected) < 1e-12);
        }
        // consecutive-frame ratio is the constant slow-time phase
        let step = Complex64::from_polar(1.0, -2.0 * PI * fc * mu * cfg.symbol_duration);
        for g in 0..cfg.n_symbols - 1 {
            let r = (f1.frames[g + 1][(0, 0)] / f0.frames[g + 1][(0, 0)]) / (f1.frames[g][(0, 0)] / f0.frames[g][(0, 0)]);
            assert!((r - step).norm() < 1e-9);
        }
    }

    #[test]
    fn superposition_of_ues_and_paths() {
        let cfg = small_config(16, 3, 3, 2);
        let p1 = ChannelPath::from_range(Complex64::new(0.5, 0.2), 30.0, 10.0, 0.3, 1.0).unwrap();
        let p2 = ChannelPath::from_range(Complex64::new(-0.1, 0.9), 80.0, -20.0, 1.2, 0.2).unwrap();
        let syms: Vec<usize> = (1..=3).collect();
        let a1 = ResourceAssignment::new(1, vec![1, 4, 7], syms.clone(), 16, 3).unwrap();
        let a2 = ResourceAssignment::new(2, vec![2, 9, 16], syms, 16, 3).unwrap();
        let c1 = UeChannel::with_uniform_beamformer(vec![p1, p2], 2).unwrap();
        let c2 = UeChannel::with_uniform_beamformer(vec![p2], 2).unwrap();
        let both = [a1.clone(), a2.clone()];
        let data = DataGrid::qpsk(&both, 3, 9);
        let joint = synthesize_frames(&cfg, &[c1.clone(), c2.clone()], &both, &data, 0).unwrap();

        let d1 = DataGrid::from_symbols(vec![(0..3).map(|g| data.get(0, g).to_vec()).collect()]);
        let d2 = DataGrid::from_symbols(vec![(0..3).map(|g| data.get(1, g).to_vec()).collect()]);
        let s1 = synthesize_frames(&cfg, &[c1], std::slice::from_ref(&a1), &d1, 0).unwrap();
        let s2 = synthesize_frames(&cfg, &[c2], &[a2], &d2, 0).unwrap();
        let c1a = UeChannel::with_uniform_beamformer(vec![p1], 2).unwrap();
        let c1b = UeChannel::with_uniform_beamformer(vec![p2], 2).unwrap();
        let s1a = synthesize_frames(&cfg, &[c1a], std::slice::from_ref(&a1), &d1, 0).unwrap();
        let s1b = synthesize_frames(&cfg, &[c1b], &[a1], &d1, 0).unwrap();
        for g in 0..3 {
            assert!(max_diff(&joint.frames[g], &(&s1.frames[g] + &s2.frames[g])) < 1e-14);
            assert!(max_diff(&s1.frames[g], &(&s1a.frames[g] + &s1b.frames[g])) < 1e-14);
        }
    }

    #[test]
    fn overlap_requires_opt_in() {
        let cfg = small_config(8, 1, 1, 1);
        let p = ChannelPath::new(one(), 0.0, 0.0, 0.0, 0.0).unwrap();
        let ch = UeChannel::with_uniform_beamformer(vec![p], 1).unwrap();
        let a1 = ResourceAssignment::new(1, vec![1, 3], vec![1], 8, 1).unwrap();
        let a2 = ResourceAssignment::new(2, vec![3, 4], vec![1], 8, 1).unwrap();
        let both = [a1, a2];
        let data = DataGrid::ones(&both, 1);
        let chs = [ch.clone(), ch];
        assert!(matches!(
            synthesize_frames(&cfg, &chs, &both, &data, 0),
            Err(IsacError::SubcarrierOverlap { subcarrier: 3, .. })
        ));
        assert!(synthesize_frames_overlapping(&cfg, &chs, &both, &data, 0).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = small_config(8, 2, 1, 1);
        let p = ChannelPath::new(one(), 0.0, 0.0, 0.0, 0.0).unwrap();
        let (ch, a) = single(&cfg, vec![1, 2], p);
        let bad = DataGrid::from_symbols(vec![vec![vec![one(); 3]; 2]]);
        assert!(matches!(
            synthesize_frames(&cfg, &ch, &a, &bad, 0),
            Err(IsacError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn noiseless_regeneration_is_bit_identical() {
        let mut cfg = small_config(16, 4, 2, 2);
        let p = ChannelPath::from_range(Complex64::new(0.3, -0.4), 50.0, 20.0, 0.5, 0.9).unwrap();
        let (ch, a) = single(&cfg, vec![1, 2, 15, 16], p);
        let data = DataGrid::qpsk(&a, 4, 11);
        let x = synthesize_frames(&cfg, &ch, &a, &data, 5).unwrap();
        let y = synthesize_frames(&cfg, &ch, &a, &data, 5).unwrap();
        assert_eq!(x, y);
        cfg.noise_power = 0.1;
        let x = synthesize_frames(&cfg, &ch, &a, &data, 5).unwrap();
        let y = synthesize_frames(&cfg, &ch, &a, &data, 5).unwrap();
        let z = synthesize_frames(&cfg, &ch, &a, &data, 6).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn awgn_zero_is_identity_and_unit_variance_matches() {
        let frames = vec![DMatrix::from_element(4, 8, Complex64::new(1.0, -2.0)); 3];
        assert_eq!(add_awgn(&frames, 0.0, 1).unwrap(), frames);
        assert!(add_awgn(&frames, -1.0, 1).is_err());

        let zeros = vec![DMatrix::<Complex64>::zeros(10, 1000); 100];
        let noisy = add_awgn(&zeros, 1.0, 42).unwrap();
        let count = 10 * 1000 * 100;
        let var = noisy.iter().flat_map(|f| f.iter()).map(|z| z.norm_sqr()).sum::<f64>() / count as f64;
        assert!((0.98..=1.02).contains(&var), "variance {var}");
        let mean: Complex64 = noisy.iter().flat_map(|f| f.iter()).sum::<Complex64>() / count as f64;
        assert!(mean.norm() < 5e-3);
    }

    #[test]
    fn re_snr_is_measurable() {
        let mut cfg = small_config(48, 48, 8, 2);
        let p = ChannelPath::from_range(Complex64::new(0.7, 0.0), 50.0, 20.0, 0.8, 1.1).unwrap();
        let (ch, a) = single(&cfg, (1..=48).step_by(3).collect(), p);
        let data = DataGrid::qpsk(&a, 48, 2);
        let clean = synthesize_frames(&cfg, &ch, &a, &data, 0).unwrap();
        let useful = useful_power_per_re(&clean);
        let beta = path_beta(&p, &ch[0], &cfg, 0);
        assert!((useful - beta.norm_sqr()).abs() < 1e-12 * useful.max(1e-300) + 1e-15);

        // per-RE noise from a target SNR of 10 dB, measured over the DFT grid
        let re_noise = useful / 10.0;
        cfg.noise_power = time_noise_for_re_noise(re_noise, cfg.n_subcarriers);
        let zero_path = ChannelPath::new(Complex64::new(0.0, 0.0), 0.0, 0.0, 0.0, 0.0).unwrap();
        let (ch0, _) = single(&cfg, (1..=48).step_by(3).collect(), zero_path);
        let noise_only = synthesize_frames(&cfg, &ch0, &a, &data, 77).unwrap();
        let plan = forward_plan(48);
        let mut total = 0.0;
        let mut count = 0;
        for f in &noise_only.frames {
            let x = dft_rows(f, plan.as_ref());
            total += x.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += x.len();
        }
        // 48 * 8 * 48 = 18432 REs per seed; pool six seeds to pass 1e5
        for seed in [78, 79, 80, 81, 82] {
            let extra = synthesize_frames(&cfg, &ch0, &a, &data, seed).unwrap();
            for f in &extra.frames {
                let x = dft_rows(f, plan.as_ref());
                total += x.iter().map(|z| z.norm_sqr()).sum::<f64>();
                count += x.len();
            }
        }
        assert!(count >= 100_000);
        let measured = useful / (total / count as f64);
        assert!((measured / 10.0 - 1.0).abs() < 0.01, "measured snr {measured}");
    }
}
