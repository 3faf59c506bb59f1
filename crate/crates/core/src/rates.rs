//! Doppler-induced inter-carrier interference and per-subcarrier rates.
//!
//! A path with normalized Doppler `mu = 2v/c` stretches the time-domain
//! samples, so after demodulation subcarrier `n1` leaks into `n2` through
//! the matrix
//!
//! `Q[n1, n2] = e^{-j 2 pi (n1-1) df tau} / N * sum_p e^{j 2 pi x (p-1) / N}`,
//! `x = (n1 - n2) + mu (1 - n1)`.
//!
//! The geometric sum has the exact Dirichlet form
//! `e^{j pi x (N-1)/N} sin(pi x) / sin(pi x / N)`, which is what
//! [`ici_matrix`] evaluates; [`ici_matrix_direct`] sums the series.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::model::{shared_subcarrier, steering_vector, ChannelPath, DataGrid, ResourceAssignment, SystemConfig, UeChannel};
use crate::synthesis::forward_plan;

#[derive(Debug, Clone, PartialEq)]
pub struct IciMatrix {
    /// `N x N`, row `n1` is where subcarrier `n1`'s energy lands.
    pub values: DMatrix<Complex64>,
    pub path: ChannelPath,
}

impl IciMatrix {
    /// Largest off-diagonal magnitude.
    pub fn max_off_diagonal(&self) -> f64 {
        self.off_diagonal().fold(0.0, f64::max)
    }

    /// Mean off-diagonal magnitude.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.values.nrows();
        if n < 2 {
            return 0.0;
        }
        self.off_diagonal().sum::<f64>() / (n * (n - 1)) as f64
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.values.nrows();
        (0..n).flat_map(move |r| (0..n).filter(move |&c| c != r).map(move |c| self.values[(r, c)].norm()))
    }

    /// Largest `|Q - diag(e^{-j 2 pi (n-1) df tau})|` entry.
    pub fn deviation_from_phase_diagonal(&self, subcarrier_spacing: f64) -> f64 {
        let n = self.values.nrows();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let ideal = if r == c {
                    delay_phase(r, subcarrier_spacing, self.path.delay)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                worst = worst.max((self.values[(r, c)] - ideal).norm());
            }
        }
        worst
    }
}

fn delay_phase(row: usize, df: f64, tau: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * row as f64 * df * tau)
}

/// `sum_{p=0}^{N-1} e^{j 2 pi (k + eps) p / N}` for integer `k` in `(-N, N)`.
fn dirichlet(k: i64, eps: f64, n: usize) -> Complex64 {
    let nf = n as f64;
    if eps == 0.0 {
        return if k == 0 { Complex64::new(nf, 0.0) } else { Complex64::new(0.0, 0.0) };
    }
    let x = k as f64 + eps;
    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let num = sign * (PI * eps).sin();
    let den = (PI * x / nf).sin();
    Complex64::from_polar(num / den, PI * x * (nf - 1.0) / nf)
}

/// ICI matrix of one path, exact closed form.
pub fn ici_matrix(path: &ChannelPath, config: &SystemConfig) -> IciMatrix {
    let n = config.n_subcarriers;
    let mu = path.doppler_ratio();
    let df = config.subcarrier_spacing;
    let values = DMatrix::from_fn(n, n, |r, c| {
        let eps = -mu * r as f64;
        delay_phase(r, df, path.delay) * dirichlet(r as i64 - c as i64, eps, n) / n as f64
    });
    IciMatrix { values, path: *path }
}

/// ICI matrix by direct summation of the `N`-term series; `O(N^3)`.
pub fn ici_matrix_direct(path: &ChannelPath, config: &SystemConfig) -> IciMatrix {
    let n = config.n_subcarriers;
    let nf = n as f64;
    let mu = path.doppler_ratio();
    let df = config.subcarrier_spacing;
    let values = DMatrix::from_fn(n, n, |r, c| {
        let sum: Complex64 = (0..n)
            .map(|p| {
                let a = Complex64::from_polar(1.0, 2.0 * PI * (r as f64 - c as f64) * p as f64 / nf);
                let b = Complex64::from_polar(1.0, -2.0 * PI * mu * r as f64 * p as f64 / nf);
                a * b
            })
            .sum();
        delay_phase(r, df, path.delay) * sum / nf
    });
    IciMatrix { values, path: *path }
}

/// One OFDM symbol under the sample-level model: frequency-domain row `x`
/// sent through `path`, sample `p` (0-based) weighted per subcarrier by
/// `e^{-j 2 pi n df [(mu - 1) p T_sam + tau]}`.
pub fn sample_exact_symbol(x: &[Complex64], path: &ChannelPath, config: &SystemConfig) -> Vec<Complex64> {
    let mu = path.doppler_ratio();
    let df = config.subcarrier_spacing;
    let t = config.sample_duration;
    (0..x.len())
        .map(|p| {
            x.iter()
                .enumerate()
                .map(|(n, &s)| {
                    s * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * df * ((mu - 1.0) * p as f64 * t + path.delay))
                })
                .sum()
        })
        .collect()
}

/// Forward DFT with `1/N`, the demodulator matching the sample-level model.
pub fn demodulate_exact(samples: &[Complex64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    forward_plan(n).process(&mut buf);
    buf.iter().map(|z| z / n as f64).collect()
}

/// `h = alpha a_r(theta_r) a_t(theta_t)^T w` of one path.
pub fn path_vector(path: &ChannelPath, channel: &UeChannel, config: &SystemConfig) -> DVector<Complex64> {
    let rx = steering_vector(config.spatial_phase(path.aoa), config.n_rx_antennas);
    rx * (path.gain * channel.transmit_gain(path, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Per-subcarrier frequency-domain noise power.
    pub noise_power: f64,
    /// Data draws for the interference expectation.
    pub draws: usize,
    pub seed: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            noise_power: 1e-2,
            draws: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// bits/s/Hz indexed `[symbol][ue position][assigned subcarrier]`, with
    /// interference from the exact ICI matrices.
    pub per_subcarrier_rates: Vec<Vec<Vec<f64>>>,
    /// Same with every ICI matrix replaced by its diagonal.
    pub approx_rates: Vec<Vec<Vec<f64>>>,
    /// Interference-plus-noise power, same indexing.
    pub inp_power: Vec<Vec<Vec<f64>>>,
    pub noise_power: f64,
}

impl RateReport {
    /// Sum over UEs and subcarriers, averaged over symbols.
    pub fn sum_rate(&self) -> f64 {
        sum_rate(&self.per_subcarrier_rates)
    }

    pub fn approx_sum_rate(&self) -> f64 {
        sum_rate(&self.approx_rates)
    }

    /// Mean rate per UE, averaged over symbols and that UE's subcarriers.
    pub fn mean_rate_per_ue(&self) -> Vec<f64> {
        let g = self.per_subcarrier_rates.len() as f64;
        let k = self.per_subcarrier_rates.first().map_or(0, Vec::len);
        (0..k)
            .map(|u| {
                self.per_subcarrier_rates
                    .iter()
                    .map(|sym| sym[u].iter().sum::<f64>() / sym[u].len() as f64)
                    .sum::<f64>()
                    / g
            })
            .collect()
    }
}

fn sum_rate(r: &[Vec<Vec<f64>>]) -> f64 {
    r.iter().map(|sym| sym.iter().flatten().sum::<f64>()).sum::<f64>() / r.len() as f64
}

/// Leakage coefficients of one UE, `c[m][(n1, n2)] = sum_l h_l[m] Q_l[n1, n2]`.
struct UeLeakage {
    per_antenna: Vec<DMatrix<Complex64>>,
}

fn ue_leakage(channel: &UeChannel, config: &SystemConfig) -> UeLeakage {
    let n = config.n_subcarriers;
    let mut per_antenna = vec![DMatrix::zeros(n, n); config.n_rx_antennas];
    for path in &channel.paths {
        let q = ici_matrix(path, config);
        let h = path_vector(path, channel, config);
        for (m, c) in per_antenna.iter_mut().enumerate() {
            *c += q.values.map(|z| z * h[m]);
        }
    }
    UeLeakage { per_antenna }
}

fn check(channels: &[UeChannel], assignments: &[ResourceAssignment], config: &SystemConfig) -> Result<()> {
    config.validate()?;
    if channels.len() != assignments.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "{} channels for {} assignments",
            channels.len(),
            assignments.len()
        )));
    }
    for (i, a) in assignments.iter().enumerate() {
        a.validate(config.n_subcarriers, config.n_symbols)?;
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
    Ok(())
}

fn qpsk(rng: &mut ChaCha8Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(
        if rng.random::<bool>() { s } else { -s },
        if rng.random::<bool>() { s } else { -s },
    )
}

/// Monte Carlo ICI power on one subcarrier (1-based), averaged over data
/// draws and receive antennas.
fn ici_power_mc(leak: &[UeLeakage], assignments: &[ResourceAssignment], subcarrier: usize, draws: usize, seed: u64) -> f64 {
    let target = subcarrier - 1;
    let m_r = leak[0].per_antenna.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let symbols: Vec<Vec<Complex64>> = assignments
            .iter()
            .map(|a| a.subcarriers.iter().map(|_| qpsk(&mut rng)).collect())
            .collect();
        for m in 0..m_r {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((a, s), l) in assignments.iter().zip(&symbols).zip(leak) {
                for (&z, &x) in a.subcarriers.iter().zip(s) {
                    if z - 1 != target {
                        acc += x * l.per_antenna[m][(z - 1, target)];
                    }
                }
            }
            total += acc.norm_sqr();
        }
    }
    total / (draws * m_r) as f64
}

fn ici_power_closed(leak: &[UeLeakage], assignments: &[ResourceAssignment], subcarrier: usize) -> f64 {
    let target = subcarrier - 1;
    let m_r = leak[0].per_antenna.len();
    let mut total = 0.0;
    for (a, l) in assignments.iter().zip(leak) {
        for &z in &a.subcarriers {
            if z - 1 != target {
                total += (0..m_r).map(|m| l.per_antenna[m][(z - 1, target)].norm_sqr()).sum::<f64>();
            }
        }
    }
    total / m_r as f64
}

/// Expected ICI power on `subcarrier` (1-based) over `draws` seeded
/// unit-power QPSK draws.
pub fn ici_power(
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    config: &SystemConfig,
    subcarrier: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check(channels, assignments, config)?;
    if subcarrier == 0 || subcarrier > config.n_subcarriers {
        return Err(IsacError::Domain(format!("subcarrier {subcarrier} outside [1, {}]", config.n_subcarriers)));
    }
    let leak: Vec<_> = channels.iter().map(|c| ue_leakage(c, config)).collect();
    Ok(ici_power_mc(&leak, assignments, subcarrier, draws.max(1), seed))
}

/// The same expectation in closed form for independent unit-power symbols:
/// the sum of squared leakage coefficients.
pub fn ici_power_analytic(
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    config: &SystemConfig,
    subcarrier: usize,
) -> Result<f64> {
    check(channels, assignments, config)?;
    if subcarrier == 0 || subcarrier > config.n_subcarriers {
        return Err(IsacError::Domain(format!("subcarrier {subcarrier} outside [1, {}]", config.n_subcarriers)));
    }
    let leak: Vec<_> = channels.iter().map(|c| ue_leakage(c, config)).collect();
    Ok(ici_power_closed(&leak, assignments, subcarrier))
}

/// Per-subcarrier rates `log2(1 + |d|^2 / s)`, where `d` is the UE's own
/// contribution through the diagonal of its ICI matrices and `s` adds the
/// Monte Carlo ICI power from every other subcarrier to the noise.
pub fn achievable_rates(
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    data: &DataGrid,
    config: &SystemConfig,
    options: &RateOptions,
) -> Result<RateReport> {
    check(channels, assignments, config)?;
    data.check_against(assignments, config.n_symbols)?;
    if !(options.noise_power > 0.0) {
        return Err(IsacError::Domain("rate noise power must be > 0".into()));
    }
    let leak: Vec<_> = channels.iter().map(|c| ue_leakage(c, config)).collect();
    let m_r = config.n_rx_antennas;

    // interference is an expectation over data, so it is shared by all symbols
    let inp: Vec<Vec<f64>> = assignments
        .iter()
        .enumerate()
        .map(|(k, a)| {
            a.subcarriers
                .iter()
                .enumerate()
                .map(|(i, &z)| {
                    let seed = options.seed ^ ((k as u64) << 32 | i as u64);
                    ici_power_mc(&leak, assignments, z, options.draws.max(1), seed) + options.noise_power
                })
                .collect()
        })
        .collect();

    let mut exact = Vec::with_capacity(config.n_symbols);
    let mut approx = Vec::with_capacity(config.n_symbols);
    let mut inp_all = Vec::with_capacity(config.n_symbols);
    for g in 0..config.n_symbols {
        let mut ex_g = Vec::with_capacity(assignments.len());
        let mut ap_g = Vec::with_capacity(assignments.len());
        for (k, a) in assignments.iter().enumerate() {
            let s = data.get(k, g);
            let mut ex_k = Vec::with_capacity(a.n_subcarriers());
            let mut ap_k = Vec::with_capacity(a.n_subcarriers());
            for (i, &z) in a.subcarriers.iter().enumerate() {
                let power: f64 = (0..m_r)
                    .map(|m| (leak[k].per_antenna[m][(z - 1, z - 1)] * s[i]).norm_sqr())
                    .sum();
                ex_k.push((1.0 + power / inp[k][i]).log2());
                ap_k.push((1.0 + power / options.noise_power).log2());
            }
            ex_g.push(ex_k);
            ap_g.push(ap_k);
        }
        exact.push(ex_g);
        approx.push(ap_g);
        inp_all.push(inp.clone());
    }
    Ok(RateReport {
        per_subcarrier_rates: exact,
        approx_rates: approx,
        inp_power: inp_all,
        noise_power: options.noise_power,
    })
}
