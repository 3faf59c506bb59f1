//! Numerical Fisher-information CRB for a single delay-Doppler target.
//!
//! Parameters are `tau` (seconds) and `mu = 2v/c` (unitless). The complex
//! path coefficient is a nuisance parameter, so the reported 2x2 bound is
//! the projection form `(2|b|^2/s^2) Re{V^H (I - P_A) V}` inverted. A second
//! route builds the full 4x4 real FIM over `[Re b, Im b, tau, mu]` and takes
//! the Schur complement; the two must agree.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix2, Matrix4};
use num_complex::Complex64;

use crate::distribution::CrbInputs;
use crate::error::{IsacError, Result};
use crate::model::{index_variance, ChannelPath, ResourceAssignment, SystemConfig, SPEED_OF_LIGHT};

/// Single-target estimation problem for one UE and one receive antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherProblem {
    pub assignment: ResourceAssignment,
    pub target: ChannelPath,
    pub beta: Complex64,
    /// Per-RE noise power.
    pub noise_power: f64,
    pub config: SystemConfig,
}

impl FisherProblem {
    /// Closed-form inputs with the same constants.
    pub fn crb_inputs(&self) -> Result<CrbInputs> {
        CrbInputs::from_indices(
            self.beta.norm_sqr(),
            self.noise_power,
            &self.assignment.subcarriers,
            &self.assignment.symbols,
            self.config.subcarrier_spacing,
            self.config.carrier_freq,
            self.config.symbol_duration,
        )
    }

    fn check(&self) -> Result<()> {
        if !(self.noise_power > 0.0) || self.beta.norm_sqr() == 0.0 {
            return Err(IsacError::Domain("noise power and |beta| must be > 0".into()));
        }
        if index_variance(&self.assignment.subcarriers)? == 0.0 {
            return Err(IsacError::DegenerateDistribution(
                "subcarrier indices have zero variance; delay is unidentifiable".into(),
            ));
        }
        if index_variance(&self.assignment.symbols)? == 0.0 {
            return Err(IsacError::DegenerateDistribution(
                "symbol indices have zero variance; Doppler is unidentifiable".into(),
            ));
        }
        Ok(())
    }

    /// Per-index phase slopes: `(2 pi zeta df, 2 pi fc (psi - 1) Ts)`.
    fn slopes(&self) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let freq = self
            .assignment
            .subcarriers
            .iter()
            .map(|&z| 2.0 * PI * z as f64 * cfg.subcarrier_spacing)
            .collect();
        let time = self
            .assignment
            .symbols
            .iter()
            .map(|&p| 2.0 * PI * cfg.carrier_freq * (p as f64 - 1.0) * cfg.symbol_duration)
            .collect();
        (freq, time)
    }
}

/// Delay-Doppler manifold `xi (x) tau`, entry `g * N_k + n`.
pub fn build_manifold(problem: &FisherProblem) -> DVector<Complex64> {
    let (freq, time) = problem.slopes();
    let tau = problem.target.delay;
    let mu = problem.target.doppler_ratio();
    manifold_from_slopes(&freq, &time, tau, mu)
}

pub(crate) fn manifold_from_slopes(freq: &[f64], time: &[f64], tau: f64, mu: f64) -> DVector<Complex64> {
    let n_k = freq.len();
    DVector::from_fn(time.len() * n_k, |i, _| {
        let (g, n) = (i / n_k, i % n_k);
        Complex64::from_polar(1.0, -(time[g] * mu + freq[n] * tau))
    })
}

/// Analytic derivatives of the manifold with respect to `tau` and `mu`.
pub fn manifold_derivatives(problem: &FisherProblem) -> (DVector<Complex64>, DVector<Complex64>) {
    let (freq, time) = problem.slopes();
    let a = build_manifold(problem);
    let n_k = freq.len();
    let j = Complex64::new(0.0, 1.0);
    let d_tau = DVector::from_fn(a.len(), |i, _| -j * freq[i % n_k] * a[i]);
    let d_mu = DVector::from_fn(a.len(), |i, _| -j * time[i / n_k] * a[i]);
    (d_tau, d_mu)
}

/// `V^H V - V^H A (A^H A)^{-1} A^H V`, evaluated from the vectors.
pub fn projection_residual(problem: &FisherProblem) -> Matrix2<Complex64> {
    let a = build_manifold(problem);
    let (d_tau, d_mu) = manifold_derivatives(problem);
    let gram = a.dotc(&a);
    let cols = [&d_tau, &d_mu];
    let proj: Vec<Complex64> = cols.iter().map(|v| a.dotc(v)).collect();
    Matrix2::from_fn(|r, c| cols[r].dotc(cols[c]) - proj[r].conj() * proj[c] / gram)
}

/// `A^H A`, which equals `G_k N_k` for a unit-modulus manifold.
pub fn manifold_gram(problem: &FisherProblem) -> f64 {
    build_manifold(problem).norm_squared()
}

/// The diagonal residual `4 pi^2 G N diag(df^2 var_zeta, fc^2 Ts^2 var_psi)`.
pub fn projection_residual_closed_form(problem: &FisherProblem) -> Result<Matrix2<f64>> {
    let cfg = &problem.config;
    let gn = (problem.assignment.n_subcarriers() * problem.assignment.n_symbols()) as f64;
    let zeta = index_variance(&problem.assignment.subcarriers)?;
    let psi = index_variance(&problem.assignment.symbols)?;
    let scale = 4.0 * PI * PI * gn;
    Ok(Matrix2::new(
        scale * cfg.subcarrier_spacing.powi(2) * zeta,
        0.0,
        0.0,
        scale * (cfg.carrier_freq * cfg.symbol_duration).powi(2) * psi,
    ))
}

/// CRB matrix for `[tau, mu]` in projection form.
pub fn fisher_crb(problem: &FisherProblem) -> Result<Matrix2<f64>> {
    problem.check()?;
    let residual = projection_residual(problem).map(|z| z.re);
    let fim = residual * (2.0 * problem.beta.norm_sqr() / problem.noise_power);
    invert_fim(fim)
}

/// CRB matrix for `[tau, mu]` via the Schur complement of the full real FIM
/// over `[Re b, Im b, tau, mu]`.
pub fn fisher_crb_full(problem: &FisherProblem) -> Result<Matrix2<f64>> {
    problem.check()?;
    let a = build_manifold(problem);
    let (d_tau, d_mu) = manifold_derivatives(problem);
    let j = Complex64::new(0.0, 1.0);
    // unitless rescaling of tau and mu keeps the 4x4 block well conditioned
    let s_tau = d_tau.norm().recip();
    let s_mu = d_mu.norm().recip();
    let cols = [
        a.clone(),
        a.map(|x| j * x),
        d_tau.map(|x| problem.beta * x * s_tau),
        d_mu.map(|x| problem.beta * x * s_mu),
    ];
    let fim = Matrix4::from_fn(|r, c| 2.0 / problem.noise_power * cols[r].dotc(&cols[c]).re);
    let nuisance = fim.fixed_view::<2, 2>(0, 0).into_owned();
    let cross = fim.fixed_view::<2, 2>(0, 2).into_owned();
    let params = fim.fixed_view::<2, 2>(2, 2).into_owned();
    let nuisance_inv = nuisance
        .try_inverse()
        .ok_or_else(|| IsacError::DegenerateDistribution("nuisance block singular".into()))?;
    let schur = params - cross.transpose() * nuisance_inv * cross;
    let scaled = invert_fim(schur)?;
    let s = Matrix2::new(s_tau, 0.0, 0.0, s_mu);
    Ok(s * scaled * s)
}

fn invert_fim(fim: Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = fim[(0, 0)] * fim[(1, 1)] - fim[(0, 1)] * fim[(1, 0)];
    let scale = fim[(0, 0)] * fim[(1, 1)];
    if !(det > 1e-12 * scale) || !(fim[(0, 0)] > 0.0) {
        return Err(IsacError::DegenerateDistribution("Fisher information is singular".into()));
    }
    fim.try_inverse()
        .ok_or_else(|| IsacError::DegenerateDistribution("Fisher information is singular".into()))
}

/// Maps a `[tau, mu]` CRB to `(CRB(R) m^2, CRB(v) (m/s)^2)` via `R = c tau`
/// and `v = mu c / 2`.
pub fn to_range_velocity(crb: &Matrix2<f64>) -> (f64, f64) {
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    (c2 * crb[(0, 0)], c2 / 4.0 * crb[(1, 1)])
}
