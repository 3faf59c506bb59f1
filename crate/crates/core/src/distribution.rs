//! Subcarrier / sensing-symbol distribution schemes and the closed-form
//! range and velocity CRBs they induce.
//!
//! Both CRBs are inversely proportional to the population variance of the
//! assigned index set, so a scheme is judged entirely by that variance:
//! edge-first maximizes it, subband minimizes it.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::model::{index_variance, index_variance_exact, SPEED_OF_LIGHT};

/// Enumeration guard for exhaustive subset checks.
pub const MAX_ENUMERATION: f64 = 1e7;

/// Named index-selection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Consecutive block per UE.
    Subband,
    /// Every `K`-th index, UE `k` starting at `k`.
    Interleaved,
    /// Band edges first, nested inward per UE.
    EdgeFirst,
    /// Seeded uniform sample without replacement, disjoint across UEs.
    Generalized(u64),
    /// The fixed three-UE, 16-of-48 generalized instance used for the
    /// multi-UE figures.
    GeneralizedPreset,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Subband => f.write_str("subband"),
            SchemeKind::Interleaved => f.write_str("interleaved"),
            SchemeKind::EdgeFirst => f.write_str("edge-first"),
            SchemeKind::Generalized(seed) => write!(f, "generalized:{seed}"),
            SchemeKind::GeneralizedPreset => f.write_str("generalized-preset"),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subband" => Ok(SchemeKind::Subband),
            "interleaved" => Ok(SchemeKind::Interleaved),
            "edge-first" | "edgefirst" => Ok(SchemeKind::EdgeFirst),
            "generalized-preset" | "generalized" => Ok(SchemeKind::GeneralizedPreset),
            _ => match s.strip_prefix("generalized:") {
                Some(seed) => seed
                    .parse()
                    .map(SchemeKind::Generalized)
                    .map_err(|_| IsacError::UnknownScheme(s.to_string())),
                None => Err(IsacError::UnknownScheme(s.to_string())),
            },
        }
    }
}

const PRESET_POOL: usize = 48;
const PRESET_COUNT: usize = 16;

/// Fixed generalized three-UE instance over 48 subcarriers.
pub const GENERALIZED_PRESET: [[usize; 16]; 3] = [
    [1, 2, 5, 8, 9, 13, 16, 17, 19, 25, 26, 29, 34, 36, 38, 41],
    [3, 6, 7, 11, 14, 15, 20, 23, 27, 31, 32, 35, 37, 43, 46, 48],
    [4, 10, 12, 18, 21, 22, 24, 28, 30, 33, 39, 40, 42, 44, 45, 47],
];

/// Index list of UE `ue_index` (1-based) out of `n_ues` under `kind`.
pub fn generate_scheme(
    kind: SchemeKind,
    pool_size: usize,
    count: usize,
    ue_index: usize,
    n_ues: usize,
) -> Result<Vec<usize>> {
    if ue_index == 0 || ue_index > n_ues {
        return Err(IsacError::Domain(format!("ue_index {ue_index} outside [1, {n_ues}]")));
    }
    if count == 0 {
        return Err(IsacError::Domain("count must be >= 1".into()));
    }
    if count > pool_size {
        return Err(capacity("scheme count", count, pool_size));
    }
    let k = ue_index;
    match kind {
        SchemeKind::Subband => {
            let offset = (k - 1) * count;
            if offset + count > pool_size {
                return Err(capacity("subband block end", offset + count, pool_size));
            }
            Ok((offset + 1..=offset + count).collect())
        }
        SchemeKind::Interleaved => {
            if count * n_ues > pool_size {
                return Err(capacity("interleaved total", count * n_ues, pool_size));
            }
            Ok((0..count).map(|i| k + i * n_ues).collect())
        }
        SchemeKind::EdgeFirst => {
            if count * n_ues > pool_size {
                return Err(capacity("edge-first total", count * n_ues, pool_size));
            }
            // extra index of an odd count goes to the low side
            let lo = count.div_ceil(2);
            let hi = count / 2;
            let low = (k - 1) * lo + 1..=k * lo;
            let high = pool_size - k * hi + 1..=pool_size - (k - 1) * hi;
            Ok(low.chain(high).collect())
        }
        SchemeKind::Generalized(seed) => {
            if count * n_ues > pool_size {
                return Err(capacity("generalized total", count * n_ues, pool_size));
            }
            let mut pool: Vec<usize> = (1..=pool_size).collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut chunk = pool[(k - 1) * count..k * count].to_vec();
            chunk.sort_unstable();
            Ok(chunk)
        }
        SchemeKind::GeneralizedPreset => {
            if pool_size != PRESET_POOL || count != PRESET_COUNT || n_ues != GENERALIZED_PRESET.len() {
                return Err(IsacError::Domain(format!(
                    "generalized preset exists only for pool {PRESET_POOL}, count {PRESET_COUNT}, {} UEs",
                    GENERALIZED_PRESET.len()
                )));
            }
            Ok(GENERALIZED_PRESET[k - 1].to_vec())
        }
    }
}

/// Index lists for all `n_ues` UEs under one scheme.
pub fn generate_all(kind: SchemeKind, pool_size: usize, count: usize, n_ues: usize) -> Result<Vec<Vec<usize>>> {
    (1..=n_ues)
        .map(|k| generate_scheme(kind, pool_size, count, k, n_ues))
        .collect()
}

fn capacity(what: &str, size: usize, limit: usize) -> IsacError {
    IsacError::Capacity {
        what: what.to_string(),
        size: size as f64,
        limit: limit as f64,
    }
}

/// Single-UE schemes compared in the single-UE figures (16 of 48).
pub fn single_ue_presets() -> Vec<(SchemeKind, Vec<usize>)> {
    [SchemeKind::Subband, SchemeKind::Interleaved, SchemeKind::EdgeFirst]
        .into_iter()
        .map(|kind| {
            // in a single-UE pool the interleaved stride is still 3
            let list = match kind {
                SchemeKind::Interleaved => generate_scheme(kind, PRESET_POOL, PRESET_COUNT, 1, 3),
                _ => generate_scheme(kind, PRESET_POOL, PRESET_COUNT, 1, 1),
            }
            .expect("preset is feasible");
            (kind, list)
        })
        .collect()
}

/// Three-UE schemes compared in the multi-UE figures (16 of 48 each).
pub fn multi_ue_presets() -> Vec<(SchemeKind, Vec<Vec<usize>>)> {
    [SchemeKind::GeneralizedPreset, SchemeKind::Interleaved, SchemeKind::EdgeFirst]
        .into_iter()
        .map(|kind| (kind, generate_all(kind, PRESET_POOL, PRESET_COUNT, 3).expect("preset is feasible")))
        .collect()
}

/// Inputs of the closed-form CRBs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbInputs {
    /// `|beta|^2`.
    pub beta_power: f64,
    /// Per-RE noise power.
    pub noise_power: f64,
    pub n_k: usize,
    pub g_k: usize,
    pub subcarrier_spacing: f64,
    pub carrier_freq: f64,
    pub symbol_duration: f64,
    pub zeta_variance: f64,
    pub psi_variance: f64,
}

impl CrbInputs {
    /// Fills the variances from index lists.
    #[allow(clippy::too_many_arguments)]
    pub fn from_indices(
        beta_power: f64,
        noise_power: f64,
        subcarriers: &[usize],
        symbols: &[usize],
        subcarrier_spacing: f64,
        carrier_freq: f64,
        symbol_duration: f64,
    ) -> Result<Self> {
        Ok(Self {
            beta_power,
            noise_power,
            n_k: subcarriers.len(),
            g_k: symbols.len(),
            subcarrier_spacing,
            carrier_freq,
            symbol_duration,
            zeta_variance: index_variance(subcarriers)?,
            psi_variance: index_variance(symbols)?,
        })
    }

    fn check(&self) -> Result<()> {
        let vals = [
            ("beta_power", self.beta_power),
            ("noise_power", self.noise_power),
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("carrier_freq", self.carrier_freq),
            ("symbol_duration", self.symbol_duration),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v > 0.0) {
                return Err(IsacError::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.n_k == 0 || self.g_k == 0 {
            return Err(IsacError::Domain("n_k and g_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Range CRB in m^2: `c^2 s^2 / (8 |b|^2 pi^2 G N df^2 var_zeta)`.
pub fn crb_range(inputs: &CrbInputs) -> Result<f64> {
    inputs.check()?;
    if !(inputs.zeta_variance > 0.0) {
        return Err(IsacError::DegenerateDistribution(
            "subcarrier index variance is zero; range CRB is infinite".into(),
        ));
    }
    let pi2 = std::f64::consts::PI.powi(2);
    let den = 8.0
        * inputs.beta_power
        * pi2
        * inputs.g_k as f64
        * inputs.n_k as f64
        * inputs.subcarrier_spacing.powi(2)
        * inputs.zeta_variance;
    Ok(SPEED_OF_LIGHT.powi(2) * inputs.noise_power / den)
}

/// Velocity CRB in (m/s)^2: `c^2 s^2 / (32 |b|^2 pi^2 G N fc^2 Ts^2 var_psi)`.
pub fn crb_velocity(inputs: &CrbInputs) -> Result<f64> {
    inputs.check()?;
    if !(inputs.psi_variance > 0.0) {
        return Err(IsacError::DegenerateDistribution(
            "sensing-symbol index variance is zero; velocity CRB is infinite".into(),
        ));
    }
    let pi2 = std::f64::consts::PI.powi(2);
    let den = 32.0
        * inputs.beta_power
        * pi2
        * inputs.g_k as f64
        * inputs.n_k as f64
        * (inputs.carrier_freq * inputs.symbol_duration).powi(2)
        * inputs.psi_variance;
    Ok(SPEED_OF_LIGHT.powi(2) * inputs.noise_power / den)
}

/// Outcome of an exhaustive variance scan over all `count`-subsets of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalityReport {
    pub pool_size: usize,
    pub count: usize,
    pub subsets_checked: u64,
    pub max_variance: f64,
    pub min_variance: f64,
    /// Every subset attaining the maximum, in lexicographic order.
    pub argmax: Vec<Vec<usize>>,
    /// Every subset attaining the minimum, in lexicographic order.
    pub argmin: Vec<Vec<usize>>,
    pub edge_first_is_max: bool,
    pub subband_is_min: bool,
}

impl ExtremalityReport {
    pub fn confirmed(&self) -> bool {
        self.edge_first_is_max && self.subband_is_min
    }
}

/// `C(n, k)` as a float, for enumeration guards.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustively checks that edge-first attains the maximum index variance and
/// subband the minimum over all `C(pool_size, count)` subsets.
pub fn verify_extremality(pool_size: usize, count: usize) -> Result<ExtremalityReport> {
    if count == 0 || count > pool_size {
        return Err(IsacError::Domain(format!("count {count} must lie in [1, {pool_size}]")));
    }
    let total = binomial(pool_size, count);
    if total > MAX_ENUMERATION {
        return Err(IsacError::Capacity {
            what: "subset enumeration (use a sampling check instead)".into(),
            size: total,
            limit: MAX_ENUMERATION,
        });
    }

    // n^2 * variance = n * sum x^2 - (sum x)^2; same n for every subset
    let scaled = |s: &[usize]| -> i128 {
        let n = s.len() as i128;
        let (s1, s2) = s
            .iter()
            .fold((0i128, 0i128), |(a, b), &x| (a + x as i128, b + (x * x) as i128));
        n * s2 - s1 * s1
    };

    let mut best: Option<(i128, Vec<Vec<usize>>)> = None;
    let mut worst: Option<(i128, Vec<Vec<usize>>)> = None;
    let mut checked = 0u64;
    for subset in (1..=pool_size).combinations(count) {
        checked += 1;
        let v = scaled(&subset);
        match &mut best {
            Some((b, list)) if v == *b => list.push(subset.clone()),
            Some((b, _)) if v < *b => {}
            _ => best = Some((v, vec![subset.clone()])),
        }
        match &mut worst {
            Some((w, list)) if v == *w => list.push(subset),
            Some((w, _)) if v > *w => {}
            _ => worst = Some((v, vec![subset])),
        }
    }
    let (best_v, argmax) = best.expect("at least one subset");
    let (worst_v, argmin) = worst.expect("at least one subset");

    let edge = generate_scheme(SchemeKind::EdgeFirst, pool_size, count, 1, 1)?;
    let sub = generate_scheme(SchemeKind::Subband, pool_size, count, 1, 1)?;
    let n2 = (count * count) as f64;
    Ok(ExtremalityReport {
        pool_size,
        count,
        subsets_checked: checked,
        max_variance: best_v as f64 / n2,
        min_variance: worst_v as f64 / n2,
        argmax,
        argmin,
        edge_first_is_max: index_variance_exact(&edge) * (n2 as i128) == best_v.into(),
        subband_is_min: index_variance_exact(&sub) * (n2 as i128) == worst_v.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::index_variance;

    #[test]
    fn table_one_lists() {
        assert_eq!(generate_scheme(SchemeKind::Subband, 48, 16, 1, 1).unwrap(), (1..=16).collect::<Vec<_>>());
        assert_eq!(
            generate_scheme(SchemeKind::Interleaved, 48, 16, 1, 3).unwrap(),
            (0..16).map(|i| 1 + 3 * i).collect::<Vec<_>>()
        );
        assert_eq!(
            generate_scheme(SchemeKind::EdgeFirst, 48, 16, 1, 3).unwrap(),
            (1..=8).chain(41..=48).collect::<Vec<_>>()
        );
    }

    #[test]
    fn table_two_edge_first_nesting() {
        let all = generate_all(SchemeKind::EdgeFirst, 48, 16, 3).unwrap();
        assert_eq!(all[1], (9..=16).chain(33..=40).collect::<Vec<_>>());
        assert_eq!(all[2], (17..=32).collect::<Vec<_>>());
    }

    #[test]
    fn table_two_interleaved() {
        let all = generate_all(SchemeKind::Interleaved, 48, 16, 3).unwrap();
        assert_eq!(all[1], (0..16).map(|i| 2 + 3 * i).collect::<Vec<_>>());
        assert_eq!(all[2], (0..16).map(|i| 3 + 3 * i).collect::<Vec<_>>());
    }

    #[test]
    fn generalized_preset_is_a_partition() {
        let mut all: Vec<usize> = GENERALIZED_PRESET.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (1..=48).collect::<Vec<_>>());
        assert!(generate_scheme(SchemeKind::GeneralizedPreset, 40, 16, 1, 3).is_err());
    }

    #[test]
    fn generalized_is_seeded_and_disjoint() {
        let a = generate_all(SchemeKind::Generalized(7), 48, 12, 4).unwrap();
        let b = generate_all(SchemeKind::Generalized(7), 48, 12, 4).unwrap();
        assert_eq!(a, b);
        let mut flat: Vec<usize> = a.iter().flatten().copied().collect();
        flat.sort_unstable();
        flat.dedup();
        assert_eq!(flat.len(), 48);
        let c = generate_all(SchemeKind::Generalized(8), 48, 12, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn edge_first_odd_count_puts_extra_low() {
        assert_eq!(generate_scheme(SchemeKind::EdgeFirst, 10, 3, 1, 1).unwrap(), vec![1, 2, 10]);
        assert_eq!(generate_scheme(SchemeKind::EdgeFirst, 10, 3, 2, 2).unwrap(), vec![3, 4, 9]);
    }

    #[test]
    fn infeasible_counts_are_capacity_errors() {
        assert!(matches!(
            generate_scheme(SchemeKind::Interleaved, 48, 17, 1, 3),
            Err(IsacError::Capacity { .. })
        ));
        assert!(matches!(
            generate_scheme(SchemeKind::Subband, 48, 16, 4, 4),
            Err(IsacError::Capacity { .. })
        ));
        assert!(generate_scheme(SchemeKind::Subband, 4, 5, 1, 1).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in [
            SchemeKind::Subband,
            SchemeKind::Interleaved,
            SchemeKind::EdgeFirst,
            SchemeKind::Generalized(42),
            SchemeKind::GeneralizedPreset,
        ] {
            assert_eq!(k.to_string().parse::<SchemeKind>().unwrap(), k);
        }
        assert!("diagonal".parse::<SchemeKind>().is_err());
    }

    fn inputs(zeta: f64, psi: f64) -> CrbInputs {
        CrbInputs {
            beta_power: 1.0,
            noise_power: 1.0,
            n_k: 16,
            g_k: 16,
            subcarrier_spacing: 1e5,
            carrier_freq: 28e9,
            symbol_duration: 1.0 / 9e4,
            zeta_variance: zeta,
            psi_variance: psi,
        }
    }

    #[test]
    fn crb_range_reference_value() {
        // c^2 / (8 pi^2 * 256 * 1e10 * 21.25), evaluated term by term
        let c2 = 2.997_924_58e8f64 * 2.997_924_58e8;
        let expected = c2 / (8.0 * 9.869_604_401_089_358 * 256.0 * 1e10 * 21.25);
        let got = crb_range(&inputs(21.25, 21.25)).unwrap();
        assert!((got - expected).abs() / expected < 1e-12);
        assert!((got - 20.924).abs() < 1e-3);
    }

    #[test]
    fn crb_velocity_reference_value() {
        let c2 = 2.997_924_58e8f64 * 2.997_924_58e8;
        let fcts = 28e9 / 9e4;
        let expected = c2 / (32.0 * 9.869_604_401_089_358 * 256.0 * fcts * fcts * 21.25);
        let got = crb_velocity(&inputs(21.25, 21.25)).unwrap();
        assert!((got - expected).abs() / expected < 1e-12);
        assert!((got - 0.5405).abs() < 1e-3);
    }

    #[test]
    fn crb_scaling_laws() {
        let base = inputs(21.25, 21.25);
        let r = crb_range(&base).unwrap();
        assert!((crb_range(&inputs(42.5, 21.25)).unwrap() * 2.0 - r).abs() < 1e-12 * r);
        assert!(crb_range(&inputs(1e12, 1.0)).unwrap() < 1e-9);

        let v = crb_velocity(&base).unwrap();
        let doubled = CrbInputs { g_k: 32, ..base };
        assert!((crb_velocity(&doubled).unwrap() * 2.0 - v).abs() < 1e-12 * v);

        let zi = inputs(191.25, 405.25);
        let ratio = crb_velocity(&zi).unwrap() / crb_range(&zi).unwrap();
        let expected = 1e10 * 191.25 / (4.0 * (28e9f64 / 9e4).powi(2) * 405.25);
        assert!((ratio - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn degenerate_variance_is_rejected() {
        assert!(matches!(crb_range(&inputs(0.0, 1.0)), Err(IsacError::DegenerateDistribution(_))));
        assert!(matches!(crb_velocity(&inputs(1.0, 0.0)), Err(IsacError::DegenerateDistribution(_))));
    }

    #[test]
    fn extremality_pool_12_count_4() {
        let r = verify_extremality(12, 4).unwrap();
        assert_eq!(r.subsets_checked, 495);
        assert_eq!(r.argmax, vec![vec![1, 2, 11, 12]]);
        assert_eq!(r.argmin.len(), 9);
        assert!(r.argmin.iter().all(|s| s.windows(2).all(|w| w[1] == w[0] + 1)));
        assert_eq!(r.min_variance, 15.0 / 12.0);
        assert!(r.confirmed());
    }

    #[test]
    fn extremality_pool_16_count_6() {
        let r = verify_extremality(16, 6).unwrap();
        assert_eq!(r.subsets_checked, 8008);
        assert_eq!(r.argmax, vec![vec![1, 2, 3, 14, 15, 16]]);
        assert!(r.confirmed());
    }

    #[test]
    fn extremality_full_pool() {
        let r = verify_extremality(7, 7).unwrap();
        assert_eq!(r.subsets_checked, 1);
        assert_eq!(r.max_variance, r.min_variance);
        assert!(r.confirmed());
    }

    #[test]
    fn extremality_guard() {
        assert!(matches!(verify_extremality(60, 20), Err(IsacError::Capacity { .. })));
    }

    #[test]
    fn mirrored_scheme_has_equal_variance() {
        let s = GENERALIZED_PRESET[0].to_vec();
        let m: Vec<usize> = s.iter().map(|&i| 49 - i).collect();
        assert_eq!(index_variance(&s).unwrap(), index_variance(&m).unwrap());
    }
}
