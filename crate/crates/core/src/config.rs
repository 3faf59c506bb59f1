//! TOML scenario files.
//!
//! ```toml
//! [system]                      # every key optional, defaults shown
//! n_subcarriers = 48
//! subcarrier_spacing = 100e3    # Hz
//! carrier_freq = 28e9           # Hz
//! symbol_duration = 1.1111e-5   # s, CP included
//! n_rx_antennas = 8
//! n_tx_antennas = 2
//! n_symbols = 48
//! noise_power = 1e-3            # per time-domain sample
//!
//! [allocation]                  # used by UEs without explicit lists
//! scheme = "interleaved"        # subband | interleaved | edge-first |
//!                               # generalized:<seed> | generalized-preset
//! subcarriers_per_ue = 16
//! symbols_per_ue = 16
//!
//! [music]
//! range = [0.0, 150.0, 0.5]     # min, max, step (m)
//! velocity = [-40.0, 80.0, 0.25]
//! smoothing = [8, 8]            # optional subarray sizes
//!
//! [[ue]]
//! subcarriers = [1, 4, 7]       # optional, 1-based
//! symbols = [1, 2, 3]           # optional, 1-based
//! [[ue.path]]
//! range = 30.0                  # m
//! velocity = 10.0               # m/s, radial
//! aoa = 0.7                     # rad
//! aod = 1.2                     # rad
//! gain = [1.0, 0.0]             # re, im
//! ```
//!
//! The sample and CP durations follow from the subcarrier count, spacing
//! and symbol duration; the antenna spacing is half a wavelength.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distribution::{generate_scheme, SchemeKind};
use crate::error::{IsacError, Result};
use crate::model::{ChannelPath, ResourceAssignment, SystemConfig, UeChannel};
use crate::music::{GridSpec, MusicConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_subcarriers: Option<usize>,
    pub subcarrier_spacing: Option<f64>,
    pub carrier_freq: Option<f64>,
    pub symbol_duration: Option<f64>,
    pub n_rx_antennas: Option<usize>,
    pub n_tx_antennas: Option<usize>,
    pub n_symbols: Option<usize>,
    pub noise_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    pub scheme: String,
    pub subcarriers_per_ue: usize,
    pub symbols_per_ue: usize,
}

impl Default for AllocationSection {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::GeneralizedPreset.to_string(),
            subcarriers_per_ue: 16,
            symbols_per_ue: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicSection {
    pub range: [f64; 3],
    pub velocity: [f64; 3],
    pub smoothing: Option<[usize; 2]>,
}

impl Default for MusicSection {
    fn default() -> Self {
        Self {
            range: [0.0, 150.0, 0.5],
            velocity: [-40.0, 80.0, 0.25],
            smoothing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub range: f64,
    pub velocity: f64,
    #[serde(default = "default_aoa")]
    pub aoa: f64,
    #[serde(default = "default_aod")]
    pub aod: f64,
    #[serde(default = "default_gain")]
    pub gain: [f64; 2],
}

fn default_aoa() -> f64 {
    0.7
}

fn default_aod() -> f64 {
    1.2
}

fn default_gain() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSection {
    pub subcarriers: Option<Vec<usize>>,
    pub symbols: Option<Vec<usize>>,
    #[serde(rename = "path")]
    pub paths: Vec<PathSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub snr_grid_db: Option<Vec<f64>>,
}

/// Parsed scenario file; absent sections take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub allocation: AllocationSection,
    #[serde(default)]
    pub music: MusicSection,
    #[serde(default = "default_ues", rename = "ue")]
    pub ues: Vec<UeSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            system: SystemSection::default(),
            allocation: AllocationSection::default(),
            music: MusicSection::default(),
            ues: default_ues(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Three UEs at 30, 50 and 80 m moving at 10, 30 and 20 m/s.
fn default_ues() -> Vec<UeSection> {
    [(30.0, 10.0), (50.0, 30.0), (80.0, 20.0)]
        .into_iter()
        .map(|(range, velocity)| UeSection {
            subcarriers: None,
            symbols: None,
            paths: vec![PathSection {
                range,
                velocity,
                aoa: default_aoa(),
                aod: default_aod(),
                gain: default_gain(),
            }],
        })
        .collect()
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: SystemConfig,
    pub channels: Vec<UeChannel>,
    pub assignments: Vec<ResourceAssignment>,
    pub music: MusicConfig,
    pub experiment: ExperimentSection,
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IsacError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| IsacError::Parse(e.to_string()))
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        let d = SystemConfig::default();
        let s = &self.system;
        let mut cfg = SystemConfig::with_numerology(
            s.n_subcarriers.unwrap_or(d.n_subcarriers),
            s.subcarrier_spacing.unwrap_or(d.subcarrier_spacing),
            s.carrier_freq.unwrap_or(d.carrier_freq),
            s.symbol_duration.unwrap_or(d.symbol_duration),
        )?;
        cfg.n_rx_antennas = s.n_rx_antennas.unwrap_or(d.n_rx_antennas);
        cfg.n_tx_antennas = s.n_tx_antennas.unwrap_or(d.n_tx_antennas);
        cfg.n_symbols = s.n_symbols.unwrap_or(d.n_symbols);
        cfg.noise_power = s.noise_power.unwrap_or(d.noise_power);
        cfg.n_ues = self.ues.len().max(1);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn music_config(&self) -> Result<MusicConfig> {
        let [rmin, rmax, rstep] = self.music.range;
        let [vmin, vmax, vstep] = self.music.velocity;
        let cfg = MusicConfig {
            range_grid: GridSpec::new(rmin, rmax, rstep)?,
            velocity_grid: GridSpec::new(vmin, vmax, vstep)?,
            n_sources: 1,
            smoothing: self.music.smoothing.map(|[f, t]| (f, t)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<Scenario> {
        if self.ues.is_empty() {
            return Err(IsacError::InvalidConfig("at least one [[ue]] is required".into()));
        }
        let system = self.system_config()?;
        let scheme: SchemeKind = self.allocation.scheme.parse()?;
        let n_ues = self.ues.len();
        let mut channels = Vec::with_capacity(n_ues);
        let mut assignments = Vec::with_capacity(n_ues);
        for (k, ue) in self.ues.iter().enumerate() {
            if ue.paths.is_empty() {
                return Err(IsacError::InvalidConfig(format!("ue {} has no [[ue.path]]", k + 1)));
            }
            let paths = ue
                .paths
                .iter()
                .map(|p| ChannelPath::from_range(Complex64::new(p.gain[0], p.gain[1]), p.range, p.velocity, p.aoa, p.aod))
                .collect::<Result<Vec<_>>>()?;
            channels.push(UeChannel::with_uniform_beamformer(paths, system.n_tx_antennas)?);
            let subs = match &ue.subcarriers {
                Some(list) => list.clone(),
                None => generate_scheme(scheme, system.n_subcarriers, self.allocation.subcarriers_per_ue, k + 1, n_ues)?,
            };
            let syms = match &ue.symbols {
                Some(list) => list.clone(),
                None => generate_scheme(scheme, system.n_symbols, self.allocation.symbols_per_ue, k + 1, n_ues)?,
            };
            assignments.push(ResourceAssignment::new(k + 1, subs, syms, system.n_subcarriers, system.n_symbols)?);
        }
        Ok(Scenario {
            system,
            channels,
            assignments,
            music: self.music_config()?,
            experiment: self.experiment.clone(),
        })
    }
}
