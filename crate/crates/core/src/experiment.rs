//! Named, seeded end-to-end experiments producing plot-ready tables.
//!
//! SNR is per resource element: the per-antenna power `|beta|^2` of a UE's
//! first path over the per-RE noise power after demodulation. Every trial
//! draws its data and noise seeds from `(seed, scheme, snr, trial)`, so a
//! table depends only on the experiment inputs and never on thread scheduling.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compensation::extract_csi_all;
use crate::config::{Scenario, ScenarioFile};
use crate::distribution::{crb_range, crb_velocity, generate_scheme, CrbInputs, SchemeKind};
use crate::error::{IsacError, Result};
use crate::fisher::{fisher_crb, to_range_velocity, FisherProblem};
use crate::model::{shared_subcarrier, ChannelPath, DataGrid, ResourceAssignment, SystemConfig, UeChannel};
use crate::music::{estimate, Lattice, MusicConfig};
use crate::partition::{variance_bound, PartitionInstance};
use crate::rates::{achievable_rates, ici_matrix, ici_power, ici_power_analytic, RateOptions};
use crate::synthesis::{path_beta, synthesize_frames, time_noise_for_re_noise};

/// Relative tolerance between the Fisher oracle and the closed-form CRB.
pub const CRB_AGREEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    Fig3Ici,
    Fig4Peaks,
    Fig5RangeMse,
    Fig6VelocityMse,
    Fig6Maxmin,
    Fig7RateVsCrb,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Fig3Ici,
        ExperimentKind::Fig4Peaks,
        ExperimentKind::Fig5RangeMse,
        ExperimentKind::Fig6VelocityMse,
        ExperimentKind::Fig6Maxmin,
        ExperimentKind::Fig7RateVsCrb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig3Ici => "fig3_ici",
            ExperimentKind::Fig4Peaks => "fig4_peaks",
            ExperimentKind::Fig5RangeMse => "fig5_range_mse",
            ExperimentKind::Fig6VelocityMse => "fig6_velocity_mse",
            ExperimentKind::Fig6Maxmin => "fig6_maxmin",
            ExperimentKind::Fig7RateVsCrb => "fig7_rate_vs_crb",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            ExperimentKind::Fig5RangeMse | ExperimentKind::Fig6VelocityMse => 500,
            ExperimentKind::Fig4Peaks => 20,
            _ => 100,
        }
    }

    fn default_snr_grid(self) -> Vec<f64> {
        match self {
            ExperimentKind::Fig3Ici => Vec::new(),
            ExperimentKind::Fig4Peaks => vec![20.0],
            ExperimentKind::Fig7RateVsCrb => (0..=6).map(|i| 5.0 * i as f64).collect(),
            _ => (-4..=6).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| IsacError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub trials: usize,
    pub snr_grid_db: Vec<f64>,
    pub seed: u64,
    /// Scenario deltas on top of the defaults.
    pub scenario: ScenarioFile,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            trials: kind.default_trials(),
            snr_grid_db: kind.default_snr_grid(),
            seed: 0,
            scenario: ScenarioFile::default(),
        }
    }

    /// Builds a spec from a scenario file, taking name, trials, seed and SNR
    /// grid from its `[experiment]` section where present.
    pub fn from_scenario(scenario: ScenarioFile, kind: Option<ExperimentKind>) -> Result<Self> {
        let kind = match (kind, &scenario.experiment.name) {
            (Some(k), _) => k,
            (None, Some(name)) => name.parse()?,
            (None, None) => return Err(IsacError::UnknownExperiment("<none>".into())),
        };
        let mut spec = Self::new(kind);
        if let Some(t) = scenario.experiment.trials {
            spec.trials = t;
        }
        if let Some(s) = scenario.experiment.seed {
            spec.seed = s;
        }
        if let Some(g) = &scenario.experiment.snr_grid_db {
            spec.snr_grid_db = g.clone();
        }
        spec.scenario = scenario;
        Ok(spec)
    }

    /// SHA-256 of the canonical TOML encoding, hex.
    pub fn config_hash(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| IsacError::Parse(e.to_string()))?;
        Ok(Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub snr_db: Option<f64>,
    pub metric: String,
    pub value: f64,
    /// Normal-approximation 95% halfwidth over trials.
    pub ci_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: ExperimentKind,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, scheme: &str, snr_db: Option<f64>, metric: &str, value: f64, ci: Option<f64>) {
        self.rows.push(ResultRow {
            scheme: scheme.to_string(),
            snr_db,
            metric: metric.to_string(),
            value,
            ci_halfwidth: ci,
        });
    }

    /// First row matching all three keys.
    pub fn value(&self, scheme: &str, snr_db: Option<f64>, metric: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.snr_db == snr_db && r.metric == metric)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scheme", "snr_db", "metric", "value", "ci_halfwidth"])
            .map_err(|e| IsacError::Parse(e.to_string()))?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.scheme.clone(),
                opt(r.snr_db),
                r.metric.clone(),
                r.value.to_string(),
                opt(r.ci_halfwidth),
            ])
            .map_err(|e| IsacError::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| IsacError::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| IsacError::Parse(e.to_string()))
    }

    /// gnuplot-style column legend.
    pub fn legend(&self) -> String {
        let mut s = format!("# {}\n", self.experiment);
        s.push_str("# column 1: scheme\n# column 2: snr_db (per resource element, dB; empty if not applicable)\n");
        s.push_str("# column 3: metric\n# column 4: value\n# column 5: ci_halfwidth (95%, normal approximation; empty if deterministic)\n");
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.metric.as_str()) {
                seen.push(&r.metric);
            }
        }
        for m in seen {
            let _ = writeln!(s, "# metric {m}: {}", metric_unit(m));
        }
        s
    }
}

fn metric_unit(metric: &str) -> &'static str {
    let base = metric.split('@').next().unwrap_or(metric);
    if base.contains("range") && !base.contains("rate") {
        if base.contains("mse") || base.contains("crb") {
            "m^2"
        } else {
            "m"
        }
    } else if base.contains("velocity") {
        if base.contains("mse") || base.contains("crb") {
            "(m/s)^2"
        } else {
            "m/s"
        }
    } else if base.contains("rate") {
        "bit/s/Hz"
    } else if base.contains("power") {
        "linear, relative to unit path power"
    } else {
        "unitless"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    pub snr_grid_db: Vec<f64>,
    pub config_sha256: String,
    pub version: String,
    pub rows: usize,
    pub csv: String,
}

/// Runs `spec` and writes `<name>.csv`, `<name>.legend` and
/// `<name>.manifest.toml` into `dir`.
pub fn run_to_dir(spec: &ExperimentSpec, dir: &Path) -> Result<Manifest> {
    let table = run(spec)?;
    std::fs::create_dir_all(dir)?;
    let name = spec.kind.name();
    let csv_name = format!("{name}.csv");
    std::fs::write(dir.join(&csv_name), table.to_csv()?)?;
    std::fs::write(dir.join(format!("{name}.legend")), table.legend())?;
    let manifest = Manifest {
        experiment: name.to_string(),
        seed: spec.seed,
        trials: spec.trials,
        snr_grid_db: spec.snr_grid_db.clone(),
        config_sha256: spec.config_hash()?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        rows: table.rows.len(),
        csv: csv_name,
    };
    let text = toml::to_string(&manifest).map_err(|e| IsacError::Parse(e.to_string()))?;
    std::fs::write(dir.join(format!("{name}.manifest.toml")), text)?;
    Ok(manifest)
}

/// Human-readable problems with `spec`; empty when it can run.
pub fn validate(spec: &ExperimentSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.trials == 0 {
        out.push("trials must be >= 1".to_string());
    }
    if spec.snr_grid_db.iter().any(|x| !x.is_finite()) {
        out.push("SNR grid contains non-finite values".to_string());
    }
    if spec.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
        out.push("SNR grid must be strictly ascending".to_string());
    }
    let scenario = match spec.scenario.resolve() {
        Ok(s) => s,
        Err(e) => {
            out.push(format!("scenario: {e}"));
            return out;
        }
    };
    for (i, a) in scenario.assignments.iter().enumerate() {
        for b in &scenario.assignments[i + 1..] {
            if let Some(z) = shared_subcarrier(a, b) {
                out.push(format!(
                    "UEs {} and {} share subcarrier {z}; data compensation cannot separate their channels",
                    a.ue_index, b.ue_index
                ));
            }
        }
    }
    let (rg, vg) = (scenario.music.range_grid, scenario.music.velocity_grid);
    for (k, ch) in scenario.channels.iter().enumerate() {
        for p in &ch.paths {
            if !rg.contains(p.range()) {
                out.push(format!(
                    "UE {} range {} m is outside the MUSIC grid [{}, {}]",
                    k + 1,
                    p.range(),
                    rg.min,
                    rg.max
                ));
            }
            if !vg.contains(p.radial_velocity) {
                out.push(format!(
                    "UE {} velocity {} m/s is outside the MUSIC grid [{}, {}]",
                    k + 1,
                    p.radial_velocity,
                    vg.min,
                    vg.max
                ));
            }
        }
    }
    let schemes = match spec.kind {
        ExperimentKind::Fig3Ici => Vec::new(),
        ExperimentKind::Fig5RangeMse | ExperimentKind::Fig6VelocityMse => {
            single_ue_schemes(&scenario, &spec.scenario).err().into_iter().collect()
        }
        ExperimentKind::Fig4Peaks | ExperimentKind::Fig6Maxmin => {
            multi_ue_schemes(&scenario, &spec.scenario, false).err().into_iter().collect()
        }
        ExperimentKind::Fig7RateVsCrb => multi_ue_schemes(&scenario, &spec.scenario, true).err().into_iter().collect(),
    };
    out.extend(schemes.into_iter().map(|e| format!("scheme preset: {e}")));
    out
}

pub fn run(spec: &ExperimentSpec) -> Result<ResultTable> {
    let problems = validate(spec);
    if !problems.is_empty() {
        return Err(IsacError::InvalidConfig(problems.join("; ")));
    }
    match spec.kind {
        ExperimentKind::Fig3Ici => run_ici(spec),
        ExperimentKind::Fig4Peaks => run_peaks(spec),
        ExperimentKind::Fig5RangeMse => Ok(filter(single_ue_sweep(spec)?, spec.kind, "range")),
        ExperimentKind::Fig6VelocityMse => Ok(filter(single_ue_sweep(spec)?, spec.kind, "velocity")),
        ExperimentKind::Fig6Maxmin => run_maxmin(spec),
        ExperimentKind::Fig7RateVsCrb => run_rates(spec),
    }
}

fn filter(table: ResultTable, kind: ExperimentKind, axis: &str) -> ResultTable {
    ResultTable {
        experiment: kind,
        rows: table.rows.into_iter().filter(|r| r.metric.contains(axis)).collect(),
    }
}

/// Seed for one trial, from a ChaCha stream keyed by the trial coordinates.
pub fn derive_seed(seed: u64, scheme: usize, snr: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((scheme as u64) << 48) | ((snr as u64) << 32) | trial as u64);
    rng.next_u64()
}

/// Sample mean and 95% halfwidth `1.96 s / sqrt(T)`.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let t = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / t;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (mean, 1.96 * (var / t).sqrt())
}

/// Per-antenna `|beta|^2` of a UE's first path.
fn path_power(ch: &UeChannel, cfg: &SystemConfig) -> f64 {
    path_beta(&ch.paths[0], ch, cfg, 0).norm_sqr()
}

/// Per-RE noise power for `snr_db` relative to the mean first-path power.
fn re_noise(channels: &[UeChannel], cfg: &SystemConfig, snr_db: f64) -> f64 {
    let p = channels.iter().map(|c| path_power(c, cfg)).sum::<f64>() / channels.len() as f64;
    p / 10f64.powf(snr_db / 10.0)
}

/// Range and velocity CRBs of a path, from the closed form and the Fisher
/// oracle, with all receive antennas pooled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbPair {
    pub range: f64,
    pub velocity: f64,
    pub range_oracle: f64,
    pub velocity_oracle: f64,
}

pub fn crb_pair(
    cfg: &SystemConfig,
    assignment: &ResourceAssignment,
    path: &ChannelPath,
    beta_power: f64,
    noise_re: f64,
) -> Result<CrbPair> {
    let pooled = beta_power * cfg.n_rx_antennas as f64;
    let inputs = CrbInputs::from_indices(
        pooled,
        noise_re,
        &assignment.subcarriers,
        &assignment.symbols,
        cfg.subcarrier_spacing,
        cfg.carrier_freq,
        cfg.symbol_duration,
    )?;
    let problem = FisherProblem {
        assignment: assignment.clone(),
        target: *path,
        beta: num_complex::Complex64::new(pooled.sqrt(), 0.0),
        noise_power: noise_re,
        config: cfg.clone(),
    };
    let (range_oracle, velocity_oracle) = to_range_velocity(&fisher_crb(&problem)?);
    let pair = CrbPair {
        range: crb_range(&inputs)?,
        velocity: crb_velocity(&inputs)?,
        range_oracle,
        velocity_oracle,
    };
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    if rel(pair.range_oracle, pair.range) > CRB_AGREEMENT || rel(pair.velocity_oracle, pair.velocity) > CRB_AGREEMENT {
        return Err(IsacError::ConstraintViolation(format!(
            "Fisher oracle {:?} disagrees with closed form",
            pair
        )));
    }
    Ok(pair)
}

/// Single-UE 16-of-48 style schemes at the scenario's sizes.
fn single_ue_schemes(sc: &Scenario, file: &ScenarioFile) -> Result<Vec<(String, ResourceAssignment)>> {
    let (n, g) = (sc.system.n_subcarriers, sc.system.n_symbols);
    let (ns, gs) = (file.allocation.subcarriers_per_ue, file.allocation.symbols_per_ue);
    [SchemeKind::EdgeFirst, SchemeKind::Interleaved, SchemeKind::Subband]
        .into_iter()
        .map(|kind| {
            // a lone UE interleaves with the stride that fills the pool
            let subs = generate_scheme(kind, n, ns, 1, stride(kind, n, ns))?;
            let syms = generate_scheme(kind, g, gs, 1, stride(kind, g, gs))?;
            Ok((kind.to_string(), ResourceAssignment::new(1, subs, syms, n, g)?))
        })
        .collect()
}

fn stride(kind: SchemeKind, pool: usize, count: usize) -> usize {
    if kind == SchemeKind::Interleaved {
        (pool / count.max(1)).max(1)
    } else {
        1
    }
}

/// Multi-UE schemes, one assignment per scenario UE.
fn multi_ue_schemes(
    sc: &Scenario,
    file: &ScenarioFile,
    with_subband: bool,
) -> Result<Vec<(String, Vec<ResourceAssignment>)>> {
    let (n, g) = (sc.system.n_subcarriers, sc.system.n_symbols);
    let (ns, gs) = (file.allocation.subcarriers_per_ue, file.allocation.symbols_per_ue);
    let k = sc.channels.len();
    let mut kinds = vec![SchemeKind::Interleaved, SchemeKind::GeneralizedPreset, SchemeKind::EdgeFirst];
    if with_subband {
        kinds.push(SchemeKind::Subband);
    }
    kinds
        .into_iter()
        .map(|kind| {
            let list = (1..=k)
                .map(|u| {
                    let subs = generate_scheme(kind, n, ns, u, k)?;
                    let syms = generate_scheme(kind, g, gs, u, k)?;
                    ResourceAssignment::new(u, subs, syms, n, g)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((kind.to_string(), list))
        })
        .collect()
}

/// Squared range error, squared velocity error, range estimate, velocity estimate.
type TrialError = (f64, f64, f64, f64);

/// Errors of every UE in one trial.
fn trial_errors(
    cfg: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    music: &MusicConfig,
    noise_re: f64,
    seed: u64,
) -> Result<Vec<TrialError>> {
    let mut cfg = cfg.clone();
    cfg.n_ues = channels.len();
    cfg.noise_power = time_noise_for_re_noise(noise_re, cfg.n_subcarriers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = DataGrid::qpsk(assignments, cfg.n_symbols, rng.next_u64());
    let frames = synthesize_frames(&cfg, channels, assignments, &data, rng.next_u64())?;
    (0..channels.len())
        .map(|k| {
            let csi = extract_csi_all(&frames, k)?;
            let est = estimate(&csi, &Lattice::new(&assignments[k], &cfg), music)?;
            let (r, v) = est.pairs.first().map_or(
                (
                    0.5 * (music.range_grid.min + music.range_grid.max),
                    0.5 * (music.velocity_grid.min + music.velocity_grid.max),
                ),
                |e| (e.range, e.velocity),
            );
            let truth = &channels[k].paths[0];
            Ok(((r - truth.range()).powi(2), (v - truth.radial_velocity).powi(2), r, v))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_trials(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    music: &MusicConfig,
    noise_re: f64,
    scheme_idx: usize,
    snr_idx: usize,
) -> Result<Vec<Vec<TrialError>>> {
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            trial_errors(
                cfg,
                channels,
                assignments,
                music,
                noise_re,
                derive_seed(spec.seed, scheme_idx, snr_idx, t),
            )
        })
        .collect()
}

/// Single-UE MSE sweep with both range and velocity rows; the fig5 and fig6
/// velocity experiments are its two halves.
pub fn single_ue_sweep(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = spec.scenario.resolve()?;
    let mut cfg = sc.system.clone();
    cfg.n_ues = 1;
    let channel = sc.channels[0].clone();
    let power = path_power(&channel, &cfg);
    let mut table = ResultTable::new(spec.kind);
    for (si, (name, a)) in single_ue_schemes(&sc, &spec.scenario)?.into_iter().enumerate() {
        for (gi, &snr) in spec.snr_grid_db.iter().enumerate() {
            let noise = re_noise(std::slice::from_ref(&channel), &cfg, snr);
            let trials = run_trials(spec, &cfg, std::slice::from_ref(&channel), std::slice::from_ref(&a), &sc.music, noise, si, gi)?;
            let er: Vec<f64> = trials.iter().map(|t| t[0].0).collect();
            let ev: Vec<f64> = trials.iter().map(|t| t[0].1).collect();
            let crb = crb_pair(&cfg, &a, &channel.paths[0], power, noise)?;
            let (m, ci) = mean_ci(&er);
            table.push(&name, Some(snr), "mse_range", m, Some(ci));
            table.push(&name, Some(snr), "crb_range", crb.range, None);
            table.push(&name, Some(snr), "crb_range_oracle", crb.range_oracle, None);
            let (m, ci) = mean_ci(&ev);
            table.push(&name, Some(snr), "mse_velocity", m, Some(ci));
            table.push(&name, Some(snr), "crb_velocity", crb.velocity, None);
            table.push(&name, Some(snr), "crb_velocity_oracle", crb.velocity_oracle, None);
        }
    }
    Ok(table)
}

/// Max over UEs of the closed-form and oracle CRBs, plus the partition
/// lower bound evaluated at the certified variance bounds.
fn max_crb_rows(
    table: &mut ResultTable,
    name: &str,
    snr: f64,
    cfg: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    noise: f64,
) -> Result<()> {
    let mut worst = [0.0f64; 4];
    for (ch, a) in channels.iter().zip(assignments) {
        let c = crb_pair(cfg, a, &ch.paths[0], path_power(ch, cfg), noise)?;
        for (w, x) in worst.iter_mut().zip([c.range, c.velocity, c.range_oracle, c.velocity_oracle]) {
            *w = w.max(x);
        }
    }
    table.push(name, Some(snr), "max_crb_range", worst[0], None);
    table.push(name, Some(snr), "max_crb_velocity", worst[1], None);
    table.push(name, Some(snr), "max_crb_range_oracle", worst[2], None);
    table.push(name, Some(snr), "max_crb_velocity_oracle", worst[3], None);
    Ok(())
}

/// CRB with each UE's variances replaced by the certified partition bounds,
/// maximized over UEs; no partition can beat it.
fn crb_low_rows(
    table: &mut ResultTable,
    snr: f64,
    cfg: &SystemConfig,
    channels: &[UeChannel],
    assignments: &[ResourceAssignment],
    noise: f64,
) -> Result<()> {
    let subs = PartitionInstance::new(cfg.n_subcarriers, assignments.iter().map(|a| a.n_subcarriers()).collect())?;
    let syms = PartitionInstance::new(cfg.n_symbols, assignments.iter().map(|a| a.n_symbols()).collect())?;
    let (zeta, psi) = (variance_bound(&subs)?.certified, variance_bound(&syms)?.certified);
    let mut worst = [0.0f64; 2];
    for (ch, a) in channels.iter().zip(assignments) {
        let inputs = CrbInputs {
            beta_power: path_power(ch, cfg) * cfg.n_rx_antennas as f64,
            noise_power: noise,
            n_k: a.n_subcarriers(),
            g_k: a.n_symbols(),
            subcarrier_spacing: cfg.subcarrier_spacing,
            carrier_freq: cfg.carrier_freq,
            symbol_duration: cfg.symbol_duration,
            zeta_variance: zeta,
            psi_variance: psi,
        };
        worst[0] = worst[0].max(crb_range(&inputs)?);
        worst[1] = worst[1].max(crb_velocity(&inputs)?);
    }
    table.push("bound", Some(snr), "max_crb_range", worst[0], None);
    table.push("bound", Some(snr), "max_crb_velocity", worst[1], None);
    Ok(())
}

fn run_maxmin(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = spec.scenario.resolve()?;
    let cfg = &sc.system;
    let mut table = ResultTable::new(spec.kind);
    let schemes = multi_ue_schemes(&sc, &spec.scenario, false)?;
    for &snr in &spec.snr_grid_db {
        let noise = re_noise(&sc.channels, cfg, snr);
        crb_low_rows(&mut table, snr, cfg, &sc.channels, &schemes[0].1, noise)?;
    }
    for (si, (name, assigns)) in schemes.iter().enumerate() {
        for (gi, &snr) in spec.snr_grid_db.iter().enumerate() {
            let noise = re_noise(&sc.channels, cfg, snr);
            let trials = run_trials(spec, cfg, &sc.channels, assigns, &sc.music, noise, si, gi)?;
            let mut max_r = (0.0f64, 0.0);
            let mut max_v = (0.0f64, 0.0);
            for k in 0..assigns.len() {
                let (mr, cr) = mean_ci(&trials.iter().map(|t| t[k].0).collect::<Vec<_>>());
                let (mv, cv) = mean_ci(&trials.iter().map(|t| t[k].1).collect::<Vec<_>>());
                table.push(name, Some(snr), &format!("mse_range@ue{}", k + 1), mr, Some(cr));
                table.push(name, Some(snr), &format!("mse_velocity@ue{}", k + 1), mv, Some(cv));
                if mr > max_r.0 {
                    max_r = (mr, cr);
                }
                if mv > max_v.0 {
                    max_v = (mv, cv);
                }
            }
            table.push(name, Some(snr), "max_mse_range", max_r.0, Some(max_r.1));
            table.push(name, Some(snr), "max_mse_velocity", max_v.0, Some(max_v.1));
            max_crb_rows(&mut table, name, snr, cfg, &sc.channels, assigns, noise)?;
        }
    }
    Ok(table)
}

fn run_peaks(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = spec.scenario.resolve()?;
    let cfg = &sc.system;
    let mut table = ResultTable::new(spec.kind);
    for (si, (name, assigns)) in multi_ue_schemes(&sc, &spec.scenario, false)?.iter().enumerate() {
        for (gi, &snr) in spec.snr_grid_db.iter().enumerate() {
            let noise = re_noise(&sc.channels, cfg, snr);
            let trials = run_trials(spec, cfg, &sc.channels, assigns, &sc.music, noise, si, gi)?;
            for (k, ch) in sc.channels.iter().enumerate() {
                let truth = &ch.paths[0];
                let (r, cr) = mean_ci(&trials.iter().map(|t| t[k].2).collect::<Vec<_>>());
                let (v, cv) = mean_ci(&trials.iter().map(|t| t[k].3).collect::<Vec<_>>());
                table.push(name, Some(snr), &format!("range_estimate@ue{}", k + 1), r, Some(cr));
                table.push(name, Some(snr), &format!("range_truth@ue{}", k + 1), truth.range(), None);
                table.push(name, Some(snr), &format!("velocity_estimate@ue{}", k + 1), v, Some(cv));
                table.push(name, Some(snr), &format!("velocity_truth@ue{}", k + 1), truth.radial_velocity, None);
            }
        }
    }
    Ok(table)
}

fn run_rates(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = spec.scenario.resolve()?;
    let cfg = &sc.system;
    let mut table = ResultTable::new(spec.kind);
    for (si, (name, assigns)) in multi_ue_schemes(&sc, &spec.scenario, true)?.iter().enumerate() {
        let data = DataGrid::qpsk(assigns, cfg.n_symbols, derive_seed(spec.seed, si, 0, 0));
        for (gi, &snr) in spec.snr_grid_db.iter().enumerate() {
            let noise = re_noise(&sc.channels, cfg, snr);
            let options = RateOptions {
                noise_power: noise,
                draws: spec.trials.max(100),
                seed: derive_seed(spec.seed, si, gi, 1),
            };
            let report = achievable_rates(&sc.channels, assigns, &data, cfg, &options)?;
            table.push(name, Some(snr), "sum_rate", report.sum_rate(), None);
            table.push(name, Some(snr), "sum_rate_without_ici", report.approx_sum_rate(), None);
            for (k, r) in report.mean_rate_per_ue().iter().enumerate() {
                table.push(name, Some(snr), &format!("mean_rate@ue{}", k + 1), *r, None);
            }
            max_crb_rows(&mut table, name, snr, cfg, &sc.channels, assigns, noise)?;
        }
    }
    Ok(table)
}

/// Velocities swept by the ICI experiment, m/s.
pub const ICI_VELOCITIES: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

fn run_ici(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = spec.scenario.resolve()?;
    let mut file = spec.scenario.clone();
    if file.system.n_subcarriers.is_none() {
        file.system.n_subcarriers = Some(1024);
    }
    file.ues.truncate(1);
    let mut cfg = file.system_config()?;
    cfg.n_ues = 1;
    let n = cfg.n_subcarriers;
    let base = sc.channels[0].paths[0];
    let full = ResourceAssignment::new(1, (1..=n).collect(), vec![1], n, cfg.n_symbols)?;
    let mut table = ResultTable::new(spec.kind);
    for (vi, &v) in ICI_VELOCITIES.iter().enumerate() {
        let path = ChannelPath::new(base.gain, base.delay, v, base.aoa, base.aod)?;
        let q = ici_matrix(&path, &cfg);
        let scheme = format!("v={v}");
        table.push(&scheme, None, "max_off_diagonal", q.max_off_diagonal(), None);
        table.push(&scheme, None, "mean_off_diagonal", q.mean_off_diagonal(), None);
        table.push(
            &scheme,
            None,
            "phase_diagonal_deviation",
            q.deviation_from_phase_diagonal(cfg.subcarrier_spacing),
            None,
        );
        // scale the gain so |beta| = 1 and ICI power is relative to the signal
        let ch = UeChannel::with_uniform_beamformer(vec![path], cfg.n_tx_antennas)?;
        let unit = ChannelPath {
            gain: num_complex::Complex64::new(1.0 / ch.transmit_gain(&path, &cfg).norm(), 0.0),
            ..path
        };
        let ch = UeChannel::with_uniform_beamformer(vec![unit], cfg.n_tx_antennas)?;
        let chans = std::slice::from_ref(&ch);
        let assigns = std::slice::from_ref(&full);
        for z in [n / 2, n] {
            let analytic = ici_power_analytic(chans, assigns, &cfg, z)?;
            let mc = ici_power(chans, assigns, &cfg, z, spec.trials.max(100), derive_seed(spec.seed, vi, 0, z))?;
            table.push(&scheme, None, &format!("ici_power@n={z}"), analytic, None);
            table.push(&scheme, None, &format!("ici_power_mc@n={z}"), mc, None);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: ExperimentKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(kind);
        s.trials = 3;
        s.snr_grid_db = vec![10.0, 20.0];
        s
    }

    #[test]
    fn names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!(matches!("fig9".parse::<ExperimentKind>(), Err(IsacError::UnknownExperiment(_))));
    }

    #[test]
    fn default_spec_validates_clean() {
        for k in ExperimentKind::ALL {
            assert!(validate(&ExperimentSpec::new(k)).is_empty(), "{k}");
        }
    }

    #[test]
    fn overlap_and_grid_problems_are_reported() {
        let mut s = ExperimentSpec::new(ExperimentKind::Fig6Maxmin);
        s.scenario.ues[0].subcarriers = Some(vec![1, 2, 3]);
        s.scenario.ues[1].subcarriers = Some(vec![3, 4, 5]);
        s.scenario.ues[2].paths[0].range = 500.0;
        s.snr_grid_db = vec![10.0, 0.0];
        s.trials = 0;
        let d = validate(&s);
        assert!(d.iter().any(|m| m.contains("share subcarrier 3")));
        assert!(d.iter().any(|m| m.contains("outside the MUSIC grid")));
        assert!(d.iter().any(|m| m.contains("ascending")));
        assert!(d.iter().any(|m| m.contains("trials")));
        assert!(run(&s).is_err());
    }

    #[test]
    fn mean_ci_matches_hand_values() {
        let (m, ci) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // s^2 = 5/3
        assert!((ci - 1.96 * (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_ci(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn derived_seeds_differ_by_coordinate() {
        let a = derive_seed(1, 0, 0, 0);
        assert_ne!(a, derive_seed(1, 0, 0, 1));
        assert_ne!(a, derive_seed(1, 0, 1, 0));
        assert_ne!(a, derive_seed(1, 1, 0, 0));
        assert_ne!(a, derive_seed(2, 0, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0, 0));
    }

    #[test]
    fn crb_rows_agree_with_oracle() {
        let t = single_ue_sweep(&quick(ExperimentKind::Fig5RangeMse)).unwrap();
        for r in t.rows.iter().filter(|r| r.metric.ends_with("_oracle")) {
            let base = r.metric.trim_end_matches("_oracle");
            let c = t.value(&r.scheme, r.snr_db, base).unwrap();
            assert!(((r.value - c.value) / c.value).abs() <= CRB_AGREEMENT);
        }
        assert_eq!(t.rows.len(), 3 * 2 * 6);
    }

    #[test]
    fn csv_is_stable_and_has_header() {
        let spec = quick(ExperimentKind::Fig7RateVsCrb);
        let a = run(&spec).unwrap().to_csv().unwrap();
        let b = run(&spec).unwrap().to_csv().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("scheme,snr_db,metric,value,ci_halfwidth\n"));
    }

    #[test]
    fn ici_table_has_exact_zero_at_rest() {
        let mut spec = quick(ExperimentKind::Fig3Ici);
        spec.scenario.system.n_subcarriers = Some(64);
        spec.scenario.allocation.scheme = "interleaved".into();
        spec.scenario.allocation.subcarriers_per_ue = 8;
        let t = run(&spec).unwrap();
        assert_eq!(t.value("v=0", None, "max_off_diagonal").unwrap().value, 0.0);
        assert_eq!(t.value("v=0", None, "phase_diagonal_deviation").unwrap().value, 0.0);
        assert!(t.value("v=30", None, "max_off_diagonal").unwrap().value > 0.0);
    }

    #[test]
    fn outputs_written_with_manifest() {
        let dir = std::env::temp_dir().join(format!("isac-exp-{}", std::process::id()));
        let mut spec = quick(ExperimentKind::Fig3Ici);
        spec.scenario.system.n_subcarriers = Some(32);
        spec.scenario.allocation.scheme = "interleaved".into();
        spec.scenario.allocation.subcarriers_per_ue = 8;
        let m = run_to_dir(&spec, &dir).unwrap();
        assert_eq!(m.config_sha256.len(), 64);
        assert_eq!(m.config_sha256, spec.config_hash().unwrap());
        assert!(dir.join("fig3_ici.csv").exists());
        assert!(dir.join("fig3_ici.legend").exists());
        let text = std::fs::read_to_string(dir.join("fig3_ici.manifest.toml")).unwrap();
        assert!(text.contains(&m.config_sha256));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
