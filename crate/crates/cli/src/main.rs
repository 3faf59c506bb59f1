use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use isac_core::compensation::extract_csi_all;
use isac_core::config::{Scenario, ScenarioFile};
use isac_core::dump::Dump;
use isac_core::experiment::{crb_pair, run, run_to_dir, validate, ExperimentKind, ExperimentSpec};
use isac_core::model::{index_variance, DataGrid};
use isac_core::music::{estimate, Lattice};
use isac_core::partition::{exact_partition, interleaved_partition, variance_bound, PartitionInstance};
use isac_core::synthesis::{path_beta, synthesize_frames, time_noise_for_re_noise};
use isac_core::{IsacError, Result};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "ISAC_LAB_THREADS";

#[derive(Parser)]
#[command(name = "isac-lab", version, about = "OFDMA sensing resource-distribution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write CSV, legend and manifest.
    Run {
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated SNR grid in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check an experiment spec and print diagnostics.
    Validate {
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Closed-form range and velocity CRBs of every configured UE.
    Crb {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        snr_db: f64,
        /// Also print the Fisher-information oracle.
        #[arg(long)]
        oracle: bool,
    },
    /// Max-min index-variance partition of a pool.
    Partition {
        #[arg(long)]
        pool: usize,
        #[arg(long)]
        ues: usize,
        /// Per-UE counts; defaults to an equal split of the pool.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
    },
    /// Sum rate and max CRB for each multi-UE scheme.
    Rates {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Data draws for the interference expectation.
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
    /// Synthesize one frame set and dump frames plus per-UE CSI.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2-D MUSIC on dumped CSI blocks, one trial per file.
    Estimate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1-based UE whose assignment and truth apply.
        #[arg(long, default_value_t = 1)]
        ue: usize,
        #[arg(long, required = true, num_args = 1..)]
        csi: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Interleaved,
    Bound,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| IsacError::Parse(format!("{THREADS_ENV}={value} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| IsacError::InvalidConfig(e.to_string()))
}

fn load(config: Option<&Path>) -> Result<ScenarioFile> {
    config.map_or_else(|| Ok(ScenarioFile::default()), ScenarioFile::load)
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Run {
            experiment,
            trials,
            seed,
            snr,
            out,
            config,
        } => {
            let spec = build_spec(config.as_deref(), experiment.as_deref(), trials, seed, snr)?;
            let m = run_to_dir(&spec, &out)?;
            Ok(format!(
                "{} rows -> {}\nseed {}\nconfig_sha256 {}\n",
                m.rows,
                out.join(&m.csv).display(),
                m.seed,
                m.config_sha256
            ))
        }
        Command::Validate { experiment, config } => {
            let spec = build_spec(config.as_deref(), experiment.as_deref(), None, None, None)?;
            let problems = validate(&spec);
            if problems.is_empty() {
                Ok("ok\n".into())
            } else {
                Err(IsacError::InvalidConfig(problems.join("\n")))
            }
        }
        Command::Crb { config, snr_db, oracle } => crb(&load(config.as_deref())?.resolve()?, snr_db, oracle),
        Command::Partition {
            pool,
            ues,
            counts,
            method,
        } => partition(pool, ues, counts, method),
        Command::Rates {
            config,
            snr,
            seed,
            draws,
        } => {
            let spec = build_spec(config.as_deref(), Some("fig7_rate_vs_crb"), Some(draws), Some(seed), snr)?;
            rates(&spec)
        }
        Command::Synth {
            config,
            snr_db,
            seed,
            out,
        } => synth(&load(config.as_deref())?.resolve()?, snr_db, seed, &out),
        Command::Estimate { config, ue, csi } => estimate_files(&load(config.as_deref())?.resolve()?, ue, &csi),
    }
}

fn build_spec(
    config: Option<&Path>,
    experiment: Option<&str>,
    trials: Option<usize>,
    seed: Option<u64>,
    snr: Option<Vec<f64>>,
) -> Result<ExperimentSpec> {
    let kind = experiment.map(str::parse::<ExperimentKind>).transpose()?;
    let mut spec = ExperimentSpec::from_scenario(load(config)?, kind)?;
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(g) = snr {
        spec.snr_grid_db = g;
    }
    Ok(spec)
}

/// Per-RE noise for `snr_db` relative to the mean first-path power.
fn re_noise(sc: &Scenario, snr_db: f64) -> f64 {
    let p: f64 = sc
        .channels
        .iter()
        .map(|c| path_beta(&c.paths[0], c, &sc.system, 0).norm_sqr())
        .sum::<f64>()
        / sc.channels.len() as f64;
    p / 10f64.powf(snr_db / 10.0)
}

fn crb(sc: &Scenario, snr_db: f64, oracle: bool) -> Result<String> {
    let noise = re_noise(sc, snr_db);
    let mut out = String::from("ue,n_k,g_k,subcarrier_variance,symbol_variance,crb_range_m2,crb_velocity_m2s2");
    out.push_str(if oracle { ",oracle_range_m2,oracle_velocity_m2s2\n" } else { "\n" });
    for (ch, a) in sc.channels.iter().zip(&sc.assignments) {
        let power = path_beta(&ch.paths[0], ch, &sc.system, 0).norm_sqr();
        let c = crb_pair(&sc.system, a, &ch.paths[0], power, noise)?;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            a.ue_index,
            a.n_subcarriers(),
            a.n_symbols(),
            index_variance(&a.subcarriers)?,
            index_variance(&a.symbols)?,
            c.range,
            c.velocity
        );
        if oracle {
            let _ = write!(out, ",{},{}", c.range_oracle, c.velocity_oracle);
        }
        out.push('\n');
    }
    Ok(out)
}

fn partition(pool: usize, ues: usize, counts: Option<Vec<usize>>, method: Method) -> Result<String> {
    let counts = counts.unwrap_or_else(|| vec![pool / ues.max(1); ues]);
    if counts.len() != ues {
        return Err(IsacError::InvalidConfig(format!("{} counts given for {ues} UEs", counts.len())));
    }
    let instance = PartitionInstance::new(pool, counts)?;
    let bound = variance_bound(&instance)?;
    let mut out = format!("# pool {pool}, ues {ues}, counts {:?}\n", instance.counts);
    let _ = writeln!(out, "# pool_variance {}", bound.pool_variance);
    let _ = writeln!(out, "# certified_bound {}", bound.certified);
    for (k, b) in bound.per_ue.iter().enumerate() {
        let _ = writeln!(out, "# per_ue_bound ue{} {b}", k + 1);
    }
    let solution = match method {
        Method::Bound => return Ok(out),
        Method::Exact => exact_partition(&instance)?,
        Method::Interleaved => interleaved_partition(&instance)?,
    };
    let _ = writeln!(out, "# min_variance {}", solution.min_variance);
    let _ = writeln!(out, "# gap {}", solution.gap);
    out.push_str("ue,count,variance,indices\n");
    for (k, s) in solution.subsets.iter().enumerate() {
        let list: Vec<String> = s.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{},{},{},\"{}\"", k + 1, s.len(), index_variance(s)?, list.join(" "));
    }
    Ok(out)
}

fn rates(spec: &ExperimentSpec) -> Result<String> {
    let table = run(spec)?;
    let mut out = String::from("scheme,snr_db,sum_rate,max_crb_range,max_crb_velocity\n");
    for r in table.rows.iter().filter(|r| r.metric == "sum_rate") {
        let get = |m: &str| table.value(&r.scheme, r.snr_db, m).map_or(f64::NAN, |x| x.value);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme,
            r.snr_db.unwrap_or(f64::NAN),
            r.value,
            get("max_crb_range"),
            get("max_crb_velocity")
        );
    }
    Ok(out)
}

fn synth(sc: &Scenario, snr_db: f64, seed: u64, out: &Path) -> Result<String> {
    let mut cfg = sc.system.clone();
    cfg.noise_power = time_noise_for_re_noise(re_noise(sc, snr_db), cfg.n_subcarriers);
    let data = DataGrid::qpsk(&sc.assignments, cfg.n_symbols, seed);
    let frames = synthesize_frames(&cfg, &sc.channels, &sc.assignments, &data, seed.wrapping_add(1))?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let path = out.join("frames.bin");
    Dump::frames(&frames.frames)?.write_to(std::fs::File::create(&path)?)?;
    written.push(path);
    for k in 0..sc.assignments.len() {
        let path = out.join(format!("csi_ue{}.bin", k + 1));
        Dump::csi(&extract_csi_all(&frames, k)?)?.write_to(std::fs::File::create(&path)?)?;
        written.push(path);
    }
    Ok(written.iter().map(|p| format!("{}\n", p.display())).collect())
}

fn estimate_files(sc: &Scenario, ue: usize, files: &[PathBuf]) -> Result<String> {
    let pos = ue
        .checked_sub(1)
        .filter(|&p| p < sc.assignments.len())
        .ok_or_else(|| IsacError::InvalidConfig(format!("no UE {ue} in the scenario")))?;
    let lattice = Lattice::new(&sc.assignments[pos], &sc.system);
    let truth = sc.channels[pos].paths[0];
    let mut out = String::from("trial,range_est,velocity_est,range_truth,velocity_truth,range_error,velocity_error\n");
    for (trial, file) in files.iter().enumerate() {
        let blocks = Dump::read_from(std::io::BufReader::new(std::fs::File::open(file)?))?.csi_blocks(ue)?;
        let est = estimate(&blocks, &lattice, &sc.music)?;
        let e = est
            .pairs
            .first()
            .ok_or_else(|| IsacError::Domain(format!("{}: no spectrum peak", file.display())))?;
        let _ = writeln!(
            out,
            "{trial},{},{},{},{},{},{}",
            e.range,
            e.velocity,
            truth.range(),
            truth.radial_velocity,
            e.range - truth.range(),
            e.velocity - truth.radial_velocity
        );
    }
    Ok(out)
}
