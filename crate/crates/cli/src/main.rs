//! `isilearn`: train, evaluate and inspect learned pulse-shaper/receiver
//! filter pairs, and regenerate the study data sets.

mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use isilearn_core::eval::KP4_SER;
use isilearn_core::experiment::{self, ExperimentConfig, Figure, FilterSet, Scenario, TrainedRun};
use isilearn_core::report;
use isilearn_core::Error as CoreError;

use output::{blob_hash, Outputs};

#[derive(Debug, Parser)]
#[command(
    name = "isilearn",
    version,
    about = "End-to-end learned pulse shaping for band-limited PAM links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (capped by ISILEARN_THREADS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Multiplies every symbol count.
    #[arg(long, global = true, default_value_t = 1.0)]
    scale: f64,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn filters for every configured mode, length and seed.
    Train,
    /// Run the configured sweep on frozen filters.
    Evaluate {
        /// Files named `taps_<mode>_<n>[_seed<k>].csv`.
        #[arg(long = "taps", required = true, num_args = 1..)]
        taps: Vec<PathBuf>,
    },
    /// Train, evaluate and diagnose with a built-in study configuration.
    Reproduce {
        /// fig2, fig3, fig4 or fig5.
        figure: String,
    },
    /// Folded spectrum and eye diagram of frozen filters.
    Diagnose {
        #[arg(long = "taps", required = true, num_args = 1..)]
        taps: Vec<PathBuf>,
    },
}

const DEFAULT_OUT: &str = "isilearn-out";
const SER_TARGETS: [f64; 3] = [1e-3, KP4_SER, 1e-4];

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(CoreError::Configuration(_) | CoreError::InvalidArgument(_)) => 2,
        Some(e) if e.is_numerical() => 3,
        Some(CoreError::ScreeningFailed(_)) => 3,
        _ => 1,
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    CoreError::Configuration(msg.into()).into()
}

/// Prefixes configuration messages with the offending file.
fn in_file(path: &std::path::Path, e: CoreError) -> anyhow::Error {
    match e {
        CoreError::Configuration(m) => config_error(format!("{}: {m}", path.display())),
        other => other.into(),
    }
}

fn thread_count(jobs: Option<usize>) -> Result<usize> {
    if jobs == Some(0) {
        return Err(config_error("--jobs must be >= 1"));
    }
    let mut n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(cap) = std::env::var("ISILEARN_THREADS") {
        let cap: usize = cap
            .trim()
            .parse()
            .ok()
            .filter(|c| *c > 0)
            .ok_or_else(|| config_error(format!("ISILEARN_THREADS must be a positive integer, got {cap:?}")))?;
        n = n.min(cap);
    }
    Ok(n)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match (&cli.command, &cli.config) {
        (Command::Reproduce { .. }, Some(_)) => {
            return Err(config_error("reproduce uses built-in configurations; drop --config"));
        }
        (Command::Reproduce { figure }, None) => figure.parse::<Figure>()?.config(),
        (_, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_toml_str(&text).map_err(|e| in_file(path, e))?
        }
        (_, None) => ExperimentConfig::default(),
    };
    let cfg = base.scaled(cli.scale)?.with_seed_offset(cli.seed_offset);
    cfg.validate()?;
    Ok(cfg)
}

/// A taps file read up front, with its hash for the manifest.
struct TapsInput {
    path: PathBuf,
    hash: String,
    filters: FilterSet,
}

fn load_taps(cfg: &ExperimentConfig, paths: &[PathBuf]) -> Result<Vec<TapsInput>> {
    let mut inputs = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read taps file {}: {e}", path.display())))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (mode, n, seed) = report::parse_taps_file_name(name)?;
        let filters =
            report::filter_set_from_csv(&text, mode, seed.unwrap_or(cfg.seeds[0])).map_err(|e| in_file(path, e))?;
        if filters.num_taps != n || !cfg.taps.contains(&n) {
            return Err(config_error(format!(
                "{}: tap-length mismatch ({} taps in file, name says {n}, configured lengths {:?})",
                path.display(),
                filters.num_taps,
                cfg.taps
            )));
        }
        inputs.push(TapsInput {
            path: path.clone(),
            hash: blob_hash(text.as_bytes()),
            filters,
        });
    }
    Ok(inputs)
}

fn tag(cfg: &ExperimentConfig, f: &FilterSet) -> String {
    report::filter_tag(f.mode, f.num_taps, f.seed, cfg.seeds[0])
}

fn add_training(out: &mut Outputs, cfg: &ExperimentConfig, runs: &[TrainedRun], dir: &str) {
    for run in runs {
        let f = run.filters();
        let t = tag(cfg, &f);
        out.add(
            format!("{dir}taps_{t}.csv"),
            report::taps_csv(&f.pulse_shaper, &f.rx_filter),
        );
        out.add(format!("{dir}loss_{t}.csv"), report::loss_csv(run));
    }
    out.add(format!("{dir}screening.csv"), report::screening_csv(runs));
}

fn add_snr_sweep(out: &mut Outputs, cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<()> {
    let rows = experiment::sweep_snr_b2b(cfg, filters)?;
    let summary = experiment::summarize(rows.iter().map(|r| (r.snr_db, r.mode, r.num_taps, r.ser)));
    out.add("ser_vs_snr.csv", report::ser_vs_snr_csv(&rows));
    out.add("ser_vs_snr_summary.csv", report::summary_csv("snr_db", &summary));
    out.add(
        "snr_thresholds.csv",
        report::threshold_csv(cfg.physical.pam_order, &summary, &SER_TARGETS),
    );
    Ok(())
}

fn add_power_rows(out: &mut Outputs, rows: &[experiment::PowerRow]) {
    let summary = experiment::summarize(rows.iter().map(|r| (r.p_in_dbm, r.mode, r.num_taps, r.ser)));
    out.add("ser_vs_power.csv", report::ser_vs_power_csv(rows));
    out.add("ser_vs_power_summary.csv", report::summary_csv("p_in_dbm", &summary));
}

fn add_spectra(out: &mut Outputs, cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<()> {
    let spectra = experiment::folded_spectra(cfg, filters)?;
    out.add("folded_spectrum.csv", report::folded_spectrum_csv(&spectra));
    out.add("ripple.csv", report::ripple_csv(&spectra));
    Ok(())
}

fn add_eyes(out: &mut Outputs, cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<()> {
    let eyes = experiment::eyes(cfg, filters)?;
    for e in &eyes {
        let t = report::filter_tag(e.mode, e.num_taps, e.seed, cfg.seeds[0]);
        let t = if cfg.taps.len() == 1 && e.seed == cfg.seeds[0] {
            e.mode.to_string()
        } else {
            t
        };
        out.add(format!("eye_{t}.csv"), report::eye_csv(&e.histogram));
        out.add(format!("eye_edges_{t}.csv"), report::eye_edges_csv(&e.histogram));
    }
    out.add("eye_opening.csv", report::eye_opening_csv(&eyes));
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<Vec<TrainedRun>> {
    let link = isilearn_core::chain::Link::new(cfg.training_link_config())?;
    eprintln!(
        "training {} filter sets x {} learning rates",
        cfg.jobs().len(),
        cfg.training.lr0_grid.len()
    );
    Ok(experiment::train_all(cfg, &link)?)
}

fn run_command(cli: &Cli, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<TapsInput>> {
    let mut inputs = Vec::new();
    match &cli.command {
        Command::Train => {
            let runs = train(cfg)?;
            add_training(out, cfg, &runs, "");
        }
        Command::Evaluate { taps } => {
            inputs = load_taps(cfg, taps)?;
            let filters: Vec<FilterSet> = inputs.iter().map(|t| t.filters.clone()).collect();
            match cfg.scenario {
                Scenario::BackToBack => add_snr_sweep(out, cfg, &filters)?,
                Scenario::Fiber => add_power_rows(out, &experiment::evaluate_power_frozen(cfg, &filters)?),
            }
        }
        Command::Diagnose { taps } => {
            inputs = load_taps(cfg, taps)?;
            let filters: Vec<FilterSet> = inputs.iter().map(|t| t.filters.clone()).collect();
            add_spectra(out, cfg, &filters)?;
            add_eyes(out, cfg, &filters)?;
        }
        Command::Reproduce { figure } => match figure.parse::<Figure>()? {
            Figure::Fig2 => {
                let runs = train(cfg)?;
                add_training(out, cfg, &runs, "");
                let filters: Vec<FilterSet> = runs.iter().map(TrainedRun::filters).collect();
                add_snr_sweep(out, cfg, &filters)?;
            }
            Figure::Fig3 => {
                let runs = train(cfg)?;
                add_training(out, cfg, &runs, "");
                let filters: Vec<FilterSet> = runs.iter().map(TrainedRun::filters).collect();
                add_spectra(out, cfg, &filters)?;
            }
            Figure::Fig4 => {
                let runs = train(cfg)?;
                add_training(out, cfg, &runs, "");
                let filters: Vec<FilterSet> = runs.iter().map(TrainedRun::filters).collect();
                add_eyes(out, cfg, &filters)?;
            }
            Figure::Fig5 => {
                eprintln!(
                    "training {} filter sets at {} launch powers",
                    cfg.jobs().len(),
                    cfg.evaluation.p_in_grid_dbm.len()
                );
                let (rows, points) = experiment::sweep_power_fiber(cfg)?;
                for p in &points {
                    add_training(out, cfg, &p.runs, &format!("p{:+.1}dbm/", p.p_in_dbm));
                }
                add_power_rows(out, &rows);
            }
        },
    }
    Ok(inputs)
}

fn command_line(cli: &Cli, inputs: &[TapsInput]) -> String {
    let mut words = vec!["isilearn".to_string()];
    match &cli.command {
        Command::Train => words.push("train --config config.toml".into()),
        Command::Evaluate { .. } => words.push("evaluate --config config.toml".into()),
        Command::Diagnose { .. } => words.push("diagnose --config config.toml".into()),
        Command::Reproduce { figure } => {
            words.push(format!("reproduce {figure}"));
            if cli.scale != 1.0 {
                words.push(format!("--scale {}", cli.scale));
            }
            if cli.seed_offset != 0 {
                words.push(format!("--seed-offset {}", cli.seed_offset));
            }
        }
    }
    if !inputs.is_empty() {
        words.push("--taps".into());
        words.extend(inputs.iter().map(|t| t.path.display().to_string()));
    }
    words.join(" ")
}

fn manifest(cli: &Cli, cfg: &ExperimentConfig, inputs: &[TapsInput], out: &Outputs) -> Result<String> {
    let (files, content_hash) = out.hashes();
    let mut m = toml::Table::new();
    m.insert("tool".into(), format!("isilearn {}", env!("CARGO_PKG_VERSION")).into());
    let command = match &cli.command {
        Command::Train => "train".to_string(),
        Command::Evaluate { .. } => "evaluate".into(),
        Command::Diagnose { .. } => "diagnose".into(),
        Command::Reproduce { figure } => format!("reproduce {figure}"),
    };
    m.insert("command".into(), command.into());
    m.insert("regenerate".into(), command_line(cli, inputs).into());
    m.insert("scale".into(), cli.scale.into());
    m.insert("seed_offset".into(), i64::try_from(cli.seed_offset)?.into());
    m.insert("content_hash".into(), content_hash.into());
    let entry = |path: String, hash: String| {
        let mut t = toml::Table::new();
        t.insert("path".into(), path.into());
        t.insert("sha256".into(), hash.into());
        toml::Value::Table(t)
    };
    if !inputs.is_empty() {
        let list = inputs
            .iter()
            .map(|t| entry(t.path.display().to_string(), t.hash.clone()))
            .collect();
        m.insert("inputs".into(), toml::Value::Array(list));
    }
    m.insert(
        "files".into(),
        toml::Value::Array(files.into_iter().map(|(n, h)| entry(n, h)).collect()),
    );
    m.insert("config".into(), toml::Value::Table(toml::Table::try_from(cfg)?));
    Ok(toml::to_string(&m)?)
}

fn run(cli: &Cli) -> Result<PathBuf> {
    if !(cli.scale > 0.0 && cli.scale.is_finite()) {
        return Err(config_error(format!("--scale must be positive, got {}", cli.scale)));
    }
    let threads = thread_count(cli.jobs)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))?;

    let mut cfg = load_config(cli)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.output_dir = None;

    let mut out = Outputs::default();
    let inputs = run_command(cli, &cfg, &mut out)?;
    out.add("config.toml", cfg.to_toml_string());
    let manifest = manifest(cli, &cfg, &inputs, &out)?;
    out.add("manifest.toml", manifest);
    out.write_to(&dir)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    eprintln!("wrote {} files to {}", out.len(), dir.display());
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
