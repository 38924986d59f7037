//! `msls` — reproducible runs of the single-microphone listening simulator.
//!
//! Every command is driven by one JSON config (all fields defaulted) plus a
//! master seed; flags override individual fields. The effective config is
//! echoed into the output directory so any run can be reproduced from it.
//! Exit codes: 0 success, 1 runtime failure, 2 config error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use msls_core::dictionary::{load_dictionary, save_dictionary, train_dictionary};
use msls_core::enclosure::{
    coherence_matrix, generate_enclosure, max_off_diagonal, EnclosureConfig, EnclosureModel,
};
use msls_core::harness::{
    render_training_classes, run_campaign, run_tracking, run_trial, AudioLibrary, CampaignParams,
    LibraryKind, MixMode, Scenario, Session, TrackingTimeline,
};
use msls_core::recovery::{OmpOptions, VspcaModel};
use msls_core::spectra::StftConfig;
use msls_core::wav::{read_wav_mono16, write_wav_mono16};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LibrarySection {
    scenario: String,
    n_audios: Option<usize>,
    /// Replace entries with user WAV files, keyed by audio id.
    wav_overrides: BTreeMap<String, PathBuf>,
}

impl Default for LibrarySection {
    fn default() -> Self {
        LibrarySection {
            scenario: "street".to_string(),
            n_audios: None,
            wav_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RecoverySection {
    variance_threshold: f64,
    tol_abs: f64,
    tol_corr: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        RecoverySection {
            variance_threshold: 0.99,
            tol_abs: 1e-10,
            tol_corr: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HarnessSection {
    mode: String,
    snr_db: Option<f64>,
    trials_per_k: usize,
    k_range: (usize, usize),
    train_duration_s: f64,
    test_duration_s: f64,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            mode: "ideal".to_string(),
            snr_db: None,
            trials_per_k: 100,
            k_range: (1, 5),
            train_duration_s: 2.0,
            test_duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    stft: StftConfig,
    enclosure: EnclosureConfig,
    library: LibrarySection,
    recovery: RecoverySection,
    harness: HarnessSection,
}

/// Config with defaults applied and flag overrides folded in. The master
/// seed also drives the enclosure, so one (config, seed) pair pins the
/// whole chain.
#[derive(Debug, Clone, Serialize)]
struct EffectiveConfig {
    seed: u64,
    output_dir: PathBuf,
    stft: StftConfig,
    enclosure: EnclosureConfig,
    library: LibrarySection,
    recovery: RecoverySection,
    harness: HarnessSection,
}

enum AppError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type AppResult<T> = Result<T, AppError>;

fn config_err<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError::Config(e.into())
}

fn runtime_err<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError::Runtime(e.into())
}

impl EffectiveConfig {
    fn resolve(cli: &Cli) -> AppResult<Self> {
        let base: RunConfig = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .map_err(config_err)?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))
                    .map_err(config_err)?
            }
            None => RunConfig::default(),
        };
        let seed = cli.seed.or(base.seed).unwrap_or(42);
        let mut enclosure = base.enclosure;
        enclosure.seed = seed;
        let mut harness = base.harness;
        if let Some(mode) = &cli.mode {
            harness.mode = mode.clone();
        }
        if let Some(snr) = cli.snr_db {
            harness.snr_db = Some(snr);
        }
        let cfg = EffectiveConfig {
            seed,
            output_dir: cli
                .out
                .clone()
                .or(base.output_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            stft: base.stft,
            enclosure,
            library: base.library,
            recovery: base.recovery,
            harness,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> AppResult<()> {
        self.stft.validate().map_err(config_err)?;
        self.enclosure.validate().map_err(config_err)?;
        LibraryKind::from_str(&self.library.scenario).map_err(config_err)?;
        MixMode::from_str(&self.harness.mode).map_err(config_err)?;
        let (k_min, k_max) = self.harness.k_range;
        if k_min < 1 || k_max < k_min {
            return Err(config_err(anyhow::anyhow!(
                "harness.k_range {:?} must satisfy 1 <= min <= max",
                self.harness.k_range
            )));
        }
        if !(self.recovery.variance_threshold > 0.0 && self.recovery.variance_threshold <= 1.0) {
            return Err(config_err(anyhow::anyhow!(
                "recovery.variance_threshold {} outside (0, 1]",
                self.recovery.variance_threshold
            )));
        }
        if self.harness.train_duration_s <= 0.0 || self.harness.test_duration_s <= 0.0 {
            return Err(config_err(anyhow::anyhow!("durations must be positive")));
        }
        Ok(())
    }

    fn mix_mode(&self) -> MixMode {
        MixMode::from_str(&self.harness.mode).expect("validated")
    }

    fn omp_options(&self) -> OmpOptions {
        OmpOptions {
            tol_abs: self.recovery.tol_abs,
            tol_corr: self.recovery.tol_corr,
        }
    }

    fn build_library(&self) -> AppResult<AudioLibrary> {
        let kind = LibraryKind::from_str(&self.library.scenario).map_err(config_err)?;
        let mut lib = AudioLibrary::builtin(kind, self.library.n_audios);
        for (id_str, path) in &self.library.wav_overrides {
            let audio_id: u32 = id_str
                .parse()
                .with_context(|| format!("wav override key {id_str:?} is not an audio id"))
                .map_err(config_err)?;
            let (samples, rate) = read_wav_mono16(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(config_err)?;
            if rate != self.stft.sample_rate {
                return Err(config_err(anyhow::anyhow!(
                    "{}: sample rate {rate} does not match configured {}",
                    path.display(),
                    self.stft.sample_rate
                )));
            }
            lib.override_with_samples(audio_id, samples, rate)
                .map_err(config_err)?;
        }
        Ok(lib)
    }

    /// Write the effective config into the output directory so the run can
    /// be reproduced from it alone.
    fn echo(&self) -> AppResult<()> {
        fs::create_dir_all(&self.output_dir).map_err(runtime_err)?;
        let path = self.output_dir.join("effective_config.json");
        let mut json = serde_json::to_string_pretty(self).map_err(runtime_err)?;
        json.push('\n');
        fs::write(&path, json).map_err(runtime_err)?;
        log::info!("effective config echoed to {}", path.display());
        Ok(())
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "msls",
    about = "Single-microphone multi-source listening simulator",
    version
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and drives all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Mixing mode: ideal | realistic.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Additive white noise level for rendering, in dB SNR.
    #[arg(long = "snr-db", global = true)]
    snr_db: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the directional enclosure model and its coherence report.
    GenEnclosure,
    /// Render per-class training signals, build the dictionary and the
    /// reduced-space projection model.
    Train {
        /// Reuse a previously generated enclosure instead of regenerating.
        #[arg(long)]
        enclosure: Option<PathBuf>,
    },
    /// Run a single scenario and report the recovered sources.
    Test {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        vspca: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        enclosure: Option<PathBuf>,
    },
    /// Run the randomized listening-test campaign over the configured
    /// sparsity range.
    Campaign {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        vspca: PathBuf,
        #[arg(long)]
        enclosure: Option<PathBuf>,
    },
    /// Recover a moving-source timeline window by window.
    Track {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        vspca: PathBuf,
        #[arg(long)]
        timeline: PathBuf,
        #[arg(long)]
        enclosure: Option<PathBuf>,
    },
    /// Coherence matrix of an enclosure's probe responses.
    Coherence {
        #[arg(long)]
        enclosure: PathBuf,
    },
    /// Write every library entry as a WAV file.
    SynthAudio {
        /// Seconds of audio per entry.
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MSLS_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> AppResult<()> {
    let cfg = EffectiveConfig::resolve(cli)?;
    match &cli.command {
        Command::GenEnclosure => cmd_gen_enclosure(&cfg),
        Command::Train { enclosure } => cmd_train(&cfg, enclosure.as_deref()),
        Command::Test {
            dict,
            vspca,
            scenario,
            enclosure,
        } => cmd_test(&cfg, dict, vspca, scenario, enclosure.as_deref()),
        Command::Campaign {
            dict,
            vspca,
            enclosure,
        } => cmd_campaign(&cfg, dict, vspca, enclosure.as_deref()),
        Command::Track {
            dict,
            vspca,
            timeline,
            enclosure,
        } => cmd_track(&cfg, dict, vspca, timeline, enclosure.as_deref()),
        Command::Coherence { enclosure } => cmd_coherence(&cfg, enclosure),
        Command::SynthAudio { duration } => cmd_synth_audio(&cfg, *duration),
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_enclosure(path: &Path) -> AppResult<EnclosureModel> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading enclosure {}", path.display()))
        .map_err(config_err)?;
    EnclosureModel::from_json(&text)
        .with_context(|| format!("parsing enclosure {}", path.display()))
        .map_err(config_err)
}

/// Load the enclosure from a file when given, otherwise regenerate it
/// deterministically from the effective config.
fn obtain_enclosure(cfg: &EffectiveConfig, path: Option<&Path>) -> AppResult<EnclosureModel> {
    match path {
        Some(p) => load_enclosure(p),
        None => {
            log::info!("regenerating enclosure from config (seed {})", cfg.seed);
            generate_enclosure(&cfg.enclosure).map_err(runtime_err)
        }
    }
}

fn load_vspca(path: &Path) -> AppResult<VspcaModel> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading projection model {}", path.display()))
        .map_err(config_err)?;
    VspcaModel::from_json(&text)
        .with_context(|| format!("parsing projection model {}", path.display()))
        .map_err(config_err)
}

fn coherence_csv(matrix: &[Vec<f64>]) -> String {
    let n = matrix.len();
    let mut out = String::from("direction");
    for j in 0..n {
        out.push_str(&format!(",d{j}"));
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        out.push_str(&format!("d{i}"));
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_gen_enclosure(cfg: &EffectiveConfig) -> AppResult<()> {
    cfg.echo()?;
    let model = generate_enclosure(&cfg.enclosure).map_err(runtime_err)?;
    let grid = cfg.stft.grid();
    let responses = model.probe_responses(&grid).map_err(runtime_err)?;
    let matrix = coherence_matrix(&responses).map_err(runtime_err)?;
    let max_c = max_off_diagonal(&matrix);

    let model_path = cfg.out_file("enclosure.json");
    fs::write(&model_path, model.to_json() + "\n").map_err(runtime_err)?;
    fs::write(cfg.out_file("coherence.csv"), coherence_csv(&matrix)).map_err(runtime_err)?;
    println!(
        "enclosure: {} sectors, max off-diagonal probe coherence {max_c:.4} -> {}",
        model.sectors.len(),
        model_path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &EffectiveConfig, enclosure_path: Option<&Path>) -> AppResult<()> {
    cfg.echo()?;
    let enclosure = obtain_enclosure(cfg, enclosure_path)?;
    let library = cfg.build_library()?;
    let classes = render_training_classes(
        &enclosure,
        &library,
        &cfg.stft,
        cfg.harness.train_duration_s,
        cfg.mix_mode(),
        cfg.seed,
    )
    .map_err(runtime_err)?;
    let dictionary = train_dictionary(&classes, &cfg.stft).map_err(runtime_err)?;
    let vspca =
        VspcaModel::fit(&dictionary, cfg.recovery.variance_threshold).map_err(runtime_err)?;

    let dict_path = cfg.out_file("dictionary.msls-dict");
    save_dictionary(&dictionary, &dict_path).map_err(runtime_err)?;
    fs::write(cfg.out_file("vspca.json"), vspca.to_json() + "\n").map_err(runtime_err)?;
    println!(
        "dictionary: P={} Q={} -> {}; projection retained {} dims",
        dictionary.p(),
        dictionary.q(),
        dict_path.display(),
        vspca.retained_dim
    );
    Ok(())
}

fn cmd_test(
    cfg: &EffectiveConfig,
    dict: &Path,
    vspca: &Path,
    scenario: &Path,
    enclosure_path: Option<&Path>,
) -> AppResult<()> {
    cfg.echo()?;
    let dictionary = load_dictionary(dict).map_err(config_err)?;
    let vspca = load_vspca(vspca)?;
    let enclosure = obtain_enclosure(cfg, enclosure_path)?;
    let library = cfg.build_library()?;
    let text = fs::read_to_string(scenario)
        .with_context(|| format!("reading scenario {}", scenario.display()))
        .map_err(config_err)?;
    let scn = Scenario::from_json(&text)
        .with_context(|| format!("parsing scenario {}", scenario.display()))
        .map_err(config_err)?;

    let mut session = Session::new(
        &enclosure,
        &dictionary,
        &vspca,
        &library,
        &cfg.stft,
        cfg.mix_mode(),
        cfg.harness.snr_db,
    );
    session.omp = cfg.omp_options();
    let result = run_trial(&session, &scn, cfg.seed).map_err(runtime_err)?;

    let mut json = serde_json::to_string_pretty(&result).map_err(runtime_err)?;
    json.push('\n');
    fs::write(cfg.out_file("trial.json"), json).map_err(runtime_err)?;
    println!(
        "alpha = {:.4} ({} of {} recognized); recovered: {}",
        result.alpha,
        result.n_recognized,
        result.scenario.true_k,
        result
            .recovered
            .iter()
            .map(|(d, a)| format!("(dir {d}, audio {a})"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn cmd_campaign(
    cfg: &EffectiveConfig,
    dict: &Path,
    vspca: &Path,
    enclosure_path: Option<&Path>,
) -> AppResult<()> {
    cfg.echo()?;
    let dictionary = load_dictionary(dict).map_err(config_err)?;
    let vspca = load_vspca(vspca)?;
    let enclosure = obtain_enclosure(cfg, enclosure_path)?;
    let library = cfg.build_library()?;

    let mut session = Session::new(
        &enclosure,
        &dictionary,
        &vspca,
        &library,
        &cfg.stft,
        cfg.mix_mode(),
        cfg.harness.snr_db,
    );
    session.omp = cfg.omp_options();
    let params = CampaignParams {
        k_min: cfg.harness.k_range.0,
        k_max: cfg.harness.k_range.1,
        trials_per_k: cfg.harness.trials_per_k,
        seed: cfg.seed,
        test_duration_s: cfg.harness.test_duration_s,
    };
    let report = run_campaign(&session, &params).map_err(runtime_err)?;

    fs::write(cfg.out_file("campaign.csv"), report.trials_csv()).map_err(runtime_err)?;
    fs::write(cfg.out_file("summary.csv"), report.summary_csv()).map_err(runtime_err)?;
    for (k, mean) in &report.per_k_mean {
        println!("k={k}: mean alpha {mean:.4}");
    }
    println!(
        "campaign: {} trials -> {}",
        report.trials.len(),
        cfg.out_file("campaign.csv").display()
    );
    Ok(())
}

fn cmd_track(
    cfg: &EffectiveConfig,
    dict: &Path,
    vspca: &Path,
    timeline: &Path,
    enclosure_path: Option<&Path>,
) -> AppResult<()> {
    cfg.echo()?;
    let dictionary = load_dictionary(dict).map_err(config_err)?;
    let vspca = load_vspca(vspca)?;
    let enclosure = obtain_enclosure(cfg, enclosure_path)?;
    let library = cfg.build_library()?;
    let text = fs::read_to_string(timeline)
        .with_context(|| format!("reading timeline {}", timeline.display()))
        .map_err(config_err)?;
    let timeline = TrackingTimeline::from_json(&text)
        .with_context(|| "parsing timeline")
        .map_err(config_err)?;

    let mut session = Session::new(
        &enclosure,
        &dictionary,
        &vspca,
        &library,
        &cfg.stft,
        cfg.mix_mode(),
        cfg.harness.snr_db,
    );
    session.omp = cfg.omp_options();
    let report = run_tracking(&session, &timeline, cfg.seed).map_err(runtime_err)?;
    fs::write(cfg.out_file("tracking.csv"), report.csv()).map_err(runtime_err)?;

    let mean_alpha: f64 =
        report.windows.iter().map(|w| w.alpha).sum::<f64>() / report.windows.len() as f64;
    let worst_ms = report
        .windows
        .iter()
        .map(|w| w.elapsed_s)
        .fold(0.0f64, f64::max)
        * 1e3;
    println!(
        "tracking: {} windows, mean alpha {mean_alpha:.4}, worst recovery {worst_ms:.1} ms -> {}",
        report.windows.len(),
        cfg.out_file("tracking.csv").display()
    );
    Ok(())
}

fn cmd_coherence(cfg: &EffectiveConfig, enclosure_path: &Path) -> AppResult<()> {
    cfg.echo()?;
    let model = load_enclosure(enclosure_path)?;
    let responses = model.probe_responses(&cfg.stft.grid()).map_err(runtime_err)?;
    let matrix = coherence_matrix(&responses).map_err(runtime_err)?;
    fs::write(cfg.out_file("coherence.csv"), coherence_csv(&matrix)).map_err(runtime_err)?;
    println!(
        "max off-diagonal probe coherence {:.4} -> {}",
        max_off_diagonal(&matrix),
        cfg.out_file("coherence.csv").display()
    );
    Ok(())
}

fn cmd_synth_audio(cfg: &EffectiveConfig, duration: f64) -> AppResult<()> {
    cfg.echo()?;
    let library = cfg.build_library()?;
    for entry in &library.entries {
        let samples = library
            .canonical_waveform(entry.audio_id, duration, cfg.stft.sample_rate)
            .map_err(runtime_err)?;
        let path = cfg.out_file(&format!("{:02}_{}.wav", entry.audio_id, entry.name));
        write_wav_mono16(&path, &samples, cfg.stft.sample_rate).map_err(runtime_err)?;
        println!("{}", path.display());
    }
    Ok(())
}
