//! Command-line driver for the toolkit: scene synthesis, training,
//! inference, scoring, and the two-head comparison experiment.
//!
//! Conventions shared by every subcommand:
//! - one TOML config schema with `[model]`, `[train]`, `[scene]`, and
//!   `[infer]` sections; each command reads the sections it needs and
//!   command-line flags override file values
//! - results go to stdout, progress logs to stderr
//! - commands that write artifacts take `--out DIR` and drop a
//!   `config.toml` (the effective, post-override config) plus a
//!   `manifest.toml` there before doing any real work, so every artifact
//!   is traceable to (command, config hash, seed)
//! - any failure exits nonzero with a single `error: <category>: <reason>`
//!   line on stderr

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use accdoa_core::geometry::rotation_catalog;
use accdoa_core::metrics::{evaluate, MetricsConfig, SeldReport};
use accdoa_core::model::{load_checkpoint, save_checkpoint};
use accdoa_core::pipeline::{
    self, grid_to_events, infer_clip, infer_with_tta, run_comparison, write_event_csv,
    write_loss_history, CompareConfig, LossVariant, ModelPredictor, Predictor,
};
use accdoa_core::scene::render_scene;
use accdoa_core::wav::read_foa_wav;
use accdoa_core::Error as CoreError;

/// Environment variable consulted when neither a flag nor the config file
/// pins the seed.
const SEED_ENV: &str = "ACCDOA_SEED";

#[derive(Parser)]
#[command(
    name = "accdoa",
    version,
    about = "Sound event localization and detection with activity-coupled direction vectors",
    after_help = "Seeds resolve as: --seed flag, explicit config-file value, \
                  the ACCDOA_SEED environment variable, then the built-in default."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render labeled synthetic sound scenes (WAV + label CSV per scene)
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and loss history
    Train(TrainArgs),
    /// Run a trained model over a recording and write detected events
    Infer(InferArgs),
    /// Score a prediction CSV against a reference CSV
    Eval(EvalArgs),
    /// Train and score both output representations on identical data
    Compare(CompareArgs),
}

/// Restore the default SIGPIPE disposition so piping stdout into something
/// like `head` ends the process quietly instead of panicking on a failed
/// print.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn error_line(e: &anyhow::Error) -> String {
    let mut category = "cli";
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            category = core_category(core);
            break;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            category = "io";
            break;
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            category = "parse";
            break;
        }
    }
    // Join the cause chain, skipping causes a wrapper already printed
    // inside its own message, and flatten everything onto one line.
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if parts.last().is_some_and(|p| p.contains(&s)) {
            continue;
        }
        parts.push(s);
    }
    let joined = parts.join(": ");
    let msg = joined.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error: {category}: {msg}")
}

fn core_category(e: &CoreError) -> &'static str {
    match e {
        CoreError::InvalidConfig(_) => "config",
        CoreError::Parse { .. } => "parse",
        CoreError::Format { .. } => "format",
        CoreError::Io { .. } => "io",
        CoreError::CheckpointMismatch(_) => "checkpoint",
        CoreError::NonFiniteLoss { .. } => "training",
        _ => "data",
    }
}

/// Parsed config file plus the raw document, kept so commands can tell an
/// explicit file value apart from a serde default.
struct LoadedConfig {
    cfg: CompareConfig,
    raw: Option<toml::Value>,
}

fn load_config(path: Option<&Path>) -> Result<LoadedConfig> {
    let Some(path) = path else {
        return Ok(LoadedConfig { cfg: CompareConfig::default(), raw: None });
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let raw = toml::from_str(&text)?;
    Ok(LoadedConfig { cfg, raw: Some(raw) })
}

impl LoadedConfig {
    /// Did the config file itself set `[section] key`?
    fn file_sets(&self, section: &str, key: &str) -> bool {
        self.raw
            .as_ref()
            .and_then(|v| v.get(section))
            .and_then(|s| s.get(key))
            .is_some()
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| anyhow!("{SEED_ENV}={s} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(SEED_ENV),
    }
}

/// Flag beats config file beats environment beats built-in default.
fn resolve_seed(flag: Option<u64>, file: Option<u64>, default: u64) -> Result<u64> {
    Ok(flag.or(file).or(env_seed()?).unwrap_or(default))
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    toolkit_version: String,
    /// SHA-256 of the exact bytes written to the run's config.toml.
    config_hash: String,
    seed: u64,
    started_at_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    finished_at_unix: Option<u64>,
    outputs: Vec<String>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.toml");
        fs::write(&path, toml::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_at_unix = Some(unix_now());
        self.write(dir)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Create the run directory, write the effective config, and open the
/// manifest. Called before any real work so even an interrupted run leaves
/// a traceable record.
fn start_run(
    dir: &Path,
    command: &str,
    cfg: &impl Serialize,
    seed: u64,
    artifacts: &[&str],
) -> Result<RunManifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let text = toml::to_string_pretty(cfg)?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, &text)
        .with_context(|| format!("writing {}", config_path.display()))?;
    let mut outputs = vec!["config.toml".to_string(), "manifest.toml".to_string()];
    outputs.extend(artifacts.iter().map(|s| s.to_string()));
    let manifest = RunManifest {
        command: command.to_string(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(text.as_bytes()),
        seed,
        started_at_unix: unix_now(),
        finished_at_unix: None,
        outputs,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// When the config file does not pin the model head, it follows the loss.
fn align_head_with_loss(loaded: &LoadedConfig, cfg: &mut CompareConfig) {
    if !loaded.file_sets("model", "head") {
        cfg.model.head = cfg.train.loss.head();
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory the scenes are written into
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to render (scene i uses seed + i)
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// TOML config; the [scene] section configures the generator
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the class vocabulary
    #[arg(long)]
    classes: Option<usize>,
    /// Scene length in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Maximum simultaneous events (1 or 2)
    #[arg(long)]
    max_overlap: Option<usize>,
    /// Signal-to-noise range in dB
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    snr: Option<Vec<f64>>,
    /// Mean event arrivals per second
    #[arg(long)]
    event_rate: Option<f64>,
}

/// Wrapper so a synth run's config.toml reloads through --config.
#[derive(Serialize)]
struct SceneConfigFile<'a> {
    scene: &'a accdoa_core::scene::SceneSpec,
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let loaded = load_config(a.config.as_deref())?;
    let mut scene = loaded.cfg.scene.clone();
    if let Some(c) = a.classes {
        scene.class_count = c;
    }
    if let Some(d) = a.duration {
        scene.duration_s = d;
    }
    if let Some(m) = a.max_overlap {
        scene.max_overlap = m;
    }
    if let Some(snr) = &a.snr {
        scene.snr_db_range = [snr[0], snr[1]];
    }
    if let Some(r) = a.event_rate {
        scene.event_rate_hz = r;
    }
    let file_seed = loaded.file_sets("scene", "seed").then_some(scene.seed);
    scene.seed = resolve_seed(a.seed, file_seed, scene.seed)?;
    scene.validate()?;

    let mut artifacts = Vec::new();
    for i in 0..a.scenes {
        artifacts.push(format!("scene_{i:04}.wav"));
        artifacts.push(format!("scene_{i:04}.csv"));
    }
    let artifact_refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let manifest = start_run(
        &a.out,
        "synth",
        &SceneConfigFile { scene: &scene },
        scene.seed,
        &artifact_refs,
    )?;
    for i in 0..a.scenes {
        let mut spec = scene.clone();
        spec.seed = scene.seed.wrapping_add(i as u64);
        let inst = render_scene(&spec)?;
        let wav = a.out.join(format!("scene_{i:04}.wav"));
        let csv = a.out.join(format!("scene_{i:04}.csv"));
        inst.write(&wav, &csv)?;
        eprintln!(
            "scene_{i:04}: events={} snr_db={:.1}",
            inst.events.len(),
            inst.snr_db
        );
    }
    manifest.finish(&a.out)?;
    println!("scenes={}", a.scenes);
    println!("dir={}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config with [model], [train], and [scene] sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for checkpoint, history, config, and manifest
    #[arg(long)]
    out: PathBuf,
    /// accdoa, seldnet, or two-stage; also selects the matching head
    #[arg(long)]
    loss: Option<String>,
    /// Weight on the direction term of the combined two-branch loss
    #[arg(long)]
    loss_weight: Option<f64>,
    /// Training iterations
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let loaded = load_config(a.config.as_deref())?;
    let mut cfg = loaded.cfg.clone();
    if let Some(loss) = &a.loss {
        let loss: LossVariant = loss.parse()?;
        cfg.train.loss = loss;
        cfg.model.head = loss.head();
    } else {
        align_head_with_loss(&loaded, &mut cfg);
    }
    if let Some(w) = a.loss_weight {
        cfg.train.loss_weight = w;
    }
    if let Some(n) = a.iters {
        cfg.train.max_iters = n;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    let file_seed = loaded.file_sets("train", "seed").then_some(cfg.train.seed);
    cfg.train.seed = resolve_seed(a.seed, file_seed, cfg.train.seed)?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.scene.validate()?;

    let manifest = start_run(
        &a.out,
        "train",
        &cfg,
        cfg.train.seed,
        &["checkpoint.bin", "loss_history.csv"],
    )?;
    eprintln!(
        "training loss={} iters={} batch={} seed={}",
        cfg.train.loss, cfg.train.max_iters, cfg.train.batch_size, cfg.train.seed
    );
    let outcome = pipeline::train(&cfg.model, &cfg.train, &cfg.scene)?;
    let ckpt = a.out.join("checkpoint.bin");
    save_checkpoint(&ckpt, &cfg.model, &outcome.params)?;
    write_loss_history(&a.out.join("loss_history.csv"), &outcome.history)?;
    manifest.finish(&a.out)?;
    println!("iterations={}", outcome.history.len());
    if let Some(last) = outcome.history.last() {
        println!("final_loss={}", last.loss);
    }
    println!("checkpoint={}", ckpt.display());
    Ok(())
}

#[derive(Args)]
struct InferArgs {
    /// TOML config with [model] and [infer] sections; reuse the training
    /// run's config.toml so the checkpoint matches
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Four-channel input recording
    #[arg(long)]
    wav: PathBuf,
    /// Run directory for events.csv, config, and manifest
    #[arg(long)]
    out: PathBuf,
    /// Activity threshold on the vector norm
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    segment_frames: Option<usize>,
    #[arg(long)]
    shift_frames: Option<usize>,
    /// Rotation catalog indices for averaged inference: `all`, `none`,
    /// or a comma list like `0,4,8`
    #[arg(long)]
    tta_rotations: Option<String>,
}

fn parse_rotations(s: &str) -> Result<Vec<usize>> {
    match s {
        "all" => Ok((0..rotation_catalog().len()).collect()),
        "none" => Ok(Vec::new()),
        list => list
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| anyhow!("bad rotation index `{p}`"))
            })
            .collect(),
    }
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let loaded = load_config(a.config.as_deref())?;
    let mut cfg = loaded.cfg.clone();
    align_head_with_loss(&loaded, &mut cfg);
    if let Some(t) = a.threshold {
        cfg.infer.threshold = t;
    }
    if let Some(s) = a.segment_frames {
        cfg.infer.segment_frames = s;
    }
    if let Some(s) = a.shift_frames {
        cfg.infer.shift_frames = s;
    }
    if let Some(r) = &a.tta_rotations {
        cfg.infer.tta_rotations = parse_rotations(r)?;
    }
    cfg.model.validate()?;
    cfg.infer.validate()?;
    let params = load_checkpoint(&a.checkpoint, &cfg.model)?;
    let clip = read_foa_wav(&a.wav)?;

    let manifest = start_run(&a.out, "infer", &cfg, 0, &["events.csv"])?;
    eprintln!(
        "inferring {} ({} samples) tta={}",
        a.wav.display(),
        clip.len(),
        cfg.infer.tta_rotations.len()
    );
    let predictor = ModelPredictor { config: &cfg.model, params: &params };
    let grid = if cfg.infer.tta_rotations.is_empty() {
        infer_clip(&predictor, &clip, &cfg.infer)?
    } else {
        infer_with_tta(&predictor, &clip, &cfg.infer)?
    };
    let events = grid_to_events(&grid, cfg.infer.threshold)?;
    let csv = a.out.join("events.csv");
    write_event_csv(&csv, &events, predictor.temporal_pool())?;
    manifest.finish(&a.out)?;
    println!("frames={}", grid.frames());
    println!("events={}", events.len());
    println!("csv={}", csv.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label CSV
    #[arg(long)]
    pred: PathBuf,
    /// Reference label CSV
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Angular gate in degrees for the location-dependent counts
    #[arg(long)]
    distance_threshold: Option<f64>,
    /// Label frames per error-rate segment
    #[arg(long)]
    segment_frames: Option<usize>,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut mc = MetricsConfig::default();
    if let Some(d) = a.distance_threshold {
        mc.distance_threshold_deg = d;
    }
    if let Some(s) = a.segment_frames {
        mc.segment_frames = s;
    }
    let report = evaluate(&a.pred, &a.reference, &mc)?;
    println!("{}", report.to_kv_block());
    println!("{}", SeldReport::CSV_HEADER);
    println!("{}", report.to_csv_row());
    Ok(())
}

#[derive(Args)]
struct CompareArgs {
    /// TOML config; all sections plus train_scenes / test_scenes apply
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for both variants' artifacts
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training iterations per variant
    #[arg(long)]
    iters: Option<usize>,
    /// Pre-rendered training pool size
    #[arg(long)]
    train_scenes: Option<usize>,
    /// Held-out scenes scored after training
    #[arg(long)]
    test_scenes: Option<usize>,
}

const COMPARE_VARIANT_TAGS: [&str; 2] = ["accdoa", "two_branch"];

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let loaded = load_config(a.config.as_deref())?;
    let mut cfg = loaded.cfg.clone();
    if let Some(n) = a.iters {
        cfg.train.max_iters = n;
    }
    if let Some(n) = a.train_scenes {
        cfg.train_scenes = n;
    }
    if let Some(n) = a.test_scenes {
        cfg.test_scenes = n;
    }
    let file_seed = loaded.file_sets("train", "seed").then_some(cfg.train.seed);
    cfg.train.seed = resolve_seed(a.seed, file_seed, cfg.train.seed)?;
    cfg.validate()?;

    let artifacts: Vec<String> = COMPARE_VARIANT_TAGS
        .iter()
        .flat_map(|tag| {
            [format!("{tag}_checkpoint.bin"), format!("{tag}_history.csv")]
        })
        .chain(["comparison.csv".to_string()])
        .collect();
    let artifact_refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let manifest = start_run(&a.out, "compare", &cfg, cfg.train.seed, &artifact_refs)?;
    eprintln!(
        "comparing heads: pool={} test={} iters={} seed={}",
        cfg.train_scenes, cfg.test_scenes, cfg.train.max_iters, cfg.train.seed
    );
    let outcome = run_comparison(&cfg)?;

    let variants = [&outcome.accdoa, &outcome.two_branch];
    let mut table = String::from("variant,params,le_cd_deg,lr_cd_pct,er_20,f_20_pct\n");
    for (tag, v) in COMPARE_VARIANT_TAGS.iter().zip(variants) {
        save_checkpoint(
            &a.out.join(format!("{tag}_checkpoint.bin")),
            &v.config,
            &v.params,
        )?;
        write_loss_history(&a.out.join(format!("{tag}_history.csv")), &v.history)?;
        table.push_str(&format!(
            "{tag},{},{:.4},{:.4},{:.4},{:.4}\n",
            v.param_count, v.report.le_cd, v.report.lr_cd, v.report.er_20, v.report.f_20
        ));
    }
    let table_path = a.out.join("comparison.csv");
    fs::write(&table_path, &table)
        .with_context(|| format!("writing {}", table_path.display()))?;
    manifest.finish(&a.out)?;

    println!(
        "{:<11} {:>9} {:>10} {:>10} {:>8} {:>9}",
        "variant", "params", "le_cd_deg", "lr_cd_pct", "er_20", "f_20_pct"
    );
    for (tag, v) in COMPARE_VARIANT_TAGS.iter().zip(variants) {
        println!(
            "{:<11} {:>9} {:>10.4} {:>10.4} {:>8.4} {:>9.4}",
            tag, v.param_count, v.report.le_cd, v.report.lr_cd, v.report.er_20, v.report.f_20
        );
    }
    println!("trunk_hashes_match={}", outcome.trunk_hashes_match);
    Ok(())
}
