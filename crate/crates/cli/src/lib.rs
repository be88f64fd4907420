//! Command-line front end.
//!
//! Every command that takes a configuration builds it in three layers:
//! built-in defaults, then an optional JSON file (`--config`), then trailing
//! `key=value` overrides. Nested fields use dotted keys (`geometry.c=1`,
//! `losses.hsl=false`). Values are parsed as JSON and fall back to a plain
//! string. Unknown keys are rejected at every layer.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime
//! failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use hyperhier_core::data::{generate_synthetic, read_dataset, write_dataset, SynthConfig};
use hyperhier_core::eval::{compute_eer, score_dataset, write_scores_csv};
use hyperhier_core::training::{gradcheck_suite, load_model, save_model, train};
use hyperhier_core::viz::render_disk_svg;
use hyperhier_core::{write_atomic, TrainConfig};

/// Default finite-difference step and tolerance of `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "hyperhier",
    version,
    about = "Hierarchical prototype learning in the Poincaré ball"
)]
struct Cli {
    /// Worker threads for parallel sections; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "PHN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset with subclusters.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layers: ConfigLayers,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Per-epoch losses and training EER, as JSON.
        #[arg(long)]
        metrics_out: PathBuf,
        #[command(flatten)]
        layers: ConfigLayers,
    },
    /// Score a dataset and report its equal error rate.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scores_out: PathBuf,
    },
    /// Compare analytic gradients with finite differences on small random problems.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random states, starting at `seed`.
        #[arg(long, default_value_t = 1)]
        states: usize,
    },
    /// Draw a two-dimensional model and a sample of the data as SVG.
    Plot {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evenly spaced samples to draw; 0 draws prototypes only.
        #[arg(long, default_value_t = 500)]
        max_samples: usize,
    },
}

#[derive(Debug, Args)]
struct ConfigLayers {
    /// JSON file whose fields override the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Error classes that map to exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

fn classify(e: hyperhier_core::Error, what: &str) -> CliError {
    let validation = e.is_validation();
    let e = anyhow!("{what}: {e}");
    if validation {
        CliError::Validation(e)
    } else {
        CliError::Runtime(e)
    }
}

fn invalid(e: anyhow::Error) -> CliError {
    CliError::Validation(e)
}

/// Merges `patch` into `base`, refusing keys that `base` does not have.
fn merge(base: &mut Value, patch: Value, path: &str) -> anyhow::Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| anyhow!("unknown config key `{here}`"))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn apply_override(base: &mut Value, kv: &str) -> anyhow::Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{kv}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *base;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
    }
    if slot.is_object() {
        return Err(anyhow!("`{key}` is a section; override its fields instead"));
    }
    *slot = value;
    Ok(())
}

/// Defaults < file < overrides, with unknown keys rejected.
pub fn layered_config<T>(
    defaults: &T,
    file: Option<&Path>,
    overrides: &[String],
) -> anyhow::Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(defaults)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if !patch.is_object() {
            return Err(anyhow!("config {} must hold a JSON object", path.display()));
        }
        merge(&mut value, patch, "")?;
    }
    for kv in overrides {
        apply_override(&mut value, kv)?;
    }
    serde_json::from_value(value).context("invalid configuration")
}

fn train_config(layers: &ConfigLayers) -> Result<TrainConfig, CliError> {
    let cfg: TrainConfig = layered_config(
        &TrainConfig::default(),
        layers.config.as_deref(),
        &layers.overrides,
    )
    .map_err(invalid)?;
    cfg.validate()
        .map_err(|e| classify(e, "invalid configuration"))?;
    Ok(cfg)
}

fn synth_config(layers: &ConfigLayers) -> Result<SynthConfig, CliError> {
    let cfg: SynthConfig = layered_config(
        &SynthConfig::default(),
        layers.config.as_deref(),
        &layers.overrides,
    )
    .map_err(invalid)?;
    cfg.validate()
        .map_err(|e| classify(e, "invalid configuration"))?;
    Ok(cfg)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    let runtime =
        |e: std::io::Error| CliError::Runtime(anyhow::Error::new(e).context("writing output"));
    match command {
        Command::GenSynth { out: path, layers } => {
            let cfg = synth_config(&layers)?;
            let ds = generate_synthetic(&cfg).map_err(|e| classify(e, "generating data"))?;
            write_dataset(&ds, &path).map_err(|e| classify(e, "writing dataset"))?;
            writeln!(
                out,
                "wrote {} samples of dimension {} to {}",
                ds.n(),
                ds.d_in,
                path.display()
            )
            .map_err(runtime)?;
        }
        Command::Train {
            data,
            model_out,
            metrics_out,
            layers,
        } => {
            let cfg = train_config(&layers)?;
            let ds = read_dataset(&data).map_err(|e| classify(e, "reading dataset"))?;
            let outcome = train(&cfg, &ds).map_err(|e| classify(e, "training"))?;
            save_model(&model_out, &outcome.params, &cfg)
                .map_err(|e| classify(e, "writing model"))?;
            write_atomic(&metrics_out, &outcome.log.to_json_bytes())
                .map_err(|e| classify(e, "writing metrics"))?;
            match outcome.log.epochs.last() {
                Some(m) => writeln!(
                    out,
                    "trained {} epochs: L_all {:.6}, train EER {:.4}%",
                    m.epoch,
                    m.l_all,
                    100.0 * m.train_eer
                ),
                None => writeln!(out, "trained 0 epochs"),
            }
            .map_err(runtime)?;
        }
        Command::Eval {
            model,
            data,
            scores_out,
        } => {
            let (params, _) = load_model(&model).map_err(|e| classify(e, "reading model"))?;
            let ds = read_dataset(&data).map_err(|e| classify(e, "reading dataset"))?;
            let scores = score_dataset(&params, &ds).map_err(|e| classify(e, "scoring"))?;
            let eer = compute_eer(&scores).map_err(|e| classify(e, "computing EER"))?;
            write_scores_csv(&scores, &scores_out).map_err(|e| classify(e, "writing scores"))?;
            writeln!(out, "EER: {:.4}%", 100.0 * eer.eer).map_err(runtime)?;
        }
        Command::Gradcheck { seed, states } => {
            if states == 0 {
                return Err(invalid(anyhow!("--states must be positive")));
            }
            let suite = gradcheck_suite(seed, states, GRADCHECK_STEP, GRADCHECK_TOLERANCE)
                .map_err(|e| classify(e, "gradient check"))?;
            let mut all = true;
            for entry in &suite {
                for t in &entry.report.tensors {
                    all &= t.pass;
                    writeln!(
                        out,
                        "{} seed={} {:<6} {:<16} max_rel_err={:.3e}",
                        if t.pass { "PASS" } else { "FAIL" },
                        entry.seed,
                        entry.loss.name(),
                        t.name,
                        t.max_rel_err
                    )
                    .map_err(runtime)?;
                }
            }
            if !all {
                return Err(CliError::Runtime(anyhow!(
                    "gradient check failed (tolerance {GRADCHECK_TOLERANCE:e})"
                )));
            }
        }
        Command::Plot {
            model,
            data,
            out: path,
            max_samples,
        } => {
            let (params, _) = load_model(&model).map_err(|e| classify(e, "reading model"))?;
            let ds = read_dataset(&data).map_err(|e| classify(e, "reading dataset"))?;
            let indices: Vec<usize> = if max_samples == 0 || ds.n() == 0 {
                Vec::new()
            } else {
                let step = ds.n().div_ceil(max_samples);
                (0..ds.n()).step_by(step).collect()
            };
            render_disk_svg(&params, &ds.subset(&indices), &path)
                .map_err(|e| classify(e, "plotting"))?;
            writeln!(out, "wrote {}", path.display()).map_err(runtime)?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Validation(anyhow!("--threads must be positive"))),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command, &mut std::io::stdout().lock())),
            Err(e) => Err(CliError::Runtime(
                anyhow::Error::new(e).context("starting thread pool"),
            )),
        },
        None => execute(cli.command, &mut std::io::stdout().lock()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
