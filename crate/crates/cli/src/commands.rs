use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use m2d_core::data::{load_csv, write_csv, write_idx, Dataset};
use m2d_core::detector::{self, DetectorBundle};
use m2d_core::eval::{reports_to_csv, reports_to_json, AblationTable};
use m2d_core::nets::{self, Network};
use m2d_core::{write_atomic, Tensor};

use crate::config::{load_config, DatasetKind, LoadedConfig};
use crate::pipeline::{self, ConvertMode};
use crate::CliError;

pub const CLASSIFIER_FILE: &str = "classifier.m2d";
pub const BUNDLE_FILE: &str = "detector.m2db";

#[derive(Debug, Parser)]
#[command(name = "m2d", version, about = "Turn a trained classifier into an out-of-distribution detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured in-distribution and OOD corpora to files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Convert a trained classifier into a detector bundle.
    Convert {
        #[command(flatten)]
        common: Common,
        /// Classifier file; defaults to `<out>/classifier.m2d`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Fit heads on the classifier's own encoder, without retraining.
        #[arg(long, conflicts_with = "vanilla_ae")]
        no_retrain: bool,
        /// Retrain a freshly initialized encoder instead of the classifier's.
        #[arg(long)]
        vanilla_ae: bool,
    },
    /// Evaluate the configured methods and write CSV/JSON reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use this bundle for the m2d cell at `detector.steps`.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Score samples from a CSV file with a detector bundle.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// CSV of samples, one flattened sample per row; a trailing `label`
        /// column is ignored.
        #[arg(long)]
        input: PathBuf,
        /// In-distribution iff score > threshold.
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
    },
}

/// One machine-parsable log line on stderr.
pub fn log(event: &str, fields: &[(&str, String)]) {
    let mut line = format!("event={event}");
    for (k, v) in fields {
        let _ = write!(line, " {k}={v}");
    }
    eprintln!("{line}");
}

fn require_config(common: &Common) -> Result<LoadedConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    Ok(load_config(path, &common.set, common.seed)?)
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn trace_csv(header: &str, values: &[f64]) -> Vec<u8> {
    let mut s = format!("{header},loss\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", i + 1);
    }
    s.into_bytes()
}

pub fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::Train { common } => train(common),
        Command::Convert {
            common,
            model,
            no_retrain,
            vanilla_ae,
        } => {
            let mode = if *no_retrain {
                ConvertMode::NoRetrain
            } else if *vanilla_ae {
                ConvertMode::VanillaAe
            } else {
                ConvertMode::Retrain
            };
            convert(common, model.as_deref(), mode)
        }
        Command::Evaluate {
            common,
            model,
            bundle,
        } => evaluate(common, model.as_deref(), bundle.as_deref()),
        Command::Score {
            common,
            bundle,
            input,
            threshold,
        } => score(common, bundle, input, *threshold, stdout),
    }
}

fn gen_data(common: &Common) -> Result<(), CliError> {
    let loaded = require_config(common)?;
    let (inn, out) = pipeline::load_corpora(&loaded)?;
    ensure_out(&common.out)?;
    let written = match loaded.config.dataset.kind {
        DatasetKind::Glyphs | DatasetKind::Idx => {
            let mut names = Vec::new();
            for (prefix, d) in [("in", &inn), ("out", &out)] {
                let (images, labels) = to_idx(d)?;
                let img = common.out.join(format!("{prefix}-images.idx"));
                let lab = common.out.join(format!("{prefix}-labels.idx"));
                write_atomic(&img, &images)?;
                write_atomic(&lab, &labels)?;
                names.push(img.display().to_string());
                names.push(lab.display().to_string());
            }
            names
        }
        DatasetKind::Blobs | DatasetKind::Csv => {
            let a = common.out.join("in.csv");
            let b = common.out.join("out.csv");
            write_csv(&inn, &a)?;
            write_csv(&out, &b)?;
            vec![a.display().to_string(), b.display().to_string()]
        }
    };
    log(
        "gen_data",
        &[
            ("in_samples", inn.len().to_string()),
            ("out_samples", out.len().to_string()),
            ("files", written.join(",")),
        ],
    );
    Ok(())
}

fn to_idx(d: &Dataset) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    let shape = d.sample_shape();
    let (rows, cols) = match shape {
        [r, c] | [r, c, 1] => (*r, *c),
        other => {
            return Err(CliError::Usage(format!(
                "IDX export needs single-channel images, got sample shape {other:?}"
            )))
        }
    };
    let pixels = d
        .features
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect::<Vec<_>>();
    let labels = match &d.labels {
        Some(l) => l
            .iter()
            .map(|&x| u8::try_from(x).map_err(|_| CliError::Usage(format!("label {x} exceeds 255"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![0; d.len()],
    };
    Ok(write_idx(&pixels, &labels, rows, cols)?)
}

fn train(common: &Common) -> Result<(), CliError> {
    let loaded = require_config(common)?;
    let data = pipeline::prepare(&loaded)?;
    let trained = pipeline::train(&loaded.config, &data)?;
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        log("train_epoch", &[("epoch", (i + 1).to_string()), ("loss", l.to_string())]);
    }
    ensure_out(&common.out)?;
    nets::io::save(&trained.classifier, common.out.join(CLASSIFIER_FILE))?;
    write_atomic(
        &common.out.join("train_log.csv"),
        &trace_csv("epoch", &trained.epoch_losses),
    )?;
    log(
        "train_done",
        &[
            ("train_accuracy", trained.train_accuracy.to_string()),
            ("test_accuracy", trained.test_accuracy.to_string()),
            ("params", trained.classifier.num_params().to_string()),
            ("model", common.out.join(CLASSIFIER_FILE).display().to_string()),
        ],
    );
    Ok(())
}

fn load_classifier(common: &Common, model: Option<&Path>) -> Result<Network, CliError> {
    let path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| common.out.join(CLASSIFIER_FILE));
    if !path.is_file() {
        return Err(CliError::Usage(format!("model file {} not found", path.display())));
    }
    Ok(nets::io::load(&path)?)
}

fn convert(common: &Common, model: Option<&Path>, mode: ConvertMode) -> Result<(), CliError> {
    let loaded = require_config(common)?;
    let classifier = load_classifier(common, model)?;
    let data = pipeline::prepare(&loaded)?;
    let steps = loaded.config.detector.steps;
    let conv = pipeline::convert(&loaded.config, &classifier, &data, mode, steps)?;
    for (i, l) in conv.loss_trace.iter().enumerate() {
        log("retrain_step", &[("step", (i + 1).to_string()), ("loss", l.to_string())]);
    }
    ensure_out(&common.out)?;
    detector::io::save(&conv.bundle, common.out.join(BUNDLE_FILE))?;
    write_atomic(
        &common.out.join("retrain_trace.csv"),
        &trace_csv("step", &conv.loss_trace),
    )?;
    log(
        "convert_done",
        &[
            ("method", mode.method().to_string()),
            ("steps", if mode == ConvertMode::NoRetrain { 0 } else { steps }.to_string()),
            ("heads", conv.bundle.heads().len().to_string()),
            ("bundle", common.out.join(BUNDLE_FILE).display().to_string()),
        ],
    );
    Ok(())
}

fn evaluate(common: &Common, model: Option<&Path>, bundle: Option<&Path>) -> Result<(), CliError> {
    let loaded = require_config(common)?;
    let classifier = load_classifier(common, model)?;
    let bundle = bundle.map(detector::io::load).transpose()?;
    let data = pipeline::prepare(&loaded)?;
    let outcome = pipeline::evaluate_grid(&loaded.config, &classifier, &data, bundle.as_ref())?;
    ensure_out(&common.out)?;
    write_atomic(&common.out.join("report.csv"), &reports_to_csv(&outcome.reports)?)?;
    write_atomic(&common.out.join("report.json"), &reports_to_json(&outcome.reports)?)?;
    let table = AblationTable::from_outcome(&outcome);
    write_atomic(&common.out.join("table.csv"), &table.to_csv()?)?;
    for r in &outcome.reports {
        log(
            "cell",
            &[
                ("pair", r.meta.dataset_pair.clone()),
                ("method", r.meta.method.to_string()),
                ("steps", r.meta.steps.map(|s| s.to_string()).unwrap_or_default()),
                ("auroc", r.auroc.to_string()),
                ("det_acc", r.detection_accuracy.to_string()),
            ],
        );
    }
    for f in &outcome.failures {
        log(
            "cell_failed",
            &[
                ("method", f.meta.method.to_string()),
                ("steps", f.meta.steps.map(|s| s.to_string()).unwrap_or_default()),
                ("error", format!("{:?}", f.error)),
            ],
        );
    }
    if let Some(first) = outcome.failures.first() {
        return Err(CliError::Runtime(m2d_core::Error::Format(format!(
            "{} of {} grid cells failed; first: {}",
            outcome.failures.len(),
            outcome.failures.len() + outcome.reports.len(),
            first.error
        ))));
    }
    Ok(())
}

/// Rows of the input file reshaped to the bundle's input shape. `None` when
/// the file has no sample rows.
fn read_samples(path: &Path, bundle: &DetectorBundle) -> Result<Option<Tensor>, CliError> {
    let text = fs::read_to_string(path)?;
    if text.lines().filter(|l| !l.trim().is_empty()).count() <= 1 {
        return Ok(None);
    }
    let d = load_csv(path)?;
    let input_shape = &bundle.encoder().spec().input_shape;
    let mut shape = vec![d.len()];
    shape.extend_from_slice(input_shape);
    let want: usize = input_shape.iter().product();
    if d.features.row_len() != want {
        return Err(CliError::Runtime(m2d_core::Error::Shape {
            op: "score",
            detail: format!(
                "input rows have {} values, the bundle expects {want} ({input_shape:?})",
                d.features.row_len()
            ),
        }));
    }
    Ok(Some(d.features.reshape(&shape)?))
}

fn score(
    common: &Common,
    bundle_path: &Path,
    input: &Path,
    threshold: f64,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let loaded = common
        .config
        .as_ref()
        .map(|p| load_config(p, &common.set, common.seed))
        .transpose()?;
    for (what, p) in [("bundle", bundle_path), ("input", input)] {
        if !p.is_file() {
            return Err(CliError::Usage(format!("{what} file {} not found", p.display())));
        }
    }
    let bundle = detector::io::load(bundle_path)?;
    let Some(mut x) = read_samples(input, &bundle)? else {
        return Ok(());
    };
    if let Some(loaded) = &loaded {
        if let Some(norm) = pipeline::prepare(loaded)?.normalization {
            x = norm.apply_raw(&x)?;
        }
    }
    let (classes, scores) = bundle.predict_and_score(&x)?;
    let mut out = String::from("index,prediction,score,verdict\n");
    for (i, (c, s)) in classes.iter().zip(&scores).enumerate() {
        let verdict = if *s > threshold { "in" } else { "out" };
        let _ = writeln!(out, "{i},{c},{s},{verdict}");
    }
    stdout.write_all(out.as_bytes())?;
    Ok(())
}
