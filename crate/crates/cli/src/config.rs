//! Run configuration: one TOML file plus `--set section.key=value` overrides.
//!
//! ```toml
//! seed = 7                      # mandatory
//!
//! [dataset]
//! kind = "blobs"                # blobs | glyphs | csv | idx
//! num_classes = 3
//! n_per_class = 200
//! ood_n = 200
//!
//! [dataset.split]
//! train = 0.8
//! fit = 0.1
//! test = 0.1
//! detector_subset = 100
//!
//! [model]
//! hidden = [32, 32]
//! epochs = 5
//!
//! [detector]
//! steps = 10
//! taps = ["h2"]
//!
//! [eval]
//! methods = ["m2d", "msp", "odin"]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use m2d_core::detector::{ReconstructionLoss, Ridge};
use m2d_core::eval::Method;
use serde::Deserialize;

/// A configuration problem, with the source line when it can be located.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.origin, line, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Glyphs,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub fit: f64,
    pub test: f64,
    pub detector_subset: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            fit: 0.1,
            test: 0.1,
            detector_subset: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub split: SplitConfig,

    // synthetic generators
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_n")]
    pub n_per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Class centers; defaults to points on a circle of radius `radius`.
    #[serde(default)]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub ood_center: Option<Vec<f64>>,
    #[serde(default = "default_n")]
    pub ood_n: usize,
    #[serde(default = "default_spread")]
    pub ood_spread: f64,

    // files
    #[serde(default)]
    pub in_path: Option<PathBuf>,
    #[serde(default)]
    pub out_path: Option<PathBuf>,
    #[serde(default)]
    pub in_images: Option<PathBuf>,
    #[serde(default)]
    pub in_labels: Option<PathBuf>,
    #[serde(default)]
    pub out_images: Option<PathBuf>,
    #[serde(default)]
    pub out_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths of the default MLP; ignored when `layers` is given.
    pub hidden: Vec<usize>,
    /// Explicit layer lines, e.g. `"conv 10 10 1 8 3 1 relu"`.
    pub layers: Option<Vec<String>>,
    /// `"name=layer_index"` or `"name=input"`; defaults to every hidden layer.
    pub taps: Option<Vec<String>>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            layers: None,
            taps: None,
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RidgeSetting {
    Named(String),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSetting {
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Classifier layers kept in the encoder; defaults to all but the last.
    pub sever_at: Option<usize>,
    /// Defaults to the deepest tap inside the encoder.
    pub taps: Option<Vec<String>>,
    pub ridge: RidgeSetting,
    pub weights: Option<BTreeMap<String, f64>>,
    pub preprocess: bool,
    pub epsilon: f64,
    pub loss: LossSetting,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            learning_rate: 0.01,
            batch_size: 32,
            sever_at: None,
            taps: None,
            ridge: RidgeSetting::Named("auto".into()),
            weights: None,
            preprocess: false,
            epsilon: 0.001,
            loss: LossSetting::Mse,
        }
    }
}

impl DetectorConfig {
    pub fn ridge(&self) -> Ridge {
        match self.ridge {
            RidgeSetting::Value(v) => Ridge::Fixed(v),
            RidgeSetting::Named(_) => Ridge::Auto,
        }
    }

    pub fn loss(&self) -> ReconstructionLoss {
        match self.loss {
            LossSetting::Mse => ReconstructionLoss::Mse,
            LossSetting::Bce => ReconstructionLoss::BinaryCrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Step counts for retraining methods; empty means `[detector.steps]`.
    pub steps_grid: Vec<usize>,
    pub temperature: f64,
    pub odin_epsilon: f64,
    pub workers: usize,
    /// Record wall-clock milliseconds in reports (breaks byte-identical re-runs).
    pub timing: bool,
    pub dataset_pair: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::M2d, Method::Msp, Method::Odin],
            steps_grid: Vec::new(),
            temperature: 1000.0,
            odin_epsilon: 0.001,
            workers: 1,
            timing: false,
            dataset_pair: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_true() -> bool {
    true
}
fn default_classes() -> usize {
    3
}
fn default_n() -> usize {
    200
}
fn default_dim() -> usize {
    2
}
fn default_radius() -> f64 {
    4.0
}
fn default_spread() -> f64 {
    0.5
}

/// Source text kept around so later validation errors can point at lines.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub origin: String,
    text: String,
    overridden: Vec<String>,
}

impl LoadedConfig {
    /// Builds an error for `section.key`, locating its line in the file or
    /// naming the override that set it.
    pub fn error_at(&self, path: &str, message: impl Into<String>) -> ConfigError {
        let message = message.into();
        if self.overridden.iter().any(|o| o == path) {
            return ConfigError {
                origin: format!("--set {path}"),
                line: None,
                message,
            };
        }
        ConfigError {
            origin: self.origin.clone(),
            line: locate(&self.text, path),
            message,
        }
    }

    /// Directory that relative dataset paths resolve against.
    pub fn base_dir(&self) -> PathBuf {
        Path::new(&self.origin)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }
}

/// 1-based line of `key` inside `[section]` (or at top level).
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let (section, key) = match path.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", path),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let bad = |m: &str| ConfigError {
        origin: format!("--set {raw}"),
        line: None,
        message: m.to_string(),
    };
    let (key, value) = raw.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(bad("empty key segment"));
    }
    let value = value.trim();
    // Anything that is not a TOML literal is taken as a bare string.
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        cur = entry.as_table_mut().expect("just made a table");
    }
    cur.insert(last.clone(), value);
}

/// Parses config text, applies overrides, then validates values.
pub fn parse_config(
    text: &str,
    origin: &str,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<LoadedConfig, ConfigError> {
    let located = |e: toml::de::Error| ConfigError {
        origin: origin.to_string(),
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    };
    let mut overridden = Vec::new();
    let config: RunConfig = if overrides.is_empty() && seed.is_none() {
        toml::from_str(text).map_err(located)?
    } else {
        let mut table: toml::Table = text.parse().map_err(located)?;
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            overridden.push(path.join("."));
            apply_override(&mut table, &path, value);
        }
        if let Some(s) = seed {
            let value = i64::try_from(s).map_err(|_| ConfigError {
                origin: "--seed".into(),
                line: None,
                message: format!("{s} does not fit a TOML integer"),
            })?;
            table.insert("seed".into(), toml::Value::Integer(value));
            overridden.push("seed".into());
        }
        table.try_into().map_err(|e: toml::de::Error| ConfigError {
            origin: format!("{origin} (with overrides)"),
            line: None,
            message: e.message().to_string(),
        })?
    };
    let loaded = LoadedConfig {
        config,
        origin: origin.to_string(),
        text: text.to_string(),
        overridden,
    };
    validate(&loaded)?;
    Ok(loaded)
}

pub fn load_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        origin: path.display().to_string(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, &path.display().to_string(), overrides, seed)
}

fn positive(loaded: &LoadedConfig, path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(loaded.error_at(path, format!("must be a positive number, got {v}")))
    }
}

fn non_negative(loaded: &LoadedConfig, path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(loaded.error_at(path, format!("must be >= 0, got {v}")))
    }
}

fn nonzero(loaded: &LoadedConfig, path: &str, v: usize) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(loaded.error_at(path, "must be at least 1"))
    }
}

/// Value checks that do not need any data; runs on every load.
pub fn validate(loaded: &LoadedConfig) -> Result<(), ConfigError> {
    let c = &loaded.config;
    let d = &c.dataset;
    let s = &d.split;
    for (key, v) in [("train", s.train), ("fit", s.fit), ("test", s.test)] {
        positive(loaded, &format!("dataset.split.{key}"), v)?;
    }
    if (s.train + s.fit + s.test - 1.0).abs() > 1e-9 {
        return Err(loaded.error_at("dataset.split.test", "split fractions must sum to 1"));
    }
    nonzero(loaded, "dataset.split.detector_subset", s.detector_subset)?;
    match d.kind {
        DatasetKind::Blobs => {
            nonzero(loaded, "dataset.num_classes", d.num_classes)?;
            nonzero(loaded, "dataset.n_per_class", d.n_per_class)?;
            nonzero(loaded, "dataset.dim", d.dim)?;
            nonzero(loaded, "dataset.ood_n", d.ood_n)?;
            positive(loaded, "dataset.spread", d.spread)?;
            positive(loaded, "dataset.ood_spread", d.ood_spread)?;
            positive(loaded, "dataset.radius", d.radius)?;
            if let Some(centers) = &d.centers {
                if centers.len() != d.num_classes || centers.iter().any(|c| c.len() != d.dim) {
                    return Err(loaded.error_at(
                        "dataset.centers",
                        format!("need {} centers of dimension {}", d.num_classes, d.dim),
                    ));
                }
            }
            if let Some(far) = &d.ood_center {
                if far.len() != d.dim {
                    return Err(loaded.error_at(
                        "dataset.ood_center",
                        format!("need dimension {}", d.dim),
                    ));
                }
            }
        }
        DatasetKind::Glyphs => {
            nonzero(loaded, "dataset.n_per_class", d.n_per_class)?;
            nonzero(loaded, "dataset.ood_n", d.ood_n)?;
        }
        DatasetKind::Csv => {
            for (key, p) in [("in_path", &d.in_path), ("out_path", &d.out_path)] {
                require_file(loaded, &format!("dataset.{key}"), p.as_deref())?;
            }
        }
        DatasetKind::Idx => {
            for (key, p) in [
                ("in_images", &d.in_images),
                ("in_labels", &d.in_labels),
                ("out_images", &d.out_images),
                ("out_labels", &d.out_labels),
            ] {
                require_file(loaded, &format!("dataset.{key}"), p.as_deref())?;
            }
        }
    }

    let m = &c.model;
    positive(loaded, "model.learning_rate", m.learning_rate)?;
    nonzero(loaded, "model.batch_size", m.batch_size)?;
    if m.layers.is_none() && m.hidden.contains(&0) {
        return Err(loaded.error_at("model.hidden", "hidden widths must be positive"));
    }

    let det = &c.detector;
    nonzero(loaded, "detector.steps", det.steps)?;
    non_negative(loaded, "detector.learning_rate", det.learning_rate)?;
    nonzero(loaded, "detector.batch_size", det.batch_size)?;
    if det.preprocess {
        positive(loaded, "detector.epsilon", det.epsilon)?;
    }
    match &det.ridge {
        RidgeSetting::Named(n) if n == "auto" => {}
        RidgeSetting::Named(n) => {
            return Err(loaded.error_at(
                "detector.ridge",
                format!("expected \"auto\" or a number, got \"{n}\""),
            ))
        }
        RidgeSetting::Value(v) => non_negative(loaded, "detector.ridge", *v)?,
    }
    if let Some(w) = &det.weights {
        if w.values().any(|v| !(v.is_finite() && *v >= 0.0)) || w.values().all(|&v| v == 0.0) {
            return Err(loaded.error_at(
                "detector.weights",
                "weights must be >= 0 and not all zero",
            ));
        }
    }

    let e = &c.eval;
    positive(loaded, "eval.temperature", e.temperature)?;
    non_negative(loaded, "eval.odin_epsilon", e.odin_epsilon)?;
    nonzero(loaded, "eval.workers", e.workers)?;
    if e.steps_grid.contains(&0) {
        return Err(loaded.error_at("eval.steps_grid", "step counts must be at least 1"));
    }
    Ok(())
}

fn require_file(loaded: &LoadedConfig, key: &str, path: Option<&Path>) -> Result<(), ConfigError> {
    let Some(p) = path else {
        return Err(loaded.error_at(key, "missing path"));
    };
    let resolved = loaded.base_dir().join(p);
    if !resolved.is_file() {
        return Err(loaded.error_at(key, format!("no such file: {}", resolved.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "seed = 3\n\n[dataset]\nkind = \"blobs\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(BASE, "t.toml", &[], None).unwrap().config;
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.hidden, vec![32, 32]);
        assert_eq!(c.detector.steps, 10);
        assert_eq!(c.eval.methods.len(), 3);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse_config("[dataset]\nkind = \"blobs\"\n", "t.toml", &[], None).unwrap_err();
        assert!(err.message.contains("seed"), "{err}");
    }

    #[test]
    fn type_errors_carry_lines() {
        let text = format!("{BASE}\n[model]\nepochs = \"five\"\n");
        let err = parse_config(&text, "t.toml", &[], None).unwrap_err();
        assert_eq!(err.line, Some(7), "{err}");
    }

    #[test]
    fn value_errors_carry_lines() {
        let text = format!("{BASE}\n[detector]\nsteps = 0\n");
        let err = parse_config(&text, "t.toml", &[], None).unwrap_err();
        assert_eq!(err.to_string(), "t.toml:7: must be at least 1");
    }

    #[test]
    fn overrides_apply_and_are_named() {
        let over = vec!["detector.steps=100".to_string(), "dataset.name=foo".to_string()];
        let c = parse_config(BASE, "t.toml", &over, Some(9)).unwrap().config;
        assert_eq!((c.detector.steps, c.seed), (100, 9));
        assert_eq!(c.dataset.name.as_deref(), Some("foo"));
        let err = parse_config(BASE, "t.toml", &["detector.steps=0".into()], None).unwrap_err();
        assert_eq!(err.origin, "--set detector.steps");
    }

    #[test]
    fn missing_file_is_reported() {
        let text = "seed = 1\n[dataset]\nkind = \"csv\"\nin_path = \"/nonexistent/a.csv\"\nout_path = \"b.csv\"\n";
        let err = parse_config(text, "t.toml", &[], None).unwrap_err();
        assert_eq!(err.line, Some(4));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\n[eval]\nmethod = [\"msp\"]\n");
        assert!(parse_config(&text, "t.toml", &[], None).is_err());
    }
}
