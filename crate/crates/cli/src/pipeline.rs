//! The experiment stages behind the subcommands, as plain functions so the
//! acceptance suite can drive them without spawning processes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use m2d_core::baselines::{msp_score, odin_score, BaselineConfig};
use m2d_core::data::{
    gen_blobs, gen_glyphs, gen_ood_blob, load_csv, load_idx, split, Dataset, GlyphCorpus,
    Normalization, SplitPlan, Splits,
};
use m2d_core::detector::{
    frozen_encoder, retrain_from, DetectorBundle, EncoderStart, RetrainConfig,
};
use m2d_core::eval::{ablation_grid, evaluate, CellMeta, GridOutcome, Method};
use m2d_core::nets::{
    accuracy, train_classifier, Activation, LayerSpec, ModelSpec, Network, SurgeryPlan, Tap,
    TapRef, TrainConfig,
};
use m2d_core::{Error, Result, Tensor};

use crate::config::{DatasetKind, LoadedConfig, RunConfig};

/// Derives an independent stream seed for one pipeline stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Raw in-distribution and OOD corpora as configured, before splitting.
pub fn load_corpora(loaded: &LoadedConfig) -> Result<(Dataset, Dataset)> {
    let c = &loaded.config;
    let d = &c.dataset;
    let base = loaded.base_dir();
    match d.kind {
        DatasetKind::Blobs => {
            let centers = d.centers.clone().unwrap_or_else(|| {
                (0..d.num_classes)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / d.num_classes as f64;
                        let mut v = vec![0.0; d.dim];
                        v[0] = d.radius * a.cos();
                        if d.dim > 1 {
                            v[1] = d.radius * a.sin();
                        }
                        v
                    })
                    .collect()
            });
            let far = d
                .ood_center
                .clone()
                .unwrap_or_else(|| vec![3.0 * d.radius; d.dim]);
            let inn = gen_blobs(
                d.num_classes,
                d.n_per_class,
                &centers,
                d.spread,
                stage_seed(c.seed, "data.in"),
            )?;
            let out = gen_ood_blob(&far, d.ood_n, d.ood_spread, stage_seed(c.seed, "data.out"))?;
            Ok((inn, out))
        }
        DatasetKind::Glyphs => {
            let inn = gen_glyphs(GlyphCorpus::Strokes, d.n_per_class, stage_seed(c.seed, "data.in"))?;
            let per_class = d.ood_n.div_ceil(4);
            let out = gen_glyphs(GlyphCorpus::Shapes, per_class, stage_seed(c.seed, "data.out"))?;
            Ok((inn, out))
        }
        DatasetKind::Csv => {
            let p = |o: &Option<std::path::PathBuf>| base.join(o.as_ref().expect("validated"));
            Ok((load_csv(p(&d.in_path))?, load_csv(p(&d.out_path))?))
        }
        DatasetKind::Idx => {
            let p = |o: &Option<std::path::PathBuf>| base.join(o.as_ref().expect("validated"));
            Ok((
                load_idx(p(&d.in_images), p(&d.in_labels))?,
                load_idx(p(&d.out_images), p(&d.out_labels))?,
            ))
        }
    }
}

/// Split, normalized data ready for every stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    /// OOD evaluation set; never used for fitting.
    pub ood: Dataset,
    pub normalization: Option<Normalization>,
    pub pair: String,
}

pub fn prepare(loaded: &LoadedConfig) -> Result<Prepared> {
    let c = &loaded.config;
    let (inn, out) = load_corpora(loaded)?;
    if inn.sample_shape() != out.sample_shape() {
        return Err(Error::shape(
            "dataset",
            format!(
                "in-distribution samples {:?} vs OOD samples {:?}",
                inn.sample_shape(),
                out.sample_shape()
            ),
        ));
    }
    let pair = c.eval.dataset_pair.clone().unwrap_or_else(|| {
        let in_name = c.dataset.name.clone().unwrap_or(inn.provenance.name.clone());
        format!("{in_name}/{}", out.provenance.name)
    });
    let s = &c.dataset.split;
    let plan = SplitPlan {
        train: s.train,
        fit: s.fit,
        test: s.test,
        detector_subset: s.detector_subset,
    };
    let mut splits = split(&inn, &plan, stage_seed(c.seed, "split"))?;
    let mut ood = out.clone();
    ood.provenance.split = "test".into();
    let normalization = if c.dataset.normalize {
        let norm = Normalization::fit(&splits.train)?;
        splits.train = norm.apply(&splits.train)?;
        splits.fit = norm.apply(&splits.fit)?;
        splits.test = norm.apply(&splits.test)?;
        splits.detector_subset = norm.apply(&splits.detector_subset)?;
        ood = norm.apply(&ood)?;
        Some(norm)
    } else {
        None
    };
    Ok(Prepared {
        splits,
        ood,
        normalization,
        pair,
    })
}

/// The classifier architecture for a given sample shape.
pub fn model_spec(cfg: &RunConfig, sample_shape: &[usize], classes: usize) -> Result<ModelSpec> {
    let m = &cfg.model;
    let (layers, default_taps) = match &m.layers {
        Some(lines) => {
            let layers = lines
                .iter()
                .map(|l| l.parse::<LayerSpec>())
                .collect::<Result<Vec<_>>>()?;
            let taps = (0..layers.len().saturating_sub(1))
                .filter(|&i| layers[i].has_params())
                .enumerate()
                .map(|(k, i)| Tap::layer(format!("h{}", k + 1), i))
                .collect();
            (layers, taps)
        }
        None => {
            let mut layers = Vec::new();
            if sample_shape.len() > 1 {
                layers.push(LayerSpec::flatten());
            }
            let mut width: usize = sample_shape.iter().product();
            let mut taps = Vec::new();
            for (k, &h) in m.hidden.iter().enumerate() {
                taps.push(Tap::layer(format!("h{}", k + 1), layers.len()));
                layers.push(LayerSpec::dense(width, h, Activation::Relu));
                width = h;
            }
            layers.push(LayerSpec::dense(width, classes, Activation::Linear));
            (layers, taps)
        }
    };
    let taps = match &m.taps {
        Some(entries) => entries
            .iter()
            .map(|e| {
                let (name, at) = e.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!("tap `{e}` should be name=index or name=input"))
                })?;
                let at = at.trim();
                if at == "input" {
                    return Ok(Tap::input(name.trim()));
                }
                let i = at
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("tap `{e}` has a bad layer index")))?;
                Ok(Tap::layer(name.trim(), i))
            })
            .collect::<Result<Vec<_>>>()?,
        None => default_taps,
    };
    ModelSpec::new(sample_shape.to_vec(), layers, taps)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub classifier: Network,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn train(cfg: &RunConfig, data: &Prepared) -> Result<Trained> {
    let train = &data.splits.train;
    let spec = model_spec(cfg, train.sample_shape(), train.num_classes)?;
    let mut net = Network::build(spec, stage_seed(cfg.seed, "model.init"))?;
    let tc = TrainConfig {
        epochs: cfg.model.epochs,
        learning_rate: cfg.model.learning_rate,
        batch_size: cfg.model.batch_size,
        seed: stage_seed(cfg.seed, "model.train"),
    };
    let epoch_losses = train_classifier(&mut net, train, &tc)?;
    Ok(Trained {
        train_accuracy: accuracy(&net, train)?,
        test_accuracy: accuracy(&net, &data.splits.test)?,
        classifier: net,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertMode {
    /// Retrain a copy of the classifier's encoder.
    Retrain,
    /// Use the classifier's encoder as is.
    NoRetrain,
    /// Retrain a freshly initialized encoder of the same architecture.
    VanillaAe,
}

impl ConvertMode {
    pub fn method(self) -> Method {
        match self {
            ConvertMode::Retrain => Method::M2d,
            ConvertMode::NoRetrain => Method::M2dNoRetrain,
            ConvertMode::VanillaAe => Method::VanillaAe,
        }
    }
}

/// Number of classifier layers kept as the encoder.
pub fn sever_at(cfg: &RunConfig, classifier: &Network) -> usize {
    cfg.detector
        .sever_at
        .unwrap_or_else(|| classifier.spec().layers.len().saturating_sub(1))
}

/// Taps the detector reads; defaults to the deepest tap inside the encoder.
pub fn detector_taps(cfg: &RunConfig, classifier: &Network) -> Result<Vec<String>> {
    if let Some(t) = &cfg.detector.taps {
        return Ok(t.clone());
    }
    let keep = sever_at(cfg, classifier);
    classifier
        .spec()
        .taps
        .iter()
        .filter(|t| match t.at {
            TapRef::Input => false,
            TapRef::Layer(i) => i < keep,
        })
        .max_by_key(|t| match t.at {
            TapRef::Input => 0,
            TapRef::Layer(i) => i + 1,
        })
        .map(|t| vec![t.name.clone()])
        .ok_or_else(|| Error::InvalidConfig("the encoder exposes no taps; set detector.taps".into()))
}

#[derive(Debug, Clone)]
pub struct Converted {
    pub bundle: DetectorBundle,
    /// Empty for [`ConvertMode::NoRetrain`].
    pub loss_trace: Vec<f64>,
}

pub fn convert(
    cfg: &RunConfig,
    classifier: &Network,
    data: &Prepared,
    mode: ConvertMode,
    steps: usize,
) -> Result<Converted> {
    let det = &cfg.detector;
    let keep = sever_at(cfg, classifier);
    let plan = SurgeryPlan::mirrored(classifier.spec(), keep)?;
    let subset = &data.splits.detector_subset;
    let (encoder, loss_trace) = match mode {
        ConvertMode::NoRetrain => (frozen_encoder(classifier, keep)?, Vec::new()),
        ConvertMode::Retrain | ConvertMode::VanillaAe => {
            let rc = RetrainConfig {
                steps,
                learning_rate: det.learning_rate,
                batch_size: det.batch_size,
                sever_at: keep,
                seed: stage_seed(cfg.seed, "detector.retrain"),
                loss: det.loss(),
            };
            let start = if mode == ConvertMode::Retrain {
                EncoderStart::Pretrained
            } else {
                EncoderStart::Untrained
            };
            let out = retrain_from(classifier, &plan, &rc, &subset.features, start)?;
            (out.encoder, out.loss_trace)
        }
    };
    let taps = detector_taps(cfg, classifier)?;
    let preprocess = det.preprocess.then_some(det.epsilon);
    let bundle = DetectorBundle::fit(
        classifier.clone(),
        encoder,
        &taps,
        &subset.features,
        subset.labels_or_err()?,
        det.ridge(),
        det.weights.clone(),
        preprocess,
    )?;
    Ok(Converted { bundle, loss_trace })
}

/// Grid cells in a fixed order: methods as configured, each retraining
/// method expanded over the step grid.
pub fn grid_cells(cfg: &RunConfig, classifier: &Network, pair: &str) -> Result<Vec<CellMeta>> {
    let steps_grid = if cfg.eval.steps_grid.is_empty() {
        vec![cfg.detector.steps]
    } else {
        cfg.eval.steps_grid.clone()
    };
    let mut cells = Vec::new();
    for &method in &cfg.eval.methods {
        let taps = match method {
            Method::Msp | Method::Odin => Vec::new(),
            _ => detector_taps(cfg, classifier)?,
        };
        let step_values: Vec<Option<usize>> = if method.uses_steps() {
            steps_grid.iter().map(|&s| Some(s)).collect()
        } else {
            vec![None]
        };
        for steps in step_values {
            cells.push(CellMeta {
                dataset_pair: pair.to_string(),
                method,
                steps,
                taps: taps.clone(),
                seed: cfg.seed,
            });
        }
    }
    Ok(cells)
}

/// Evaluates every grid cell. A supplied bundle replaces the m2d cell whose
/// step count equals `detector.steps`.
pub fn evaluate_grid(
    cfg: &RunConfig,
    classifier: &Network,
    data: &Prepared,
    bundle: Option<&DetectorBundle>,
) -> Result<GridOutcome> {
    let cells = grid_cells(cfg, classifier, &data.pair)?;
    let in_x = &data.splits.test.features;
    let out_x = &data.ood.features;
    let timed = cfg.eval.timing;
    let baseline = BaselineConfig {
        temperature: cfg.eval.temperature,
        epsilon: cfg.eval.odin_epsilon,
    };
    Ok(ablation_grid(&cells, cfg.eval.workers, |cell| {
        let meta = cell.clone();
        match cell.method {
            Method::Msp => {
                let t = baseline.temperature;
                let f = |x: &Tensor| msp_score(classifier, x, t);
                evaluate(&f, in_x, out_x, meta, timed)
            }
            Method::Odin => {
                let f = |x: &Tensor| odin_score(classifier, x, &baseline);
                evaluate(&f, in_x, out_x, meta, timed)
            }
            Method::M2d if bundle.is_some() && cell.steps == Some(cfg.detector.steps) => {
                let b = bundle.expect("checked");
                let f = |x: &Tensor| b.score(x);
                evaluate(&f, in_x, out_x, meta, timed)
            }
            method => {
                let mode = match method {
                    Method::M2d => ConvertMode::Retrain,
                    Method::M2dNoRetrain => ConvertMode::NoRetrain,
                    _ => ConvertMode::VanillaAe,
                };
                let steps = cell.steps.unwrap_or(cfg.detector.steps);
                let conv = convert(cfg, classifier, data, mode, steps)?;
                let f = |x: &Tensor| conv.bundle.score(x);
                evaluate(&f, in_x, out_x, meta, timed)
            }
        }
    }))
}

/// Per step count, `(retrained encoder AUROC, untrained encoder AUROC)`.
pub fn pretraining_comparison(outcome: &GridOutcome) -> BTreeMap<usize, (f64, f64)> {
    let mut out: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for r in &outcome.reports {
        let Some(s) = r.meta.steps else { continue };
        match r.meta.method {
            Method::M2d => out.entry(s).or_insert((f64::NAN, f64::NAN)).0 = r.auroc,
            Method::VanillaAe => out.entry(s).or_insert((f64::NAN, f64::NAN)).1 = r.auroc,
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(stage_seed(1, "a"), stage_seed(1, "b"));
        assert_ne!(stage_seed(1, "a"), stage_seed(2, "a"));
        assert_eq!(stage_seed(5, "split"), stage_seed(5, "split"));
    }

    #[test]
    fn default_mlp_for_images_flattens() {
        let loaded = parse_config("seed = 1\n[dataset]\nkind = \"glyphs\"\n", "t.toml", &[], None)
            .unwrap();
        let spec = model_spec(&loaded.config, &[10, 10, 1], 4).unwrap();
        assert_eq!(spec.layers.len(), 4);
        assert_eq!(spec.tap("h1").unwrap().at, TapRef::Layer(1));
        assert_eq!(spec.output_shape(), vec![4]);
    }

    #[test]
    fn default_taps_and_sever() {
        let loaded = parse_config("seed = 1\n[dataset]\nkind = \"blobs\"\n", "t.toml", &[], None)
            .unwrap();
        let spec = model_spec(&loaded.config, &[2], 3).unwrap();
        let net = Network::build(spec, 0).unwrap();
        assert_eq!(sever_at(&loaded.config, &net), 2);
        assert_eq!(detector_taps(&loaded.config, &net).unwrap(), vec!["h2"]);
    }
}
