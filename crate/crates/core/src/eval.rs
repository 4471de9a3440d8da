//! Threshold-free and threshold-based detection metrics, per-cell reports
//! and the ablation table built from them.
//!
//! Scores are "higher means more in-distribution". Both metrics are computed
//! from integer counts so they agree exactly with brute-force pair and
//! threshold enumeration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How detection accuracy is defined; recorded in every report.
pub const DETECTION_ACCURACY_DEFINITION: &str =
    "max over thresholds of 0.5*TPR + 0.5*TNR (equal class priors); in-distribution iff score > threshold";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl ScoredSet {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        let s = Self {
            in_scores,
            out_scores,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_scores.is_empty() || self.out_scores.is_empty() {
            return Err(Error::EmptyData(format!(
                "scored set has {} in and {} out scores",
                self.in_scores.len(),
                self.out_scores.len()
            )));
        }
        if self.in_scores.iter().chain(&self.out_scores).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detection scores".into()));
        }
        Ok(())
    }

    /// Pooled scores sorted ascending, each tagged `true` when in-distribution.
    fn pooled(&self) -> Vec<(f64, bool)> {
        let mut all: Vec<(f64, bool)> = self
            .in_scores
            .iter()
            .map(|&v| (v, true))
            .chain(self.out_scores.iter().map(|&v| (v, false)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all
    }
}

/// Runs of equal values in a sorted pool as `(value, in count, out count)`.
fn tie_groups(pool: &[(f64, bool)]) -> Vec<(f64, u64, u64)> {
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for &(v, is_in) in pool {
        match groups.last_mut() {
            Some(last) if last.0 == v => {}
            _ => groups.push((v, 0, 0)),
        }
        let last = groups.last_mut().expect("just pushed");
        if is_in {
            last.1 += 1;
        } else {
            last.2 += 1;
        }
    }
    groups
}

/// Probability that a random in-score beats a random out-score, ties at
/// half credit, via the Mann–Whitney rank sum.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    s.validate()?;
    let n_in = s.in_scores.len() as u64;
    let n_out = s.out_scores.len() as u64;
    // Twice the in-sample midrank sum stays integral.
    let mut twice_rank_sum: u128 = 0;
    let mut before: u64 = 0;
    for (_, a, b) in tie_groups(&s.pooled()) {
        let size = a + b;
        // 1-based ranks before+1 ..= before+size, midrank = before + (size+1)/2
        twice_rank_sum += u128::from(a) * u128::from(2 * before + size + 1);
        before += size;
    }
    let twice_u = twice_rank_sum - u128::from(n_in) * u128::from(n_in + 1);
    Ok(twice_u as f64 / (2 * n_in * n_out) as f64)
}

/// `½·TPR + ½·TNR` from raw counts.
pub fn balanced_accuracy(true_pos: u64, n_in: u64, true_neg: u64, n_out: u64) -> f64 {
    (true_pos * n_out + true_neg * n_in) as f64 / (2 * n_in * n_out) as f64
}

/// Best balanced accuracy over thresholds and the smallest threshold
/// achieving it. Candidates are `-inf`, midpoints between adjacent distinct
/// scores, and `+inf`.
pub fn detection_accuracy(s: &ScoredSet) -> Result<(f64, f64)> {
    s.validate()?;
    let n_in = s.in_scores.len() as u64;
    let n_out = s.out_scores.len() as u64;
    let groups = tie_groups(&s.pooled());
    let (mut tp, mut tn) = (n_in, 0u64);
    let numerator = |tp: u64, tn: u64| tp * n_out + tn * n_in;
    let mut best = (numerator(tp, tn), (tp, tn), f64::NEG_INFINITY);
    for (k, &(v, a, b)) in groups.iter().enumerate() {
        tp -= a;
        tn += b;
        let threshold = match groups.get(k + 1) {
            Some(&(next, _, _)) => v / 2.0 + next / 2.0,
            None => f64::INFINITY,
        };
        let score = numerator(tp, tn);
        if score > best.0 {
            best = (score, (tp, tn), threshold);
        }
    }
    let (_, (tp, tn), threshold) = best;
    Ok((balanced_accuracy(tp, n_in, tn, n_out), threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "m2d")]
    M2d,
    #[serde(rename = "m2d-no-retrain")]
    M2dNoRetrain,
    #[serde(rename = "vanilla-ae")]
    VanillaAe,
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "odin")]
    Odin,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::M2d,
        Method::M2dNoRetrain,
        Method::VanillaAe,
        Method::Msp,
        Method::Odin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::M2d => "m2d",
            Method::M2dNoRetrain => "m2d-no-retrain",
            Method::VanillaAe => "vanilla-ae",
            Method::Msp => "msp",
            Method::Odin => "odin",
        }
    }

    /// Whether the method depends on the retraining step count.
    pub fn uses_steps(self) -> bool {
        matches!(self, Method::M2d | Method::VanillaAe)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown method `{s}` (expected one of m2d, m2d-no-retrain, vanilla-ae, msp, odin)"
                ))
            })
    }
}

/// Identifies one evaluation cell; enough to re-run it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellMeta {
    pub dataset_pair: String,
    pub method: Method,
    /// Retraining steps; `None` for methods that do not retrain.
    pub steps: Option<usize>,
    pub taps: Vec<String>,
    pub seed: u64,
}

impl CellMeta {
    /// Column heading in the ablation table.
    pub fn column_label(&self) -> String {
        let k = self.taps.len().max(1);
        let s = self.steps.unwrap_or(0);
        match self.method {
            Method::M2d => format!("{k} Layer, {s} step"),
            Method::M2dNoRetrain => format!("{k} Layer Mahalanobis"),
            Method::VanillaAe => format!("Vanilla AE {s} steps"),
            Method::Msp => "Tau-Softmax".into(),
            Method::Odin => "ODIN".into(),
        }
    }
}

fn threshold_as_json<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub meta: CellMeta,
    pub auroc: f64,
    pub detection_accuracy: f64,
    #[serde(serialize_with = "threshold_as_json")]
    pub threshold: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// Zero unless timing was requested, so reports stay reproducible.
    pub wall_ms: u64,
    pub detection_accuracy_definition: &'static str,
}

impl EvalReport {
    pub fn from_scores(meta: CellMeta, scores: &ScoredSet, wall_ms: u64) -> Result<Self> {
        let auc = auroc(scores)?;
        let (acc, threshold) = detection_accuracy(scores)?;
        Ok(Self {
            meta,
            auroc: auc,
            detection_accuracy: acc,
            threshold,
            n_in: scores.in_scores.len(),
            n_out: scores.out_scores.len(),
            wall_ms,
            detection_accuracy_definition: DETECTION_ACCURACY_DEFINITION,
        })
    }
}

/// Anything that maps a batch of inputs to one confidence per row.
pub trait Scorer {
    fn score(&self, x: &Tensor) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(&Tensor) -> Result<Vec<f64>>,
{
    fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        self(x)
    }
}

/// Scores both test sets and computes the metrics.
pub fn evaluate(
    scorer: &dyn Scorer,
    in_data: &Tensor,
    out_data: &Tensor,
    meta: CellMeta,
    timed: bool,
) -> Result<EvalReport> {
    let start = Instant::now();
    let scores = ScoredSet::new(scorer.score(in_data)?, scorer.score(out_data)?)?;
    let wall_ms = if timed {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    EvalReport::from_scores(meta, &scores, wall_ms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub meta: CellMeta,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridOutcome {
    /// Successful cells, in input order.
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
}

/// Evaluates every cell with `run`, spreading cells over up to `workers`
/// threads. Output order follows `cells`; a failing cell is recorded and the
/// rest still run.
pub fn ablation_grid<F>(cells: &[CellMeta], workers: usize, run: F) -> GridOutcome
where
    F: Fn(&CellMeta) -> Result<EvalReport> + Sync,
{
    let slots: Vec<Mutex<Option<Result<EvalReport>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, cells.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let result = run(cell);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    let mut out = GridOutcome::default();
    for (cell, slot) in cells.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every cell ran") {
            Ok(r) => out.reports.push(r),
            Err(e) => out.failures.push(CellFailure {
                meta: cell.clone(),
                error: e.to_string(),
            }),
        }
    }
    out
}

/// Column order of the long-format report CSV.
pub const REPORT_COLUMNS: [&str; 9] = [
    "dataset_pair",
    "method",
    "steps",
    "taps",
    "auroc",
    "det_acc",
    "threshold",
    "seed",
    "wall_ms",
];

/// One row per report, columns as in [`REPORT_COLUMNS`].
pub fn reports_to_csv(reports: &[EvalReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.meta.dataset_pair.clone(),
            r.meta.method.to_string(),
            r.meta.steps.map(|s| s.to_string()).unwrap_or_default(),
            r.meta.taps.join("+"),
            r.auroc.to_string(),
            r.detection_accuracy.to_string(),
            r.threshold.to_string(),
            r.meta.seed.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn reports_to_json(reports: &[EvalReport]) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(reports)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Wide table: one row per dataset pair, one column per configuration, cells
/// `AUROC/DetAcc` in percent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: BTreeMap<(String, String), String>,
}

impl AblationTable {
    /// Rows and columns keep first-appearance order across reports, then
    /// failures.
    pub fn from_outcome(outcome: &GridOutcome) -> Self {
        let mut t = Self::default();
        let mut note = |meta: &CellMeta, text: String| {
            let col = meta.column_label();
            if !t.rows.contains(&meta.dataset_pair) {
                t.rows.push(meta.dataset_pair.clone());
            }
            if !t.columns.contains(&col) {
                t.columns.push(col.clone());
            }
            t.cells.insert((meta.dataset_pair.clone(), col), text);
        };
        for r in &outcome.reports {
            note(
                &r.meta,
                format!("{:.2}/{:.2}", 100.0 * r.auroc, 100.0 * r.detection_accuracy),
            );
        }
        for f in &outcome.failures {
            note(&f.meta, "FAILED".into());
        }
        t
    }

    pub fn get(&self, row: &str, column: &str) -> Option<&str> {
        self.cells
            .get(&(row.to_string(), column.to_string()))
            .map(String::as_str)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["In / Out".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.clone()];
            for col in &self.columns {
                rec.push(self.get(row, col).unwrap_or("").to_string());
            }
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(a: &[f64], b: &[f64]) -> ScoredSet {
        ScoredSet::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn auroc_reference_cases() {
        assert_eq!(auroc(&set(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.0, 1.0], &[2.0, 3.0])).unwrap(), 0.0);
        assert_eq!(auroc(&set(&[1.0, 3.0], &[2.0])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[1.0; 4], &[1.0; 3])).unwrap(), 0.5);
        assert!(auroc(&ScoredSet {
            in_scores: vec![],
            out_scores: vec![1.0]
        })
        .is_err());
    }

    #[test]
    fn detection_accuracy_reference_cases() {
        assert_eq!(detection_accuracy(&set(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), (1.0, 1.5));
        let (acc, t) = detection_accuracy(&set(&[1.0, 3.0], &[2.0])).unwrap();
        assert_eq!(acc, 0.75);
        assert!(t > 2.0 && t < 3.0);
        let (acc, t) = detection_accuracy(&set(&[5.0, 5.0], &[5.0])).unwrap();
        assert_eq!((acc, t), (0.5, f64::NEG_INFINITY));
    }

    #[test]
    fn constant_scorer() {
        let scorer = |x: &Tensor| Ok(vec![0.0; x.rows()]);
        let meta = CellMeta {
            dataset_pair: "a/b".into(),
            method: Method::Msp,
            steps: None,
            taps: vec![],
            seed: 0,
        };
        let r = evaluate(&scorer, &Tensor::zeros(&[3, 1]), &Tensor::zeros(&[2, 1]), meta, false)
            .unwrap();
        assert_eq!((r.auroc, r.detection_accuracy, r.wall_ms), (0.5, 0.5, 0));
    }

    fn meta(pair: &str, method: Method, steps: Option<usize>) -> CellMeta {
        CellMeta {
            dataset_pair: pair.into(),
            method,
            steps,
            taps: vec!["h1".into()],
            seed: 1,
        }
    }

    #[test]
    fn grid_keeps_order_and_records_failures() {
        let cells = vec![
            meta("p", Method::M2d, Some(5)),
            meta("p", Method::M2d, Some(10)),
            meta("q", Method::M2d, Some(5)),
            meta("q", Method::M2d, Some(10)),
        ];
        let outcome = ablation_grid(&cells, 3, |m| {
            if m.dataset_pair == "q" && m.steps == Some(10) {
                return Err(Error::InvalidConfig("boom".into()));
            }
            let s = m.steps.unwrap() as f64;
            EvalReport::from_scores(m.clone(), &set(&[s, 1.0], &[0.0]), 0)
        });
        assert_eq!(outcome.reports.len(), 3);
        assert_eq!(outcome.failures.len(), 1);
        let t = AblationTable::from_outcome(&outcome);
        assert_eq!(t.rows, vec!["p", "q"]);
        assert_eq!(t.columns, vec!["1 Layer, 5 step", "1 Layer, 10 step"]);
        assert_eq!(t.get("q", "1 Layer, 10 step"), Some("FAILED"));
        assert_eq!(t.get("p", "1 Layer, 5 step"), Some("100.00/100.00"));
        assert!(ablation_grid(&[], 4, |_| unreachable!()).reports.is_empty());
    }

    #[test]
    fn csv_and_json_layout() {
        let r = EvalReport::from_scores(meta("in/out", Method::Odin, None), &set(&[1.0], &[0.0]), 0)
            .unwrap();
        let csv = String::from_utf8(reports_to_csv(&[r.clone()]).unwrap()).unwrap();
        assert_eq!(
            csv,
            "dataset_pair,method,steps,taps,auroc,det_acc,threshold,seed,wall_ms\n\
             in/out,odin,,h1,1,1,0.5,1,0\n"
        );
        let json: serde_json::Value = serde_json::from_slice(&reports_to_json(&[r]).unwrap()).unwrap();
        assert_eq!(json[0]["method"], "odin");
        assert_eq!(json[0]["threshold"], 0.5);
        assert!(json[0]["detection_accuracy_definition"].as_str().unwrap().contains("TPR"));
    }

    #[test]
    fn infinite_threshold_serializes_as_text() {
        let r = EvalReport::from_scores(meta("x", Method::Msp, None), &set(&[0.0], &[0.0]), 0)
            .unwrap();
        let json: serde_json::Value = serde_json::from_slice(&reports_to_json(&[r]).unwrap()).unwrap();
        assert_eq!(json[0]["threshold"], "-inf");
    }

    #[test]
    fn column_labels() {
        let mut m = meta("p", Method::M2dNoRetrain, None);
        assert_eq!(m.column_label(), "1 Layer Mahalanobis");
        m.method = Method::VanillaAe;
        m.steps = Some(10);
        assert_eq!(m.column_label(), "Vanilla AE 10 steps");
        assert_eq!("odin".parse::<Method>().unwrap(), Method::Odin);
        assert!("nope".parse::<Method>().is_err());
    }
}
