use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Reference labels for a set of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthFile", into = "GroundTruthFile")]
pub struct GroundTruth {
    universe: Vec<String>,
    universe_set: BTreeSet<String>,
    per_report: BTreeMap<String, BTreeSet<String>>,
}

/// `{"universe": [...], "reports": {"id": ["ref", ...]}}`
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GroundTruthFile {
    universe: Vec<String>,
    reports: BTreeMap<String, Vec<String>>,
}

impl TryFrom<GroundTruthFile> for GroundTruth {
    type Error = EvalError;

    fn try_from(f: GroundTruthFile) -> Result<Self, EvalError> {
        let reports = f
            .reports
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        GroundTruth::new(f.universe, reports)
    }
}

impl From<GroundTruth> for GroundTruthFile {
    fn from(g: GroundTruth) -> Self {
        GroundTruthFile {
            universe: g.universe,
            reports: g
                .per_report
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }
}

impl GroundTruth {
    pub fn new(
        universe: Vec<String>,
        per_report: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, EvalError> {
        if universe.is_empty() {
            return Err(EvalError::InvalidGroundTruth(
                "label universe is empty".into(),
            ));
        }
        let mut universe_set = BTreeSet::new();
        for label in &universe {
            if !universe_set.insert(label.clone()) {
                return Err(EvalError::InvalidGroundTruth(format!(
                    "duplicate label {label:?} in universe"
                )));
            }
        }
        for (id, refs) in &per_report {
            if let Some(bad) = refs.iter().find(|r| !universe_set.contains(*r)) {
                return Err(EvalError::InvalidGroundTruth(format!(
                    "report {id:?} references {bad:?}, which is not in the universe"
                )));
            }
        }
        Ok(Self {
            universe,
            universe_set,
            per_report,
        })
    }

    pub fn universe(&self) -> &[String] {
        &self.universe
    }

    pub fn universe_set(&self) -> &BTreeSet<String> {
        &self.universe_set
    }

    pub fn reports(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.per_report
    }
}

/// Label-level outcome counts for one report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    /// Includes `overflow_fp`.
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Predictions outside the universe.
    pub overflow_fp: usize,
}

impl Confusion {
    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self.overflow_fp += o.overflow_fp;
    }
}

/// Counts hits, false positives, omissions and correct rejections.
///
/// Predictions outside `universe` count as false positives; the four counts
/// therefore sum to `|universe| + overflow_fp`.
pub fn confusion(
    gt: &BTreeSet<String>,
    pred: &BTreeSet<String>,
    universe: &BTreeSet<String>,
) -> Confusion {
    let tp = pred.intersection(gt).count();
    let overflow_fp = pred.iter().filter(|p| !universe.contains(*p)).count();
    let fp = pred.len() - tp;
    let fn_ = gt.len() - tp;
    let tn = universe.len() - tp - (fp - overflow_fp) - fn_;
    Confusion {
        tp,
        fp,
        fn_,
        tn,
        overflow_fp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Per-report precision/recall/F1, then arithmetic mean.
    #[default]
    Sample,
    /// Pooled counts over all reports.
    Micro,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Sample => "sample",
            Averaging::Micro => "micro",
        })
    }
}

impl std::str::FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sample" | "samples" => Ok(Averaging::Sample),
            "micro" => Ok(Averaging::Micro),
            other => Err(format!(
                "unknown averaging mode {other:?} (expected sample|micro)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceMetrics {
    pub hamming_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub n_reports: usize,
    pub universe_size: usize,
    /// Distinct out-of-universe labels predicted across the run.
    #[serde(default)]
    pub overflow_labels: usize,
}

/// Precision, recall and F1 of a single report.
///
/// Both sets empty scores 1/1/1; any other undefined ratio scores 0.
pub fn report_scores(c: &Confusion) -> (f64, f64, f64) {
    let predicted = c.tp + c.fp;
    let relevant = c.tp + c.fn_;
    if predicted == 0 && relevant == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if predicted == 0 {
        0.0
    } else {
        c.tp as f64 / predicted as f64
    };
    let r = if relevant == 0 {
        0.0
    } else {
        c.tp as f64 / relevant as f64
    };
    (p, r, harmonic(p, r))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Scores predicted label sets against ground truth.
///
/// Hamming loss counts false positives and omissions over every label slot;
/// labels predicted outside the universe widen the slot count so the loss
/// stays within [0, 1].
pub fn compute_metrics(
    gt: &GroundTruth,
    preds: &BTreeMap<String, BTreeSet<String>>,
    averaging: Averaging,
) -> Result<ComplianceMetrics, EvalError> {
    let missing: Vec<String> = gt
        .per_report
        .keys()
        .filter(|k| !preds.contains_key(*k))
        .cloned()
        .collect();
    let extra: Vec<String> = preds
        .keys()
        .filter(|k| !gt.per_report.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::KeyMismatch { missing, extra });
    }
    let n = gt.per_report.len();
    if n == 0 {
        return Err(EvalError::EmptyInput);
    }
    let overflow: BTreeSet<&String> = preds
        .values()
        .flatten()
        .filter(|p| !gt.universe_set.contains(*p))
        .collect();
    let slots = (gt.universe.len() + overflow.len()) as f64;

    let mut total = Confusion::default();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for (id, truth) in &gt.per_report {
        let c = confusion(truth, &preds[id], &gt.universe_set);
        let (p, r, f) = report_scores(&c);
        sp += p;
        sr += r;
        sf += f;
        total.add(&c);
    }
    let hamming_loss = (total.fp + total.fn_) as f64 / (n as f64 * slots);
    let (precision, recall, f1) = match averaging {
        Averaging::Sample => (sp / n as f64, sr / n as f64, sf / n as f64),
        Averaging::Micro => {
            let p = ratio_or(total.tp, total.tp + total.fp, total.fn_ == 0);
            let r = ratio_or(total.tp, total.tp + total.fn_, total.fp == 0);
            (p, r, harmonic(p, r))
        }
    };
    Ok(ComplianceMetrics {
        hamming_loss,
        precision,
        recall,
        f1,
        averaging,
        n_reports: n,
        universe_size: gt.universe.len(),
        overflow_labels: overflow.len(),
    })
}

fn ratio_or(num: usize, den: usize, perfect_if_empty: bool) -> f64 {
    if den == 0 {
        if perfect_if_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}
