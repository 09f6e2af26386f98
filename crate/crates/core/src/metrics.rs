//! Confusion-matrix metrics for binary classification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Scalar, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// Adds one prediction.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Counts predictions `sigmoid(logit) >= threshold` against 0/1 labels.
pub fn confusion<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>, threshold: f64) -> Result<ConfusionMatrix> {
    if logits.len() != labels.len() || logits.shape()[0] != labels.shape()[0] {
        return Err(Error::shape(
            "confusion",
            "batch",
            format!("logits {:?} vs labels {:?}", logits.shape(), labels.shape()),
        ));
    }
    let mut m = ConfusionMatrix::default();
    for (&z, &t) in logits.data().iter().zip(labels.data()) {
        let actual = match t.as_f64() {
            v if v == 1.0 => true,
            v if v == 0.0 => false,
            v => return Err(Error::invalid(format!("labels must be 0 or 1, got {v}"))),
        };
        m.record(sigmoid_scalar(z).as_f64() >= threshold, actual);
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; undefined when both are zero.
pub fn f1(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

/// Metrics over one confusion matrix. `None` marks a ratio whose
/// denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
    pub threshold: f64,
}

pub fn compute_metrics(matrix: ConfusionMatrix, threshold: f64) -> Result<EvalReport> {
    let n = matrix.total();
    if n == 0 {
        return Err(Error::EmptyData("confusion matrix has no samples".into()));
    }
    let ConfusionMatrix { tp, fp, tn, fn_ } = matrix;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let nf = n as f64;
    let observed = (tp + tn) as f64 / nf;
    let chance = ((tp + fp) as f64 * (tp + fn_) as f64 + (fn_ + tn) as f64 * (fp + tn) as f64) / (nf * nf);
    let kappa = (chance < 1.0).then(|| (observed - chance) / (1.0 - chance));
    Ok(EvalReport {
        matrix,
        accuracy: observed,
        precision,
        recall,
        f1: precision.zip(recall).and_then(|(p, r)| f1(p, r)),
        kappa,
        threshold,
    })
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Single-line JSON record; undefined metrics are `null`.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report fields are plain numbers")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.matrix;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "precision  {}", fmt4(self.precision))?;
        writeln!(f, "recall     {}", fmt4(self.recall))?;
        writeln!(f, "f1         {}", fmt4(self.f1))?;
        writeln!(f, "kappa      {}", fmt4(self.kappa))?;
        writeln!(f, "threshold  {}", self.threshold)?;
        write!(f, "tp {}  fp {}  tn {}  fn {}", m.tp, m.fp, m.tn, m.fn_)
    }
}
