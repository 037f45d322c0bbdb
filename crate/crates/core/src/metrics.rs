//! Classification metrics: confusion matrix, one-vs-rest precision, recall
//! and F1, accuracy, and per-class ROC curves with AUC.
//!
//! Empty classes never produce NaN: a 0/0 ratio is reported as 0 and the
//! class is flagged `degenerate`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::dim("confusion", "counts must be a nonempty square grid"));
        }
        let total = counts.iter().flatten().sum();
        Ok(Self { counts, total })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// `(TP, FP, FN, TN)` for class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        let tn = self.total - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(
            "confusion",
            format!("{} truths vs {} predictions", y_true.len(), y_pred.len()),
        ));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: t.max(p),
                classes: num_classes,
            });
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest `(TP + TN) / N`.
    pub binary_accuracy: f64,
    pub support: u64,
    /// Some ratio was 0/0 and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro-averaged precision, recall and F1 plus multiclass
/// accuracy `trace / N`.
pub fn prf_accuracy(cm: &ConfusionMatrix) -> Result<PrfSummary> {
    if cm.total == 0 {
        return Err(Error::Input {
            message: "confusion matrix is empty".into(),
            line: None,
        });
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|c| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
            let mut degenerate = false;
            let precision = ratio(tp, tp + fp, &mut degenerate);
            let recall = ratio(tp, tp + fn_, &mut degenerate);
            let f1 = ratio(2 * tp, 2 * tp + fn_ + fp, &mut degenerate);
            ClassMetrics {
                precision,
                recall,
                f1,
                binary_accuracy: (tp + tn) as f64 / cm.total as f64,
                support: tp + fn_,
                degenerate,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    Ok(PrfSummary {
        per_class,
        macro_avg,
        accuracy: cm.trace() as f64 / cm.total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(1, 1)` down to `(0, 0)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC for `class`, sweeping a threshold through every distinct
/// score (equal scores form one step). AUC is the trapezoidal area,
/// computed in integer arithmetic so it equals the tie-adjusted
/// Mann–Whitney statistic exactly.
pub fn roc_auc(scores: &[f64], y_true: &[usize], class: usize) -> Result<RocCurve> {
    if scores.len() != y_true.len() {
        return Err(Error::dim(
            "roc_auc",
            format!("{} scores vs {} labels", scores.len(), y_true.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("roc_auc: non-finite score".into()));
    }
    let pos = y_true.iter().filter(|&&y| y == class).count() as u64;
    let neg = y_true.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateRoc { class });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Walk thresholds from high to low, collecting cumulative (FP, TP).
    let mut steps = vec![(0u64, 0u64)];
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if y_true[idx[i]] == class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((fp, tp));
    }
    // Twice the area in units of 1/(P·N).
    let twice_area: u64 = steps.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let auc = twice_area as f64 / (2 * pos * neg) as f64;

    let mut points = vec![(1.0, 1.0)];
    points.extend(
        steps
            .iter()
            .rev()
            .map(|&(f, t)| (f as f64 / neg as f64, t as f64 / pos as f64)),
    );
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
    /// Per class; `None` when the class has no positives or no negatives.
    pub roc: Vec<Option<Vec<(f64, f64)>>>,
    pub auc: Vec<Option<f64>>,
}

impl EvalReport {
    /// Builds a report from per-sample probability rows.
    pub fn from_probabilities(probs: &[Vec<f64>], y_true: &[usize], label_names: &[String]) -> Result<Self> {
        let c = label_names.len();
        if probs.len() != y_true.len() || probs.iter().any(|r| r.len() != c) {
            return Err(Error::dim("eval", "probability rows do not match labels/classes"));
        }
        let y_pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        let cm = confusion(y_true, &y_pred, c)?;
        let prf = prf_accuracy(&cm)?;
        let mut roc = Vec::with_capacity(c);
        let mut auc = Vec::with_capacity(c);
        for k in 0..c {
            let scores: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            match roc_auc(&scores, y_true, k) {
                Ok(curve) => {
                    roc.push(Some(curve.points));
                    auc.push(Some(curve.auc));
                }
                Err(Error::DegenerateRoc { .. }) => {
                    roc.push(None);
                    auc.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            label_names: label_names.to_vec(),
            confusion: cm,
            per_class: prf.per_class,
            macro_avg: prf.macro_avg,
            accuracy: prf.accuracy,
            roc,
            auc,
        })
    }

    /// Structural invariants: counts add up, accuracy and recall agree with
    /// the confusion matrix, AUCs lie in `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        let c = self.label_names.len();
        let cm = &self.confusion;
        let bad = |msg: &str| {
            Err(Error::Input {
                message: format!("invalid report: {msg}"),
                line: None,
            })
        };
        if cm.num_classes() != c || self.per_class.len() != c || self.roc.len() != c || self.auc.len() != c {
            return bad("class counts disagree");
        }
        if cm.counts.iter().any(|r| r.len() != c) || cm.counts.iter().flatten().sum::<u64>() != cm.total {
            return bad("confusion total");
        }
        if cm.total == 0 || (self.accuracy - cm.trace() as f64 / cm.total as f64).abs() > 1e-12 {
            return bad("accuracy");
        }
        for (k, m) in self.per_class.iter().enumerate() {
            let rs = cm.row_sum(k);
            if rs > 0 && (m.recall - cm.counts[k][k] as f64 / rs as f64).abs() > 1e-12 {
                return bad("recall");
            }
        }
        if self.auc.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("auc range");
        }
        Ok(())
    }
}
