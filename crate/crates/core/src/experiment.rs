//! Evaluation of trained models and the modality ablation grid.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::modality::{Modality, ModalitySet};
use crate::model::{FafModel, ModelConfig};
use crate::scalar::Scalar;
use crate::train::{fit, TrainConfig, TrainHistory};

const EVAL_CHUNK: usize = 256;

/// Class probabilities for every record, in dataset order.
pub fn predict_all<T: Scalar>(model: &FafModel<T>, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let c = model.config().num_classes;
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.records.chunks(EVAL_CHUNK) {
        let refs: Vec<&FeatureRecord> = chunk.iter().collect();
        let probs = model.forward_sources(&refs)?;
        out.extend(probs.data().chunks(c).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(model: &FafModel<T>, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.label_names != model.config().label_names {
        return Err(Error::Config("dataset and model label vocabularies differ".into()));
    }
    let probs = predict_all(model, dataset)?;
    EvalReport::from_probabilities(&probs, &dataset.labels()?, &dataset.label_names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOptions {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
        }
    }
}

/// One summary line: macro precision/recall/F1 and accuracy on the test
/// split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modalities: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub gate_latched_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub epochs: usize,
    pub test_fraction: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<AblationRow>,
    pub reports: IndexMap<String, EvalReport>,
}

impl AblationReport {
    pub fn row(&self, key: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modalities == key)
    }

    /// Plain-text table with one line per modality subset.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            "Modal", "Precision", "Recall", "F1", "Accuracy"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                r.modalities, r.precision, r.recall, r.f1, r.accuracy
            ));
        }
        s
    }
}

/// Trains one model per nonempty modality subset on the same seeded split
/// with identical hyperparameters, reporting test-split metrics.
///
/// `on_model` is called after each subset finishes, with its key and
/// training history.
pub fn ablate(
    dataset: &Dataset,
    seed: u64,
    opts: &AblationOptions,
    mut on_model: impl FnMut(&str, &TrainHistory),
) -> Result<AblationReport> {
    if let Some(m) = Modality::ALL.into_iter().find(|&m| !dataset.provides(m)) {
        return Err(Error::MissingModality(m));
    }
    let (train_set, test_set) = split(dataset, opts.test_fraction, seed)?;
    let base = opts.model.clone().with_labels(dataset.label_names.clone());
    let train_cfg = TrainConfig {
        seed,
        ..opts.train.clone()
    };
    let mut rows = Vec::new();
    let mut reports = IndexMap::new();
    for subset in ModalitySet::nonempty_subsets() {
        let key = subset.key();
        let cfg = base.clone().with_modalities(subset);
        let (model, history) = fit::<f32>(&train_set, cfg, &train_cfg, |_, _| {})?;
        on_model(&key, &history);
        let report = evaluate(&model, &test_set)?;
        rows.push(AblationRow {
            modalities: key.clone(),
            precision: report.macro_avg.precision,
            recall: report.macro_avg.recall,
            f1: report.macro_avg.f1,
            accuracy: report.accuracy,
            gate_latched_epoch: history.gate_latched_epoch,
        });
        reports.insert(key, report);
    }
    Ok(AblationReport {
        seed,
        epochs: train_cfg.epochs,
        test_fraction: opts.test_fraction,
        train_size: train_set.len(),
        test_size: test_set.len(),
        rows,
        reports,
    })
}
