//! Loss, optimizer and the training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, FeatureRecord, FeatureSource};
use crate::error::{Error, Result};
use crate::model::{self, argmax, Batch, FafModel, ModelConfig};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Relative epoch-loss drop below which the loss counts as no longer
    /// declining.
    pub decline_rel_tol: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            decline_rel_tol: 1e-3,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decline_rel_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration: {self:?}")))
        }
    }
}

/// Summed negative log-likelihood of the true classes.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (rows, classes) = probs.dims2("cross_entropy")?;
    if labels.len() != rows {
        return Err(Error::dim(
            "cross_entropy",
            format!("{rows} rows vs {} labels", labels.len()),
        ));
    }
    let mut loss = T::zero();
    for (row, &label) in probs.data().chunks(classes).zip(labels) {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let total: T = row.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-5) || row.iter().any(|&p| p < T::zero()) {
            return Err(Error::Input {
                message: format!("prediction row is not a distribution (sum {total})"),
                line: None,
            });
        }
        if row[label] <= T::zero() {
            return Err(Error::Numeric("zero probability on the true class".into()));
        }
        loss = loss - row[label].ln();
    }
    Ok(loss)
}

/// Hyperparameters plus first/second moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::dim(
                "adam_step",
                format!("`{name}`: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        for buf in [&state.m, &state.v] {
            if let Some(b) = buf.get(name) {
                if b.shape() != p.shape() {
                    return Err(Error::dim(
                        "adam_step",
                        format!("`{name}`: moment {:?} vs param {:?}", b.shape(), p.shape()),
                    ));
                }
            }
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let correct1 = T::of(1.0 - state.beta1.powi(t));
    let correct2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(state.eps));

    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / correct1;
            let v_hat = *vi / correct2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// True while fewer than two epochs are recorded or the last epoch cut the
/// loss by more than `rel_tol` relative to the one before.
pub fn loss_declining(history: &[f64], rel_tol: f64) -> bool {
    match history {
        [.., prev, last] => (prev - last) / prev.max(1e-12) > rel_tol,
        _ => true,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Per-sample mean loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Training accuracy of each epoch, from the pre-update predictions.
    pub epoch_accuracy: Vec<f64>,
    /// Epoch at whose end the gate latched.
    pub gate_latched_epoch: Option<usize>,
}

fn check_records(dataset: &Dataset, config: &ModelConfig) -> Result<Vec<usize>> {
    if dataset.label_names != config.label_names {
        return Err(Error::Config(format!(
            "dataset labels {:?} differ from model labels {:?}",
            dataset.label_names, config.label_names
        )));
    }
    for (i, rec) in dataset.records.iter().enumerate() {
        for m in config.enabled_modalities.iter() {
            let v = rec.vector(m).ok_or_else(|| Error::Input {
                message: format!("record `{}` lacks modality {m}", rec.id),
                line: Some(i + 1),
            })?;
            if v.len() != config.input_dim(m) {
                return Err(Error::WrongLength {
                    modality: m,
                    expected: config.input_dim(m),
                    got: v.len(),
                    line: Some(i + 1),
                });
            }
        }
    }
    dataset.labels()
}

/// Trains in `f32`. See [`fit`].
pub fn train(dataset: &Dataset, model_config: ModelConfig, cfg: &TrainConfig) -> Result<(FafModel<f32>, TrainHistory)> {
    fit(dataset, model_config, cfg, |_, _| {})
}

/// Seeded training loop.
///
/// Each epoch shuffles the records (when enabled), runs minibatch forward,
/// summed softmax cross-entropy, backward and one Adam step per batch; the
/// last partial batch is kept. At the end of every epoch the loss-decline
/// detector runs; the first time it reports no decline the gate latches on
/// for the rest of the run. `on_epoch` receives the epoch index and history
/// so far.
pub fn fit<T: Scalar>(
    dataset: &Dataset,
    model_config: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainHistory),
) -> Result<(FafModel<T>, TrainHistory)> {
    cfg.validate()?;
    model_config.validate()?;
    let labels = check_records(dataset, &model_config)?;
    let mut model = FafModel::<T>::init(model_config, cfg.seed)?;
    let mut adam = AdamState::from_config(cfg);
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut history = TrainHistory::default();
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let records: Vec<&FeatureRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = Batch::<T>::from_sources(&records, model.config())?;

            let mut g = Graph::new();
            let vars = g.params(model.params());
            let z = model::logits(&mut g, model.config(), model.gate_active(), &vars, &batch)?;
            let loss = g.softmax_cross_entropy(z, &batch_labels)?;
            total_loss += g.value(loss).item()?.as_f64();
            let classes = model.config().num_classes;
            correct += g
                .value(z)
                .data()
                .chunks(classes)
                .zip(&batch_labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let grads = g.backward(loss)?.params();
            adam_step(model.params_mut(), &grads, &mut adam)?;
        }
        history.epoch_loss.push(total_loss / n as f64);
        history.epoch_accuracy.push(correct as f64 / n as f64);
        if !model.gate_active() && !loss_declining(&history.epoch_loss, cfg.decline_rel_tol) {
            model.set_gate_active(true);
            history.gate_latched_epoch = Some(epoch);
        }
        on_epoch(epoch, &history);
    }
    Ok((model, history))
}
