//! The feature-after-feature fusion network.
//!
//! Pipeline for one batch:
//!
//! 1. **align**: each enabled modality is projected to a common width
//!    `d_align` by its own linear map.
//! 2. **fuse**: the aligned vectors are stacked as the rows of a
//!    single-channel `|M| × d_align` map, face then body then text.
//! 3. **gate**: once training has latched the gate, row `m` is multiplied by
//!    the learned `logit_scale[m]`; before that the map passes unchanged.
//! 4. conv2d, squeeze, excite, scale, global max pool, softmax head.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{default_dims, default_label_names, FeatureSource};
use crate::error::{Error, Result};
use crate::layers;
use crate::modality::{Modality, ModalitySet};
use crate::rng::{stream, Stream};
use crate::scalar::{cast, Scalar};
use crate::tensor::{cast_params, ParamSet, Tensor};

pub const CONV_KERNEL: &str = "conv.kernel";
pub const SE_W1: &str = "se.w1";
pub const SE_W2: &str = "se.w2";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const LOGIT_SCALE: &str = "logit_scale";

pub fn align_weight_name(m: Modality) -> String {
    format!("align.{m}.weight")
}

pub fn align_bias_name(m: Modality) -> String {
    format!("align.{m}.bias")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub enabled_modalities: ModalitySet,
    pub input_dims: BTreeMap<Modality, usize>,
    pub d_align: usize,
    pub conv_out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub reduction_ratio: usize,
    pub num_classes: usize,
    pub label_names: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enabled_modalities: ModalitySet::all(),
            input_dims: default_dims(),
            d_align: 32,
            conv_out_channels: 16,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            pad: 1,
            reduction_ratio: 4,
            num_classes: 5,
            label_names: default_label_names(),
        }
    }
}

impl ModelConfig {
    pub fn with_modalities(mut self, mods: ModalitySet) -> Self {
        self.enabled_modalities = mods;
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.num_classes = labels.len();
        self.label_names = labels;
        self
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        self.input_dims.get(&m).copied().unwrap_or(m.default_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_align", self.d_align),
            ("conv_out_channels", self.conv_out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("reduction_ratio", self.reduction_ratio),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        layers::SeParams::<f32>::check_ratio(self.conv_out_channels, self.reduction_ratio)?;
        if self.label_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} label names for {} classes",
                self.label_names.len(),
                self.num_classes
            )));
        }
        let mut seen = self.label_names.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.label_names.len() {
            return Err(Error::Config("label names must be distinct".into()));
        }
        for m in self.enabled_modalities.iter() {
            match self.input_dims.get(&m) {
                Some(&d) if d > 0 => {}
                _ => return Err(Error::Config(format!("no input dimension for enabled modality {m}"))),
            }
        }
        let height = self.enabled_modalities.len();
        if self.kernel_h > height + 2 * self.pad || self.kernel_w > self.d_align + 2 * self.pad {
            return Err(Error::Config(format!(
                "kernel {}x{} does not fit a {}x{} fused map with pad {}",
                self.kernel_h, self.kernel_w, height, self.d_align, self.pad
            )));
        }
        Ok(())
    }

    /// Name, shape and init fan-in of every parameter.
    pub fn parameter_layout(&self) -> BTreeMap<String, (Vec<usize>, Option<usize>)> {
        let mut out = BTreeMap::new();
        for m in self.enabled_modalities.iter() {
            let d = self.input_dim(m);
            out.insert(align_weight_name(m), (vec![self.d_align, d], Some(d)));
            out.insert(align_bias_name(m), (vec![self.d_align], None));
        }
        let c = self.conv_out_channels;
        let hidden = c / self.reduction_ratio.max(1);
        out.insert(
            CONV_KERNEL.into(),
            (
                vec![c, 1, self.kernel_h, self.kernel_w],
                Some(self.kernel_h * self.kernel_w),
            ),
        );
        out.insert(SE_W1.into(), (vec![hidden, c], Some(c)));
        out.insert(SE_W2.into(), (vec![c, hidden], Some(hidden)));
        out.insert(CLASSIFIER_WEIGHT.into(), (vec![self.num_classes, c], Some(c)));
        out.insert(CLASSIFIER_BIAS.into(), (vec![self.num_classes], None));
        out.insert(LOGIT_SCALE.into(), (vec![self.enabled_modalities.len()], None));
        out
    }
}

/// Per-modality input matrices for a batch, each `[B × input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    inputs: BTreeMap<Modality, Tensor<T>>,
    size: usize,
}

impl<T: Scalar> Batch<T> {
    /// Gathers and validates inputs for every enabled modality.
    pub fn from_sources<S: FeatureSource>(sources: &[&S], config: &ModelConfig) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Input {
                message: "empty batch".into(),
                line: None,
            });
        }
        let mut inputs = BTreeMap::new();
        for m in config.enabled_modalities.iter() {
            let d = config.input_dim(m);
            let mut data = Vec::with_capacity(sources.len() * d);
            for s in sources {
                let v = s.vector(m).ok_or(Error::MissingModality(m))?;
                if v.len() != d {
                    return Err(Error::WrongLength {
                        modality: m,
                        expected: d,
                        got: v.len(),
                        line: None,
                    });
                }
                data.extend(v.iter().map(|&x| T::of(x as f64)));
            }
            inputs.insert(m, Tensor::new([sources.len(), d], data)?);
        }
        Ok(Self {
            inputs,
            size: sources.len(),
        })
    }

    pub fn from_tensors(inputs: BTreeMap<Modality, Tensor<T>>) -> Result<Self> {
        let mut size = None;
        for (m, t) in &inputs {
            let (b, _) = t.dims2("batch")?;
            if *size.get_or_insert(b) != b {
                return Err(Error::dim(
                    "batch",
                    format!("{m} has {b} rows, expected {}", size.unwrap()),
                ));
            }
        }
        let size = size.ok_or_else(|| Error::Input {
            message: "batch has no modalities".into(),
            line: None,
        })?;
        Ok(Self { inputs, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, m: Modality) -> Option<&Tensor<T>> {
        self.inputs.get(&m)
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            inputs: self.inputs.iter().map(|(m, t)| (*m, t.cast())).collect(),
            size: self.size,
        }
    }
}

/// Projects each enabled modality to `d_align`; rows in canonical order.
pub fn align<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    vars: &BTreeMap<String, Var>,
    batch: &Batch<T>,
) -> Result<Vec<Var>> {
    let mut rows = Vec::with_capacity(config.enabled_modalities.len());
    for m in config.enabled_modalities.iter() {
        let x = batch.get(m).ok_or(Error::MissingModality(m))?;
        let (_, d) = x.dims2("align")?;
        let expected = config.input_dim(m);
        if d != expected {
            return Err(Error::WrongLength {
                modality: m,
                expected,
                got: d,
                line: None,
            });
        }
        let x = g.constant(x.clone());
        let w = param(vars, &align_weight_name(m))?;
        let b = param(vars, &align_bias_name(m))?;
        rows.push(layers::linear(g, x, w, b)?);
    }
    Ok(rows)
}

/// Stacks aligned rows into a `[B × 1 × |M| × d_align]` map.
pub fn fuse<T: Scalar>(g: &mut Graph<T>, rows: &[Var]) -> Result<Var> {
    g.stack_rows(rows)
}

/// Identity while the gate is open; per-row `logit_scale` once latched.
pub fn apply_gate<T: Scalar>(g: &mut Graph<T>, fused: Var, logit_scale: Var, gate_active: bool) -> Result<Var> {
    let height = g.shape(fused).get(2).copied().unwrap_or(0);
    if g.shape(logit_scale) != [height] {
        return Err(Error::dim(
            "apply_gate",
            format!(
                "logit_scale {:?} vs fused map {:?}",
                g.shape(logit_scale),
                g.shape(fused)
            ),
        ));
    }
    if gate_active {
        g.row_scale(fused, logit_scale)
    } else {
        Ok(fused)
    }
}

fn param(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Contract(format!("parameter `{name}` not registered")))
}

/// Full pipeline up to the pre-softmax class scores `[B × num_classes]`.
pub fn logits<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    gate_active: bool,
    vars: &BTreeMap<String, Var>,
    batch: &Batch<T>,
) -> Result<Var> {
    let rows = align(g, config, vars, batch)?;
    let fused = fuse(g, &rows)?;
    let gated = apply_gate(g, fused, param(vars, LOGIT_SCALE)?, gate_active)?;
    let conv = layers::conv2d(g, gated, param(vars, CONV_KERNEL)?, config.stride, config.pad)?;
    let z = layers::se_squeeze(g, conv)?;
    let s = layers::se_excite(g, z, param(vars, SE_W1)?, param(vars, SE_W2)?, config.reduction_ratio)?;
    let scaled = layers::se_scale(g, conv, s)?;
    let pooled = layers::global_max_pool(g, scaled)?;
    layers::classifier_logits(
        g,
        pooled,
        param(vars, CLASSIFIER_WEIGHT)?,
        param(vars, CLASSIFIER_BIAS)?,
    )
}

/// Scores for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scores: IndexMap<String, f64>,
    pub predicted: String,
    pub predicted_index: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// All learnable parameters plus architecture and gate state.
#[derive(Debug, Clone, PartialEq)]
pub struct FafModel<T = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
    gate_active: bool,
}

impl<T: Scalar> FafModel<T> {
    /// Seeded initialization: weights uniform in `±sqrt(6 / fan_in)`, biases
    /// zero, `logit_scale` all ones, gate open.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut params = ParamSet::new();
        for (name, (shape, fan_in)) in config.parameter_layout() {
            let t = match fan_in {
                Some(fan) => {
                    let bound = (6.0 / fan as f64).sqrt();
                    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
                }
                None if name == LOGIT_SCALE => Tensor::full(shape, T::one()),
                None => Tensor::zeros(shape),
            };
            params.insert(name, t);
        }
        Ok(Self {
            config,
            params,
            gate_active: false,
        })
    }

    /// Every parameter (including `logit_scale`) set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .parameter_layout()
            .into_iter()
            .map(|(name, (shape, _))| (name, Tensor::zeros(shape)))
            .collect();
        Ok(Self {
            config,
            params,
            gate_active: false,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamSet<T>, gate_active: bool) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        for (name, (shape, _)) in &layout {
            match params.get(name) {
                None => return Err(Error::Config(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::dim(
                        "model",
                        format!("`{name}` has {:?}, expected {shape:?}", t.shape()),
                    ))
                }
                Some(t) if !t.all_finite() => return Err(Error::Numeric(format!("`{name}` is not finite"))),
                Some(_) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !layout.contains_key(*k)) {
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            config,
            params,
            gate_active,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(
                "set_param",
                format!("{:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn gate_active(&self) -> bool {
        self.gate_active
    }

    pub fn set_gate_active(&mut self, on: bool) {
        self.gate_active = on;
    }

    pub fn key(&self) -> String {
        self.config.enabled_modalities.key()
    }

    pub fn cast<U: Scalar>(&self) -> FafModel<U> {
        FafModel {
            config: self.config.clone(),
            params: cast_params(&self.params),
            gate_active: self.gate_active,
        }
    }

    /// Class probabilities `[B × num_classes]`.
    pub fn forward(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = g.params(&self.params);
        let z = logits(&mut g, &self.config, self.gate_active, &vars, batch)?;
        let p = g.softmax(z)?;
        Ok(g.value(p).clone())
    }

    pub fn forward_sources<S: FeatureSource>(&self, sources: &[&S]) -> Result<Tensor<T>> {
        self.forward(&Batch::from_sources(sources, &self.config)?)
    }

    pub fn predict<S: FeatureSource>(&self, source: &S) -> Result<Prediction> {
        let probs = self.forward_sources(&[source])?;
        let row: Vec<f64> = probs.data().iter().map(|&p| cast::<T, f64>(p)).collect();
        let best = argmax(&row);
        Ok(Prediction {
            scores: self
                .config
                .label_names
                .iter()
                .cloned()
                .zip(row.iter().copied())
                .collect(),
            predicted: self.config.label_names[best].clone(),
            predicted_index: best,
        })
    }
}
