//! Differentiable building blocks of the fusion network.
//!
//! Each function appends nodes to a [`Graph`] and returns the output
//! variable. Parameter structs carry tensors plus the hyperparameters that
//! constrain their shapes; [`SeParams::register`] and
//! [`ClassifierParams::register`] put them on a graph.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = x Wᵀ + b` for `x: [B×in]`, `W: [out×in]`, `b: [out]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (_, d_in) = g.value(x).dims2("linear")?;
    let (d_out, w_in) = g.value(weight).dims2("linear")?;
    if d_in != w_in || g.shape(bias) != [d_out] {
        return Err(Error::dim(
            "linear",
            format!("x {:?}, W {:?}, b {:?}", g.shape(x), g.shape(weight), g.shape(bias)),
        ));
    }
    let wt = g.transpose(weight)?;
    let y = g.matmul(x, wt)?;
    g.add_row_bias(y, bias)
}

/// Bias-free `y = x Wᵀ`.
fn project<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var) -> Result<Var> {
    let wt = g.transpose(weight)?;
    g.matmul(x, wt)
}

/// Cross-correlation with zero padding; see [`Graph::conv2d`].
pub fn conv2d<T: Scalar>(g: &mut Graph<T>, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv2d(x, kernel, stride, pad)
}

/// Squeeze: per-channel spatial mean, `[B×c×H×W] -> [B×c]`.
pub fn se_squeeze<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.spatial_mean(x)
}

/// Weights of the squeeze-and-excitation bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams<T> {
    /// `[(c/r) × c]`
    pub w1: Tensor<T>,
    /// `[c × (c/r)]`
    pub w2: Tensor<T>,
    pub reduction: usize,
}

impl<T: Scalar> SeParams<T> {
    pub fn new(w1: Tensor<T>, w2: Tensor<T>, reduction: usize) -> Result<Self> {
        let (hidden, c) = w1.dims2("se_excite")?;
        let c = Self::check_ratio(c, reduction)?;
        if hidden != c / reduction || w2.shape() != [c, hidden] {
            return Err(Error::dim(
                "se_excite",
                format!(
                    "W1 {:?} and W2 {:?} inconsistent with c={c}, r={reduction}",
                    w1.shape(),
                    w2.shape()
                ),
            ));
        }
        Ok(Self { w1, w2, reduction })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let c = Self::check_ratio(channels, reduction)?;
        Ok(Self {
            w1: Tensor::zeros([c / reduction, c]),
            w2: Tensor::zeros([c, c / reduction]),
            reduction,
        })
    }

    pub(crate) fn check_ratio(channels: usize, reduction: usize) -> Result<usize> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        Ok(channels)
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> (Var, Var) {
        (
            g.param(format!("{prefix}.w1"), self.w1.clone()),
            g.param(format!("{prefix}.w2"), self.w2.clone()),
        )
    }
}

/// Excitation: `s = sigmoid(W2 · relu(W1 · z))` for each row of `z: [B×c]`.
pub fn se_excite<T: Scalar>(g: &mut Graph<T>, z: Var, w1: Var, w2: Var, reduction: usize) -> Result<Var> {
    let (_, c) = g.value(z).dims2("se_excite")?;
    SeParams::<T>::check_ratio(c, reduction)?;
    let hidden = c / reduction;
    if g.shape(w1) != [hidden, c] || g.shape(w2) != [c, hidden] {
        return Err(Error::dim(
            "se_excite",
            format!("z {:?}, W1 {:?}, W2 {:?}", g.shape(z), g.shape(w1), g.shape(w2)),
        ));
    }
    let h = project(g, z, w1)?;
    let h = g.relu(h);
    let s = project(g, h, w2)?;
    Ok(g.sigmoid(s))
}

/// Scale: `out[b,c,i,j] = s[b,c] · x[b,c,i,j]`.
pub fn se_scale<T: Scalar>(g: &mut Graph<T>, x: Var, s: Var) -> Result<Var> {
    g.channel_scale(x, s)
}

/// Global max pooling, `[B×c×H×W] -> [B×c]`.
pub fn global_max_pool<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.spatial_max(x)
}

/// Weights of the softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T> {
    /// `[num_classes × feature_dim]`
    pub weight: Tensor<T>,
    /// `[num_classes]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (classes, _) = weight.dims2("softmax_classify")?;
        if bias.shape() != [classes] {
            return Err(Error::dim(
                "softmax_classify",
                format!("W {:?} vs b {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(classes: usize, feature_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros([classes, feature_dim]),
            bias: Tensor::zeros([classes]),
        }
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> (Var, Var) {
        (
            g.param(format!("{prefix}.weight"), self.weight.clone()),
            g.param(format!("{prefix}.bias"), self.bias.clone()),
        )
    }
}

/// Pre-softmax class scores `x W_cᵀ + b_c`.
pub fn classifier_logits<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    linear(g, x, weight, bias)
}

/// Class probabilities `softmax(x W_cᵀ + b_c)`, one row per sample.
pub fn softmax_classify<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let logits = classifier_logits(g, x, weight, bias)?;
    g.softmax(logits)
}
