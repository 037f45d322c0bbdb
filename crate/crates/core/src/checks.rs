//! Fixed finite-difference suite covering every differentiable op and the
//! full fusion graph at a tiny configuration.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::gradcheck::{finite_diff_gradcheck, GradCheckReport};
use crate::layers;
use crate::modality::{Modality, ModalitySet};
use crate::model::{self, Batch, FafModel, ModelConfig};
use crate::rng::{stream, Stream};
use crate::tensor::{ParamSet, Tensor};

pub const SUITE_EPSILON: f64 = 1e-4;
pub const SUITE_TOLERANCE: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Distinct values with gaps of at least 0.05, in a shuffled order, so no
/// perturbation of size `SUITE_EPSILON` can change an argmax.
fn separated_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).expect("shape")
}

/// Contracts `out` with a fixed random weight so every output element
/// contributes a distinct amount to the scalar.
fn weighted_sum(g: &mut Graph<f64>, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = rand_tensor(rng, g.shape(out));
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn ps(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check<F>(params: ParamSet<f64>, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &BTreeMap<String, Var>, &mut ChaCha8Rng) -> Result<Var>,
{
    finite_diff_gradcheck(&params, SUITE_EPSILON, |g, v| {
        let mut rng = stream(seed, Stream::Data);
        let out = f(g, v, &mut rng)?;
        weighted_sum(g, out, &mut rng)
    })
}

/// Tiny fusion configuration used by the full-graph check.
pub fn tiny_config(mods: ModalitySet) -> ModelConfig {
    ModelConfig {
        enabled_modalities: mods,
        input_dims: Modality::ALL.iter().map(|&m| (m, 6)).collect(),
        d_align: 4,
        conv_out_channels: 4,
        reduction_ratio: 2,
        ..Default::default()
    }
}

fn full_graph(gate_active: bool, seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config(ModalitySet::all());
    let mut model = FafModel::<f64>::init(cfg.clone(), seed)?;
    let mut rng = stream(seed, Stream::Data);
    model.set_param(model::LOGIT_SCALE, Tensor::new([3], vec![1.3, 0.7, 1.1])?)?;
    model.set_gate_active(gate_active);
    let inputs = Modality::ALL
        .iter()
        .map(|&m| (m, rand_tensor(&mut rng, &[3, 6])))
        .collect();
    let batch = Batch::from_tensors(inputs)?;
    let labels = [0usize, 3, 4];
    finite_diff_gradcheck(model.params(), SUITE_EPSILON, |g, v| {
        let z = model::logits(g, &cfg, gate_active, v, &batch)?;
        g.softmax_cross_entropy(z, &labels)
    })
}

/// Runs every check; names are stable identifiers.
pub fn gradcheck_suite() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = stream(2024, Stream::Init);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let mut out = Vec::new();

    out.push((
        "matmul".into(),
        check(ps(vec![("a", r(&[3, 4])), ("b", r(&[4, 2]))]), 1, |g, v, _| {
            g.matmul(v["a"], v["b"])
        })?,
    ));
    out.push((
        "add_mul_scale".into(),
        check(ps(vec![("a", r(&[2, 3])), ("b", r(&[2, 3]))]), 2, |g, v, _| {
            let s = g.add(v["a"], v["b"])?;
            let m = g.mul(s, v["a"])?;
            Ok(g.scale(m, -1.7))
        })?,
    ));
    out.push((
        "linear".into(),
        check(
            ps(vec![("x", r(&[2, 3])), ("w", r(&[4, 3])), ("b", r(&[4]))]),
            3,
            |g, v, _| layers::linear(g, v["x"], v["w"], v["b"]),
        )?,
    ));
    out.push((
        "conv2d_same".into(),
        check(
            ps(vec![("x", r(&[2, 2, 3, 5])), ("k", r(&[3, 2, 3, 3]))]),
            4,
            |g, v, _| layers::conv2d(g, v["x"], v["k"], 1, 1),
        )?,
    ));
    out.push((
        "conv2d_strided".into(),
        check(
            ps(vec![("x", r(&[1, 1, 5, 6])), ("k", r(&[2, 1, 2, 3]))]),
            5,
            |g, v, _| layers::conv2d(g, v["x"], v["k"], 2, 0),
        )?,
    ));
    out.push((
        "se_squeeze".into(),
        check(ps(vec![("x", r(&[2, 3, 2, 4]))]), 6, |g, v, _| {
            layers::se_squeeze(g, v["x"])
        })?,
    ));
    out.push((
        "se_excite".into(),
        check(
            ps(vec![("z", r(&[3, 8])), ("w1", r(&[2, 8])), ("w2", r(&[8, 2]))]),
            7,
            |g, v, _| layers::se_excite(g, v["z"], v["w1"], v["w2"], 4),
        )?,
    ));
    out.push((
        "se_scale".into(),
        check(ps(vec![("x", r(&[2, 3, 2, 2])), ("s", r(&[2, 3]))]), 8, |g, v, _| {
            layers::se_scale(g, v["x"], v["s"])
        })?,
    ));
    let mut srng = stream(2025, Stream::Init);
    out.push((
        "global_max_pool".into(),
        check(
            ps(vec![("x", separated_tensor(&mut srng, &[2, 3, 2, 3]))]),
            9,
            |g, v, _| layers::global_max_pool(g, v["x"]),
        )?,
    ));
    out.push((
        "softmax_classify".into(),
        check(
            ps(vec![("x", r(&[3, 4])), ("w", r(&[5, 4])), ("b", r(&[5]))]),
            10,
            |g, v, _| layers::softmax_classify(g, v["x"], v["w"], v["b"]),
        )?,
    ));
    out.push((
        "gate_row_scale".into(),
        check(ps(vec![("x", r(&[2, 1, 3, 4])), ("s", r(&[3]))]), 11, |g, v, _| {
            model::apply_gate(g, v["x"], v["s"], true)
        })?,
    ));
    out.push((
        "stack_rows".into(),
        check(ps(vec![("a", r(&[2, 3])), ("b", r(&[2, 3]))]), 12, |g, v, _| {
            g.stack_rows(&[v["a"], v["b"]])
        })?,
    ));
    let composite_params = ps(vec![("x", r(&[4, 3])), ("w", r(&[5, 3])), ("b", r(&[5]))]);
    out.push((
        "linear_relu_softmax_xent".into(),
        finite_diff_gradcheck(&composite_params, SUITE_EPSILON, |g, v| {
            let h = layers::linear(g, v["x"], v["w"], v["b"])?;
            let h = g.relu(h);
            g.softmax_cross_entropy(h, &[0, 2, 4, 1])
        })?,
    ));
    out.push(("faf_full_gate_off".into(), full_graph(false, 31)?));
    out.push(("faf_full_gate_on".into(), full_graph(true, 32)?));
    Ok(out)
}
