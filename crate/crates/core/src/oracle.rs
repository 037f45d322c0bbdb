//! Brute-force reference implementations and the randomized suites that
//! compare the graph layers and the metrics against them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::gradcheck::relative_error;
use crate::layers;
use crate::metrics::{confusion, prf_accuracy, roc_auc};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Nested-loop cross-correlation with zero padding.
pub fn ref_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [b, cin, h, w] = <[usize; 4]>::try_from(x.shape()).expect("4-d input");
    let [cout, _, kh, kw] = <[usize; 4]>::try_from(k.shape()).expect("4-d kernel");
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(b * cout * ho * wo);
    for n in 0..b {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let (r, s) = (
                                    (i * stride + di) as isize - pad as isize,
                                    (j * stride + dj) as isize - pad as isize,
                                );
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let xv = x.get(&[n, c, r as usize, s as usize]).expect("in range");
                                acc += xv * k.get(&[o, c, di, dj]).expect("in range");
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn per_channel(x: &Tensor<f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let [_, _, h, w] = <[usize; 4]>::try_from(x.shape()).expect("4-d input");
    x.data().chunks(h * w).map(f).collect()
}

pub fn ref_spatial_mean(x: &Tensor<f64>) -> Vec<f64> {
    per_channel(x, |ch| ch.iter().sum::<f64>() / ch.len() as f64)
}

pub fn ref_spatial_max(x: &Tensor<f64>) -> Vec<f64> {
    per_channel(x, |ch| ch.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn matvec(w: &Tensor<f64>, v: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data()
        .chunks(cols)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `sigmoid(W2 · relu(W1 · z))` row by row.
pub fn ref_se_excite(z: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Vec<f64> {
    let c = z.shape()[1];
    z.data()
        .chunks(c)
        .flat_map(|row| {
            let h: Vec<f64> = matvec(w1, row).into_iter().map(|v| v.max(0.0)).collect();
            matvec(w2, &h).into_iter().map(|v| 1.0 / (1.0 + (-v).exp()))
        })
        .collect()
}

pub fn ref_channel_scale(x: &Tensor<f64>, s: &Tensor<f64>) -> Vec<f64> {
    let [_, _, h, w] = <[usize; 4]>::try_from(x.shape()).expect("4-d input");
    x.data()
        .chunks(h * w)
        .zip(s.data())
        .flat_map(|(ch, &sc)| ch.iter().map(move |v| v * sc))
        .collect()
}

/// `x Wᵀ + b` by explicit dot products.
pub fn ref_linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let d = x.shape()[1];
    x.data()
        .chunks(d)
        .flat_map(|row| {
            matvec(w, row)
                .into_iter()
                .zip(b.data())
                .map(|(v, bi)| v + bi)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Direct `exp / Σ exp` of each row of `x Wᵀ + b`.
pub fn ref_softmax_classify(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let classes = w.shape()[0];
    ref_linear(x, w, b)
        .chunks(classes)
        .flat_map(|row| {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(move |v| v.exp() / total).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
}

fn max_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "oracle length mismatch");
    got.iter()
        .zip(want)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

fn run<F>(name: &str, instances: usize, rng: &mut ChaCha8Rng, mut case: F) -> Result<OracleReport>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (got, want) = case(rng)?;
        worst = worst.max(max_err(&got, &want));
    }
    Ok(OracleReport {
        name: name.into(),
        instances,
        max_relative_error: worst,
    })
}

/// Compares each layer with its reference on `instances` random small
/// shapes, in 64-bit.
pub fn layer_oracle_suite(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = stream(seed, Stream::Data);
    let rng = &mut rng;
    let mut out = Vec::new();

    out.push(run("conv2d", instances, rng, |r| {
        let (b, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..5));
        let (h, w) = (r.random_range(1..7), r.random_range(1..7));
        let pad = r.random_range(0..3);
        let kh = r.random_range(1..=(h + 2 * pad).min(4));
        let kw = r.random_range(1..=(w + 2 * pad).min(4));
        let stride = r.random_range(1..3);
        let x = rand_tensor(r, &[b, cin, h, w]);
        let k = rand_tensor(r, &[cout, cin, kh, kw]);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = layers::conv2d(&mut g, xv, kv, stride, pad)?;
        Ok((g.value(y).data().to_vec(), ref_conv2d(&x, &k, stride, pad)))
    })?);

    out.push(run("se_squeeze", instances, rng, |r| {
        let shape = [
            r.random_range(1..4),
            r.random_range(1..6),
            r.random_range(1..6),
            r.random_range(1..6),
        ];
        let x = rand_tensor(r, &shape);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = layers::se_squeeze(&mut g, xv)?;
        Ok((g.value(y).data().to_vec(), ref_spatial_mean(&x)))
    })?);

    out.push(run("se_excite", instances, rng, |r| {
        let red = r.random_range(1..5);
        let c = red * r.random_range(1..5);
        let b = r.random_range(1..4);
        let (z, w1, w2) = (
            rand_tensor(r, &[b, c]),
            rand_tensor(r, &[c / red, c]),
            rand_tensor(r, &[c, c / red]),
        );
        let mut g = Graph::new();
        let (zv, a, bv) = (g.constant(z.clone()), g.constant(w1.clone()), g.constant(w2.clone()));
        let s = layers::se_excite(&mut g, zv, a, bv, red)?;
        Ok((g.value(s).data().to_vec(), ref_se_excite(&z, &w1, &w2)))
    })?);

    out.push(run("se_scale", instances, rng, |r| {
        let (b, c) = (r.random_range(1..4), r.random_range(1..6));
        let shape = [b, c, r.random_range(1..5), r.random_range(1..5)];
        let x = rand_tensor(r, &shape);
        let s = rand_tensor(r, &[b, c]);
        let mut g = Graph::new();
        let (xv, sv) = (g.constant(x.clone()), g.constant(s.clone()));
        let y = layers::se_scale(&mut g, xv, sv)?;
        Ok((g.value(y).data().to_vec(), ref_channel_scale(&x, &s)))
    })?);

    out.push(run("global_max_pool", instances, rng, |r| {
        let shape = [
            r.random_range(1..4),
            r.random_range(1..6),
            r.random_range(1..6),
            r.random_range(1..6),
        ];
        let x = rand_tensor(r, &shape);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = layers::global_max_pool(&mut g, xv)?;
        Ok((g.value(y).data().to_vec(), ref_spatial_max(&x)))
    })?);

    out.push(run("softmax_classify", instances, rng, |r| {
        let (b, d, classes) = (r.random_range(1..5), r.random_range(1..8), r.random_range(2..7));
        let (x, w, bias) = (
            rand_tensor(r, &[b, d]),
            rand_tensor(r, &[classes, d]),
            rand_tensor(r, &[classes]),
        );
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(bias.clone()));
        let p = layers::softmax_classify(&mut g, xv, wv, bv)?;
        Ok((g.value(p).data().to_vec(), ref_softmax_classify(&x, &w, &bias)))
    })?);

    out.push(run("linear", instances, rng, |r| {
        let (b, d_in, d_out) = (r.random_range(1..5), r.random_range(1..8), r.random_range(1..8));
        let (x, w, bias) = (
            rand_tensor(r, &[b, d_in]),
            rand_tensor(r, &[d_out, d_in]),
            rand_tensor(r, &[d_out]),
        );
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(bias.clone()));
        let y = layers::linear(&mut g, xv, wv, bv)?;
        Ok((g.value(y).data().to_vec(), ref_linear(&x, &w, &bias)))
    })?);

    Ok(out)
}

/// `(concordant·2 + ties, 2·P·N)` over all positive/negative pairs.
pub fn pair_count_auc(scores: &[f64], y_true: &[usize], class: usize) -> (u64, u64) {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if y_true[i] != class {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if y_true[j] == class {
                continue;
            }
            pairs += 1;
            twice += match si.partial_cmp(&sj) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    (twice, 2 * pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsOracleReport {
    pub sets: usize,
    pub mismatches: usize,
    pub auc_checks: usize,
    pub auc_mismatches: usize,
}

fn brute_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Recounts confusion cells, per-class P/R/F1 and accuracy directly from
/// the label lists of `sets` random instances, and checks every AUC against
/// pair counting. Comparisons are exact.
pub fn metrics_oracle_suite(sets: usize, seed: u64) -> Result<MetricsOracleReport> {
    let mut rng = stream(seed, Stream::Data);
    let mut report = MetricsOracleReport {
        sets,
        mismatches: 0,
        auc_checks: 0,
        auc_mismatches: 0,
    };
    for _ in 0..sets {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..80);
        let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let cm = confusion(&y_true, &y_pred, c)?;
        let prf = prf_accuracy(&cm)?;
        let mut ok = true;
        for t in 0..c {
            for p in 0..c {
                let count = y_true.iter().zip(&y_pred).filter(|&(&a, &b)| a == t && b == p).count();
                ok &= cm.counts[t][p] == count as u64;
            }
            let tp = y_true.iter().zip(&y_pred).filter(|&(&a, &b)| a == t && b == t).count();
            let fp = y_true.iter().zip(&y_pred).filter(|&(&a, &b)| a != t && b == t).count();
            let fn_ = y_true.iter().zip(&y_pred).filter(|&(&a, &b)| a == t && b != t).count();
            let m = &prf.per_class[t];
            ok &= m.precision == brute_ratio(tp, tp + fp)
                && m.recall == brute_ratio(tp, tp + fn_)
                && m.f1 == brute_ratio(2 * tp, 2 * tp + fp + fn_)
                && m.binary_accuracy == brute_ratio(n - fp - fn_, n);
        }
        let correct = y_true.iter().zip(&y_pred).filter(|(a, b)| a == b).count();
        ok &= prf.accuracy == brute_ratio(correct, n);
        if !ok {
            report.mismatches += 1;
        }

        // Scores on a coarse grid so that ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let class = rng.random_range(0..c);
        if let Ok(curve) = roc_auc(&scores, &y_true, class) {
            let (num, den) = pair_count_auc(&scores, &y_true, class);
            report.auc_checks += 1;
            if curve.auc != num as f64 / den as f64 {
                report.auc_mismatches += 1;
            }
        }
    }
    Ok(report)
}
