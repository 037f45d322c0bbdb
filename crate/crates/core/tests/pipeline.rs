use std::collections::BTreeMap;

use faf_core::autodiff::Graph;
use faf_core::data::{gen_blobs, gen_shares, split, BlobsConfig, Dataset, SharesConfig};
use faf_core::experiment::{ablate, evaluate, AblationOptions};
use faf_core::layers;
use faf_core::model::{self, Batch, FafModel, ModelConfig};
use faf_core::train::{adam_step, fit, train, AdamState, TrainConfig};
use faf_core::{checkpoint, Modality, ModalitySet, Tensor};

fn small_dims(d: usize) -> BTreeMap<Modality, usize> {
    Modality::ALL.iter().map(|&m| (m, d)).collect()
}

fn blobs(seed: u64, per_class: usize, d: usize) -> Dataset {
    gen_blobs(
        seed,
        per_class,
        &BlobsConfig {
            dims: small_dims(d),
            ..Default::default()
        },
    )
    .unwrap()
}

fn small_model(d: usize, key: &str) -> ModelConfig {
    ModelConfig {
        input_dims: small_dims(d),
        ..Default::default()
    }
    .with_modalities(ModalitySet::parse(key).unwrap())
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ..Default::default()
    }
}

#[test]
fn training_is_bit_reproducible() {
    let ds = blobs(3, 20, 12);
    let (a, ha) = train(&ds, small_model(12, "face+body+text"), &quick(3, 5)).unwrap();
    let (b, hb) = train(&ds, small_model(12, "face+body+text"), &quick(3, 5)).unwrap();
    assert_eq!(ha, hb);
    for (name, t) in a.params() {
        let u = b.param(name).unwrap();
        assert!(
            t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name}"
        );
    }
    let ca = checkpoint::Checkpoint::from_model(&a).to_json().unwrap();
    let cb = checkpoint::Checkpoint::from_model(&b).to_json().unwrap();
    assert_eq!(ca, cb);
    let (c, _) = train(&ds, small_model(12, "face+body+text"), &quick(3, 6)).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn checkpoint_file_round_trip_preserves_predictions() {
    let ds = blobs(4, 10, 10);
    let (mut m, _) = train(&ds, small_model(10, "face+text"), &quick(2, 1)).unwrap();
    m.set_gate_active(true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert!(back.gate_active());
    let refs: Vec<_> = ds.records.iter().collect();
    let p = m.forward_sources(&refs).unwrap();
    let q = back.forward_sources(&refs).unwrap();
    assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn tiny_learning_rate_latches_the_gate_exactly_once() {
    let ds = blobs(5, 10, 8);
    let cfg = TrainConfig {
        lr: 1e-9,
        ..quick(6, 2)
    };
    let mut seen = Vec::new();
    let (m, h) = fit::<f32>(&ds, small_model(8, "face+body+text"), &cfg, |e, h| {
        seen.push((e, h.gate_latched_epoch))
    })
    .unwrap();
    assert_eq!(h.gate_latched_epoch, Some(1));
    assert!(m.gate_active());
    // Once latched it stays recorded at the same epoch.
    assert_eq!(seen[0].1, None);
    assert!(seen[1..].iter().all(|&(_, l)| l == Some(1)));
}

#[test]
fn first_adam_step_lowers_loss_on_a_fixed_batch() {
    let ds = blobs(7, 8, 16);
    let labels = ds.labels().unwrap();
    for seed in 0..4 {
        let mut m = FafModel::<f64>::init(small_model(16, "face+body+text"), seed).unwrap();
        let refs: Vec<_> = ds.records.iter().collect();
        let batch = Batch::<f64>::from_sources(&refs, m.config()).unwrap();
        let loss_and_grads = |m: &FafModel<f64>| {
            let mut g = Graph::new();
            let vars = g.params(m.params());
            let z = model::logits(&mut g, m.config(), false, &vars, &batch).unwrap();
            let l = g.softmax_cross_entropy(z, &labels).unwrap();
            (g.value(l).item().unwrap(), g.backward(l).unwrap().params())
        };
        let (before, grads) = loss_and_grads(&m);
        let mut params = m.params().clone();
        adam_step(&mut params, &grads, &mut AdamState::new(1e-3, 0.9, 0.999, 1e-8)).unwrap();
        for (name, t) in params {
            m.set_param(&name, t).unwrap();
        }
        let (after, _) = loss_and_grads(&m);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn blobs_are_linearly_separable_per_modality() {
    let ds = blobs(7, 40, 32);
    let labels = ds.labels().unwrap();
    for m in Modality::ALL {
        let rows: Vec<Vec<f64>> = ds.records.iter().map(|r| r.vector_f64(m)).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let mut params = [
            ("w".to_string(), Tensor::<f64>::zeros([5, 32])),
            ("b".to_string(), Tensor::<f64>::zeros([5])),
        ]
        .into();
        let mut adam = AdamState::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..50 {
            let mut g = Graph::new();
            let v = g.params(&params);
            let xv = g.constant(x.clone());
            let z = layers::linear(&mut g, xv, v["w"], v["b"]).unwrap();
            let l = g.softmax_cross_entropy(z, &labels).unwrap();
            let grads = g.backward(l).unwrap().params();
            adam_step(&mut params, &grads, &mut adam).unwrap();
        }
        let mut g = Graph::new();
        let v = g.params(&params);
        let xv = g.constant(x.clone());
        let z = layers::linear(&mut g, xv, v["w"], v["b"]).unwrap();
        let correct = g
            .value(z)
            .data()
            .chunks(5)
            .zip(&labels)
            .filter(|(row, &y)| model::argmax(row) == y)
            .count();
        assert!(correct as f64 / labels.len() as f64 >= 0.9, "{m}: {correct}");
    }
}

trait AsF64 {
    fn vector_f64(&self, m: Modality) -> Vec<f64>;
}

impl AsF64 for faf_core::FeatureRecord {
    fn vector_f64(&self, m: Modality) -> Vec<f64> {
        use faf_core::data::FeatureSource;
        self.vector(m).unwrap().iter().map(|&v| v as f64).collect()
    }
}

fn decoded_share(v: &[f32], c: usize) -> usize {
    model::argmax(&v[..c])
}

#[test]
fn shares_label_is_independent_of_any_single_share() {
    let c = 5;
    let ds = gen_shares(
        7,
        5000,
        c,
        &SharesConfig {
            dims: small_dims(8),
            ..Default::default()
        },
    )
    .unwrap();
    let labels = ds.labels().unwrap();
    // 0.999 quantile of chi-square with 16 degrees of freedom.
    const CRITICAL: f64 = 39.25;
    for m in Modality::ALL {
        let mut table = vec![vec![0f64; c]; c];
        for (r, &y) in ds.records.iter().zip(&labels) {
            use faf_core::data::FeatureSource;
            table[decoded_share(&r.vector(m).unwrap(), c)][y] += 1.0;
        }
        let n = labels.len() as f64;
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let chi2: f64 = (0..c)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| {
                let e = rows[i] * cols[j] / n;
                (table[i][j] - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < CRITICAL, "{m}: chi2 {chi2}");
    }
    // All three shares together determine the label.
    for (r, &y) in ds.records.iter().zip(&labels) {
        let s: usize = [&r.face, &r.body, &r.text]
            .iter()
            .map(|v| decoded_share(v.as_ref().unwrap(), c))
            .sum();
        assert_eq!(s % c, y);
    }
}

#[test]
fn split_preserves_class_proportions() {
    let ds = blobs(1, 20, 4);
    let (train_set, test_set) = split(&ds, 0.2, 9).unwrap();
    assert_eq!((train_set.len(), test_set.len()), (80, 20));
    for k in 0..5 {
        let count = |d: &Dataset| d.labels().unwrap().iter().filter(|&&y| y == k).count();
        assert_eq!((count(&train_set), count(&test_set)), (16, 4));
    }
    let mut ids: Vec<_> = train_set
        .records
        .iter()
        .chain(&test_set.records)
        .map(|r| r.id.clone())
        .collect();
    ids.sort();
    let mut orig: Vec<_> = ds.records.iter().map(|r| r.id.clone()).collect();
    orig.sort();
    assert_eq!(ids, orig);
}

#[test]
fn evaluation_report_satisfies_invariants() {
    let ds = blobs(2, 12, 8);
    let (m, _) = train(&ds, small_model(8, "body"), &quick(2, 0)).unwrap();
    let report = evaluate(&m, &ds).unwrap();
    report.check().unwrap();
    assert_eq!(report.confusion.total, 60);
    assert_eq!(report.accuracy, report.confusion.trace() as f64 / 60.0);
    let json = serde_json::to_value(&report).unwrap();
    for key in [
        "confusion",
        "per_class",
        "macro",
        "accuracy",
        "roc",
        "auc",
        "label_names",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn ablation_has_seven_rows_and_is_reproducible() {
    let ds = blobs(6, 10, 6);
    let opts = AblationOptions {
        model: ModelConfig {
            input_dims: small_dims(6),
            ..Default::default()
        },
        train: quick(2, 0),
        test_fraction: 0.2,
    };
    let a = ablate(&ds, 7, &opts, |_, _| {}).unwrap();
    let keys: Vec<_> = a.rows.iter().map(|r| r.modalities.as_str()).collect();
    assert_eq!(
        keys,
        [
            "face",
            "body",
            "text",
            "face+body",
            "face+text",
            "body+text",
            "face+body+text"
        ]
    );
    let b = ablate(&ds, 7, &opts, |_, _| {}).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.table().lines().next().unwrap().contains("Precision"));
}

#[test]
fn ablation_requires_every_modality() {
    let mut ds = blobs(6, 4, 6);
    ds.records[3].body = None;
    let err = ablate(&ds, 7, &AblationOptions::default(), |_, _| {}).unwrap_err();
    assert!(matches!(err, faf_core::Error::MissingModality(Modality::Body)));
}
