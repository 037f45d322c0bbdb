//! Labeled feature records, their line-delimited JSON file format, and
//! synthetic dataset generators.
//!
//! Two generators cover the two regimes fusion experiments need:
//!
//! * [`gen_blobs`]: every modality on its own separates the classes.
//! * [`gen_shares`]: the label is the sum of three per-modality shares modulo
//!   the class count, so it is recoverable only from all three modalities
//!   together and every strict subset is independent of it.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::rng::{stream, Stream};

/// Class vocabulary used unless a dataset says otherwise.
pub const DEFAULT_LABELS: [&str; 5] = ["angry", "disgust", "happy", "sad", "scared"];

/// Length of vectors produced by [`embed_text_demo`].
pub const DEMO_TEXT_DIM: usize = 768;

pub fn default_label_names() -> Vec<String> {
    DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
}

/// The default vocabulary for five classes, `class0..` otherwise.
pub fn label_names_for(num_classes: usize) -> Vec<String> {
    if num_classes == DEFAULT_LABELS.len() {
        default_label_names()
    } else {
        (0..num_classes).map(|k| format!("class{k}")).collect()
    }
}

pub fn default_dims() -> BTreeMap<Modality, usize> {
    Modality::ALL.iter().map(|&m| (m, m.default_dim())).collect()
}

/// Anything that can supply per-modality feature vectors.
pub trait FeatureSource {
    /// Feature vector for `m`, if present. Raw text without a text vector
    /// is embedded with [`embed_text_demo`].
    fn vector(&self, m: Modality) -> Option<Cow<'_, [f32]>>;
}

fn pick<'a>(
    m: Modality,
    face: &'a Option<Vec<f32>>,
    body: &'a Option<Vec<f32>>,
    text: &'a Option<Vec<f32>>,
    text_raw: &'a Option<String>,
) -> Option<Cow<'a, [f32]>> {
    match m {
        Modality::Face => face.as_deref().map(Cow::Borrowed),
        Modality::Body => body.as_deref().map(Cow::Borrowed),
        Modality::Text => match (text, text_raw) {
            (Some(t), _) => Some(Cow::Borrowed(t.as_slice())),
            (None, Some(raw)) => Some(Cow::Owned(embed_text_demo(raw))),
            (None, None) => None,
        },
    }
}

/// Unlabeled per-modality inputs, as accepted for prediction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Features {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_raw: Option<String>,
}

impl FeatureSource for Features {
    fn vector(&self, m: Modality) -> Option<Cow<'_, [f32]>> {
        pick(m, &self.face, &self.body, &self.text, &self.text_raw)
    }
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_raw: Option<String>,
}

impl FeatureSource for FeatureRecord {
    fn vector(&self, m: Modality) -> Option<Cow<'_, [f32]>> {
        pick(m, &self.face, &self.body, &self.text, &self.text_raw)
    }
}

impl FeatureRecord {
    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Face => self.face.is_some(),
            Modality::Body => self.body.is_some(),
            Modality::Text => self.text.is_some() || self.text_raw.is_some(),
        }
    }

    fn raw(&self, m: Modality) -> Option<&Vec<f32>> {
        match m {
            Modality::Face => self.face.as_ref(),
            Modality::Body => self.body.as_ref(),
            Modality::Text => self.text.as_ref(),
        }
    }
}

/// Expected label vocabulary and vector lengths for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    pub label_names: Vec<String>,
    pub dims: BTreeMap<Modality, usize>,
}

impl Default for DataSchema {
    fn default() -> Self {
        Self {
            label_names: default_label_names(),
            dims: default_dims(),
        }
    }
}

impl DataSchema {
    fn validate(&self, rec: &FeatureRecord, line: Option<usize>) -> Result<()> {
        if !self.label_names.contains(&rec.label) {
            return Err(Error::UnknownLabel {
                label: rec.label.clone(),
                line,
            });
        }
        if !Modality::ALL.iter().any(|&m| rec.has(m)) {
            return Err(Error::Input {
                message: format!("record `{}` has no modality", rec.id),
                line,
            });
        }
        for m in Modality::ALL {
            let Some(v) = rec.raw(m) else { continue };
            let expected = self.dims.get(&m).copied().unwrap_or(m.default_dim());
            if v.len() != expected {
                return Err(Error::WrongLength {
                    modality: m,
                    expected,
                    got: v.len(),
                    line,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input {
                    message: format!("record `{}`: non-finite value in {m}", rec.id),
                    line,
                });
            }
        }
        Ok(())
    }
}

/// Ordered labeled records plus their label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FeatureRecord>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<FeatureRecord>, label_names: Vec<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input {
                message: "dataset is empty".into(),
                line: None,
            });
        }
        let ds = Self { records, label_names };
        ds.labels()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == label)
    }

    /// Class index of every record.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                self.label_index(&r.label).ok_or_else(|| Error::UnknownLabel {
                    label: r.label.clone(),
                    line: None,
                })
            })
            .collect()
    }

    /// True when every record carries modality `m`.
    pub fn provides(&self, m: Modality) -> bool {
        self.records.iter().all(|r| r.has(m))
    }

    pub fn write_jsonl(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(f).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Reads one record per line, validating as it goes. Errors carry the
/// 1-based line number.
pub fn read_jsonl(reader: impl BufRead, schema: &DataSchema) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = Some(i + 1);
        let line = line.map_err(|e| Error::Input {
            message: e.to_string(),
            line: line_no,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Input {
            message: format!("malformed record: {e}"),
            line: line_no,
        })?;
        schema.validate(&rec, line_no)?;
        records.push(rec);
    }
    Dataset::new(records, schema.label_names.clone())
}

pub fn load_jsonl(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f), schema)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub sigma: f64,
    pub dims: BTreeMap<Modality, usize>,
    pub label_names: Vec<String>,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.3,
            dims: default_dims(),
            label_names: default_label_names(),
        }
    }
}

/// Gaussian blobs: class `k` in modality `m` is centred on a mean vector
/// with standard-normal coordinates, drawn once per (class, modality);
/// samples add isotropic noise of standard deviation `sigma`. Records cycle
/// through the classes.
pub fn gen_blobs(seed: u64, n_per_class: usize, cfg: &BlobsConfig) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let mut rng = stream(seed, Stream::Data);
    let classes = cfg.label_names.len();
    let means: BTreeMap<Modality, Vec<Vec<f64>>> = Modality::ALL
        .iter()
        .map(|&m| {
            let d = cfg.dims[&m];
            let per_class = (0..classes)
                .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
                .collect();
            (m, per_class)
        })
        .collect();
    let mut records = Vec::with_capacity(n_per_class * classes);
    for i in 0..n_per_class * classes {
        let k = i % classes;
        let mut sample = |m: Modality| -> Vec<f32> {
            means[&m][k]
                .iter()
                .map(|&mu| (mu + cfg.sigma * normal(&mut rng)) as f32)
                .collect()
        };
        let face = sample(Modality::Face);
        let body = sample(Modality::Body);
        let text = sample(Modality::Text);
        records.push(FeatureRecord {
            id: format!("blob-{i:05}"),
            label: cfg.label_names[k].clone(),
            face: Some(face),
            body: Some(body),
            text: Some(text),
            text_raw: None,
        });
    }
    Dataset::new(records, cfg.label_names.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharesConfig {
    pub sigma: f64,
    pub dims: BTreeMap<Modality, usize>,
}

impl Default for SharesConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            dims: default_dims(),
        }
    }
}

/// Modular shares: for class `k`, face and body shares are uniform on
/// `0..C` and the text share completes `(s_f + s_b + s_t) mod C == k`.
///
/// Each modality's vector is the one-hot encoding of its share in
/// coordinates `0..C`, with Gaussian noise on those coordinates; all other
/// coordinates are exactly zero.
pub fn gen_shares(seed: u64, n: usize, num_classes: usize, cfg: &SharesConfig) -> Result<Dataset> {
    if num_classes < 2 || n < num_classes {
        return Err(Error::Config(format!(
            "need n >= num_classes >= 2, got n={n}, num_classes={num_classes}"
        )));
    }
    if let Some((m, d)) = cfg.dims.iter().find(|(_, &d)| d < num_classes) {
        return Err(Error::Config(format!(
            "{m} dimension {d} cannot hold {num_classes} one-hot slots"
        )));
    }
    let labels = label_names_for(num_classes);
    let mut rng = stream(seed, Stream::Data);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.random_range(0..num_classes);
        let s_face = rng.random_range(0..num_classes);
        let s_body = rng.random_range(0..num_classes);
        let s_text = (k + 2 * num_classes - s_face - s_body) % num_classes;
        let mut encode = |m: Modality, share: usize| -> Vec<f32> {
            let mut v = vec![0.0f32; cfg.dims[&m]];
            for (j, slot) in v.iter_mut().take(num_classes).enumerate() {
                let hot = if j == share { 1.0 } else { 0.0 };
                *slot = (hot + cfg.sigma * normal(&mut rng)) as f32;
            }
            v
        };
        let face = encode(Modality::Face, s_face);
        let body = encode(Modality::Body, s_body);
        let text = encode(Modality::Text, s_text);
        records.push(FeatureRecord {
            id: format!("share-{i:05}"),
            label: labels[k].clone(),
            face: Some(face),
            body: Some(body),
            text: Some(text),
            text_raw: None,
        });
    }
    Dataset::new(records, labels)
}

/// Stratified seeded split. Within each class the records are shuffled and
/// `round(n_k · test_fraction)` of them (clamped to `1..n_k-1`) go to the
/// test side. Both halves keep the original record order.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let labels = dataset.labels()?;
    let mut rng = stream(seed, Stream::Split);
    let mut is_test = vec![false; dataset.len()];
    for k in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Stratification(dataset.label_names[k].clone()));
        }
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rec, t) in dataset.records.iter().zip(is_test) {
        if t {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    Ok((
        Dataset::new(train, dataset.label_names.clone())?,
        Dataset::new(test, dataset.label_names.clone())?,
    ))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Deterministic hashed bag-of-words vector for demos.
///
/// This is not a language model embedding. Lowercased alphanumeric tokens
/// each add `±1` at index `fnv1a64(token) mod 768`, positive when bit 32 of
/// the hash is set, and the result is L2-normalized when nonzero.
pub fn embed_text_demo(text: &str) -> Vec<f32> {
    let mut acc = vec![0.0f64; DEMO_TEXT_DIM];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = fnv1a64(token.as_bytes());
        let idx = (h % DEMO_TEXT_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
        acc[idx] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        vec![0.0; DEMO_TEXT_DIM]
    }
}
