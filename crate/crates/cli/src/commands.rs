use std::net::SocketAddr;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use faf_core::checks::{gradcheck_suite, SUITE_TOLERANCE};
use faf_core::data::{
    gen_blobs, gen_shares, label_names_for, load_jsonl, BlobsConfig, DataSchema, Features, SharesConfig,
};
use faf_core::experiment::{ablate, evaluate, AblationOptions};
use faf_core::metrics::EvalReport;
use faf_core::model::ModelConfig;
use faf_core::train::{fit, TrainConfig, TrainHistory};
use faf_core::{checkpoint, Dataset, ModalitySet};
use faf_service::{ServeConfig, Server};
use serde::Serialize;

use crate::args::{AblateArgs, DataKind, EvalArgs, GenDataArgs, GradcheckArgs, PredictArgs, ServeArgs, TrainArgs};
use crate::config::ConfigFile;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn schema_for(model: &ModelConfig) -> DataSchema {
    DataSchema {
        label_names: model.label_names.clone(),
        dims: model.input_dims.clone(),
    }
}

fn load_data(path: &Path, model: &ModelConfig) -> Result<Dataset> {
    load_jsonl(path, &schema_for(model)).with_context(|| format!("loading dataset {}", path.display()))
}

fn progress(total: usize) -> impl FnMut(usize, &TrainHistory) {
    move |epoch, h| {
        let latch = match h.gate_latched_epoch {
            Some(e) if e == epoch => "  (gate latched)",
            _ => "",
        };
        eprintln!(
            "epoch {:>3}/{total}: loss {:.6}  train acc {:.4}{latch}",
            epoch + 1,
            h.epoch_loss[epoch],
            h.epoch_accuracy[epoch]
        );
    }
}

pub fn gen_data(cfg: &ConfigFile, args: &GenDataArgs) -> Result<()> {
    let labels = match args.classes.or(cfg.data.classes) {
        Some(c) => label_names_for(c),
        None => cfg.model.label_names.clone(),
    };
    let sigma = args.sigma.or(cfg.data.sigma);
    let dims = cfg.model.input_dims.clone();
    let ds = match args.kind {
        DataKind::Blobs => {
            let defaults = BlobsConfig::default();
            gen_blobs(
                args.seed,
                args.n,
                &BlobsConfig {
                    sigma: sigma.unwrap_or(defaults.sigma),
                    dims,
                    label_names: labels,
                },
            )?
        }
        DataKind::Shares => {
            let defaults = SharesConfig::default();
            let ds = gen_shares(
                args.seed,
                args.n,
                labels.len(),
                &SharesConfig {
                    sigma: sigma.unwrap_or(defaults.sigma),
                    dims,
                },
            )?;
            relabel(ds, labels)?
        }
    };
    ds.save_jsonl(&args.out)?;
    eprintln!("wrote {} records to {}", ds.len(), args.out.display());
    Ok(())
}

/// Renames class `k` to `labels[k]`.
fn relabel(ds: Dataset, labels: Vec<String>) -> Result<Dataset> {
    if ds.label_names == labels {
        return Ok(ds);
    }
    let idx = ds.labels()?;
    let mut records = ds.records;
    for (r, k) in records.iter_mut().zip(idx) {
        r.label = labels[k].clone();
    }
    Ok(Dataset::new(records, labels)?)
}

fn model_config(cfg: &ConfigFile, modalities: Option<&str>) -> Result<ModelConfig> {
    let mut model = cfg.model.clone();
    if let Some(m) = modalities {
        model.enabled_modalities = ModalitySet::parse(m)?;
    }
    model.validate()?;
    Ok(model)
}

pub fn train(cfg: &ConfigFile, args: &TrainArgs) -> Result<()> {
    let model_cfg = model_config(cfg, args.modalities.as_deref())?;
    let defaults = &cfg.train;
    let train_cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        lr: args.lr.unwrap_or(defaults.lr),
        seed: args.seed.unwrap_or(defaults.seed),
        ..defaults.clone()
    };
    let ds = load_data(&args.data, &model_cfg)?;
    let (model, history) = fit::<f32>(&ds, model_cfg, &train_cfg, progress(train_cfg.epochs))?;
    checkpoint::save(&model, &args.out)?;
    if let Some(path) = &args.history {
        write_json(path, &history)?;
    }
    eprintln!(
        "saved {} model to {} (gate {})",
        model.key(),
        args.out.display(),
        if model.gate_active() { "active" } else { "inactive" }
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model =
        checkpoint::load(&args.model).with_context(|| format!("loading checkpoint {}", args.model.display()))?;
    let ds = load_data(&args.data, model.config())?;
    let report = evaluate(&model, &ds)?;
    write_json(&args.out, &report)?;
    let text = std::fs::read_to_string(&args.out)?;
    let stored: EvalReport = serde_json::from_str(&text)?;
    stored.check().context("written report fails its invariants")?;
    println!(
        "accuracy {:.4}  macro precision {:.4}  recall {:.4}  f1 {:.4}",
        report.accuracy, report.macro_avg.precision, report.macro_avg.recall, report.macro_avg.f1
    );
    Ok(())
}

pub fn ablate_cmd(cfg: &ConfigFile, args: &AblateArgs) -> Result<()> {
    let model = cfg.model.clone();
    let ds = load_data(&args.data, &model)?;
    let opts = AblationOptions {
        model,
        train: TrainConfig {
            epochs: args.epochs.unwrap_or(cfg.train.epochs),
            ..cfg.train.clone()
        },
        test_fraction: args.test_fraction.or(cfg.test_fraction).unwrap_or(0.2),
    };
    let report = ablate(&ds, args.seed, &opts, |key, h| {
        eprintln!(
            "{key}: final loss {:.6}, gate {}",
            h.epoch_loss.last().copied().unwrap_or(f64::NAN),
            h.gate_latched_epoch
                .map_or("never latched".to_string(), |e| format!("latched at epoch {}", e + 1))
        );
    })?;
    write_json(&args.out, &report)?;
    print!("{}", report.table());
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model =
        checkpoint::load(&args.model).with_context(|| format!("loading checkpoint {}", args.model.display()))?;
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let features: Features =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    let prediction = model.predict(&features)?;
    println!("{}", serde_json::to_string_pretty(&prediction)?);
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let suite = gradcheck_suite()?;
    let worst = suite.iter().map(|(_, r)| r.max_relative_error).fold(0.0, f64::max);
    if args.json {
        let map: serde_json::Map<String, serde_json::Value> = suite
            .iter()
            .map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?)))
            .collect::<Result<_>>()?;
        println!("{}", serde_json::to_string_pretty(&map)?);
    } else {
        for (name, r) in &suite {
            println!("{name:<28} {:.3e}", r.max_relative_error);
        }
    }
    println!("max relative error: {worst:.3e} (tolerance {SUITE_TOLERANCE:.0e})");
    Ok(if worst < SUITE_TOLERANCE {
        ExitCode::SUCCESS
    } else {
        eprintln!("gradient check failed");
        ExitCode::FAILURE
    })
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    if args.reports_dir.as_ref().is_some_and(|d| !d.is_dir()) {
        bail!("reports directory does not exist");
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(ServeConfig {
            model_dir: args.model_dir.clone(),
            reports_dir: args.reports_dir.clone(),
            static_dir: args.static_dir.clone(),
            addr: SocketAddr::new(args.host, args.port),
        })
        .await?;
        let keys: Vec<&str> = server.registry().keys().collect();
        eprintln!("loaded models: {}", keys.join(", "));
        eprintln!("listening on http://{}", server.local_addr()?);
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
