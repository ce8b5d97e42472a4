use std::path::Path;

use driftbench_core::probe::{
    probe_samples, split_by_hash, toy_edge_samples, train_probe, write_training_log, ProbeOutcome, ProbeSample,
    ProbeTask, ProbeTrainConfig,
};
use driftbench_core::projectors::{CannyProjector, GradientMagnitude, Projector};
use driftbench_core::synthetic::{make_permutation_ae, shapes_dataset, SyntheticAE};
use driftbench_core::Autoencoder;
use serde::Serialize;

use crate::config::{AdapterConfig, DatasetConfig, DepthSource, LoadedConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct ProbeReport {
    pub tool_version: String,
    pub config_hash: String,
    pub source: String,
    pub task: ProbeTask,
    pub samples: [usize; 3],
    pub best_val_loss: f64,
    pub test_metric: f64,
    pub test_dice: Option<f64>,
    pub baseline_dice: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Settings of the built-in edge probe on synthetic step edges.
pub fn toy_config() -> ProbeTrainConfig {
    ProbeTrainConfig {
        lr: 2e-3,
        batch: 16,
        max_epochs: 20,
        patience: 5,
        ..ProbeTrainConfig::default()
    }
}

fn train_and_write(
    samples: &[ProbeSample],
    cfg: &ProbeTrainConfig,
    source: String,
    hash: &str,
    out: &Path,
) -> CliResult<(ProbeReport, ProbeOutcome)> {
    let (train, val, test) = split_by_hash(samples, |s| s.source_id.as_str());
    log::info!("probe split: {} train, {} val, {} test", train.len(), val.len(), test.len());
    let outcome = train_probe(&train, &val, &test, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| crate::error::io_err(out, e))?;
    outcome.decoder.save(&out.join("checkpoint.json"), &cfg.stamp())?;
    write_training_log(&out.join("training_log.csv"), &outcome.log, hash)?;
    let report = ProbeReport {
        tool_version: driftbench_core::VERSION.to_string(),
        config_hash: hash.to_string(),
        source,
        task: cfg.task,
        samples: [train.len(), val.len(), test.len()],
        best_val_loss: outcome.best_val_loss,
        test_metric: outcome.test_metric,
        test_dice: outcome.test_dice,
        baseline_dice: outcome.baseline_dice,
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
    };
    crate::write_json(&out.join("probe.json"), &report)?;
    Ok((report, outcome))
}

pub fn run_toy_probe(n: usize, cfg: &ProbeTrainConfig, hash: &str, out: &Path) -> CliResult<ProbeReport> {
    let samples = toy_edge_samples(n, cfg.seed)?;
    Ok(train_and_write(&samples, cfg, format!("toy_edges(n={n},seed={})", cfg.seed), hash, out)?.0)
}

/// Trains a probe on the latents of one configured model. Only adapters
/// with encoder access qualify; the adapter must downsample by 16.
pub fn run_model_probe(loaded: &LoadedConfig, model: &str, task: ProbeTask, out: &Path) -> CliResult<ProbeReport> {
    let config = &loaded.config;
    let m = config
        .models
        .iter()
        .find(|m| m.name == model)
        .ok_or_else(|| CliError::config(format!("no model named `{model}` in the config")))?;
    let adapter_cfg = m
        .adapter
        .as_ref()
        .ok_or_else(|| CliError::config(format!("model `{model}` has precomputed reconstructions and no latent access")))?;
    let images = match &config.dataset {
        DatasetConfig::Shapes { n, side, seed } => shapes_dataset(*n, *side, *seed),
        DatasetConfig::Directory { path, side } => {
            driftbench_core::load_dataset(&loaded.resolve(path), driftbench_core::Preprocessing { side: *side })?.images
        }
    };
    let adapter = match adapter_cfg {
        AdapterConfig::Identity {} => SyntheticAE::identity(),
        AdapterConfig::Blur { sigma } => SyntheticAE::blur(*sigma)?,
        AdapterConfig::Quantize { levels } => SyntheticAE::quantize(*levels)?,
        AdapterConfig::PatchPool { factor } => SyntheticAE::patch_pool(*factor)?,
        AdapterConfig::Permutation { seed } => make_permutation_ae(&images, *seed)?,
    };
    if adapter.downsample_factor() != 16 {
        return Err(CliError::config(format!(
            "model `{model}`: the probe decoder upsamples by 16 but the adapter downsamples by {}",
            adapter.downsample_factor()
        )));
    }
    let projector: Box<dyn Projector> = match task {
        ProbeTask::Edges => Box::new(CannyProjector::new(config.projectors.canny)?),
        ProbeTask::Depth => match &config.projectors.depth {
            DepthSource::Native { blur_sigma } => Box::new(GradientMagnitude { blur_sigma: *blur_sigma }),
            DepthSource::External(_) => {
                return Err(CliError::config("the depth probe only supports the native depth projector"))
            }
        },
    };
    let samples = probe_samples(&images, &adapter, projector.as_ref())?;
    let cfg = ProbeTrainConfig {
        task,
        ..config.probe.clone()
    };
    Ok(train_and_write(&samples, &cfg, format!("model({model})"), &loaded.hash, out)?.0)
}
