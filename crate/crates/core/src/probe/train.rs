use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::decoder::{OutputActivation, ProbeDecoder, DEFAULT_WIDTHS};
use super::loss::{depth_loss_and_grad, edge_loss_and_grad, DICE_EPS};
use super::nn::{seeded, AdamW, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    Edges,
    Depth,
}

impl ProbeTask {
    pub fn activation(self) -> OutputActivation {
        match self {
            ProbeTask::Edges => OutputActivation::None,
            ProbeTask::Depth => OutputActivation::Sigmoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeTrainConfig {
    pub task: ProbeTask,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub widths: [usize; 4],
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            task: ProbeTask::Edges,
            lr: 1e-4,
            weight_decay: 0.01,
            batch: 128,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            widths: DEFAULT_WIDTHS,
        }
    }
}

impl ProbeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidParameter("batch and max_epochs must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidParameter(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn stamp(&self) -> String {
        format!(
            "probe(task={:?},lr={},wd={},batch={},max_epochs={},patience={},seed={},widths={:?},dice_eps={DICE_EPS},bce=logits,bn=recalibrated)",
            self.task, self.lr, self.weight_decay, self.batch, self.max_epochs, self.patience, self.seed, self.widths
        )
    }
}

/// Tracks the best validation loss; signals a stop after `patience`
/// consecutive epochs without strict improvement. Epochs count from 1.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `loss` for `epoch`; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

/// A latent code and the condition map to recover from it.
#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub source_id: String,
    /// `(c, h, w)`
    pub latent: Vec<f64>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `(16h, 16w)`
    pub target: Vec<f64>,
}

/// 80/10/10 train/val/test assignment from a hash of the source id.
pub fn split_by_hash<T: Clone>(items: &[T], source_id: impl Fn(&T) -> &str) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for it in items {
        let digest = Sha256::digest(source_id(it).as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % 10;
        match bucket {
            0..=7 => train.push(it.clone()),
            8 => val.push(it.clone()),
            _ => test.push(it.clone()),
        }
    }
    (train, val, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub best_val_loss: f64,
    /// Depth: mean |pred − target|. Edges: mean |binarize(σ(z), 0.5) − target|.
    pub test_metric: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Pooled Dice of the binarized test predictions (edges only).
    pub test_dice: Option<f64>,
    /// Best pooled Dice of any constant prediction on the test set (edges only).
    pub baseline_dice: Option<f64>,
    pub log: Vec<EpochLog>,
    /// Weights from the best validation epoch.
    pub decoder: ProbeDecoder,
}

fn batch_tensor(samples: &[&ProbeSample]) -> Tensor {
    let s = samples[0];
    let data = samples.iter().flat_map(|x| x.latent.iter().copied()).collect();
    Tensor::from_vec(samples.len(), s.channels, s.height, s.width, data)
}

fn check_samples(samples: &[ProbeSample], what: &str) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    };
    for s in samples {
        if (s.channels, s.height, s.width) != (first.channels, first.height, first.width)
            || s.latent.len() != s.channels * s.height * s.width
            || s.target.len() != 256 * s.height * s.width
        {
            return Err(Error::ShapeMismatch(format!("{what} sample `{}` has inconsistent shape", s.source_id)));
        }
    }
    Ok(())
}

/// Mean loss over a batch and its gradient with respect to the output.
pub(crate) fn batch_loss(task: ProbeTask, out: &Tensor, targets: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    let per = out.h * out.w;
    let results: Vec<(f64, Vec<f64>)> = (0..out.n)
        .into_par_iter()
        .map(|i| {
            let pred = &out.data[i * per..(i + 1) * per];
            match task {
                ProbeTask::Edges => edge_loss_and_grad(pred, targets[i]),
                ProbeTask::Depth => depth_loss_and_grad(pred, targets[i], out.h, out.w),
            }
        })
        .collect::<Result<_>>()?;
    let n = out.n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(out.data.len());
    for (l, g) in results {
        loss += l / n;
        grad.extend(g.into_iter().map(|v| v / n));
    }
    Ok((loss, grad))
}

fn evaluate_loss(decoder: &ProbeDecoder, samples: &[ProbeSample], task: ProbeTask, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch) {
        let refs: Vec<&ProbeSample> = chunk.iter().collect();
        let out = decoder.forward_eval(&batch_tensor(&refs))?;
        let targets: Vec<&[f64]> = chunk.iter().map(|s| s.target.as_slice()).collect();
        total += batch_loss(task, &out, &targets)?.0 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn predictions(decoder: &ProbeDecoder, samples: &[ProbeSample], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for chunk in samples.chunks(batch) {
        let refs: Vec<&ProbeSample> = chunk.iter().collect();
        out.extend(decoder.forward_eval(&batch_tensor(&refs))?.data);
    }
    Ok(out)
}

/// Pooled Dice `2Σpt / (Σp + Σt)` of binary maps; 1 when both are empty.
pub fn pooled_dice(pred: &[f64], target: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let denom: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>();
    if denom == 0.0 {
        1.0
    } else {
        2.0 * inter / denom
    }
}

/// Best pooled Dice of a constant probability `p` (binarized at 0.5), by
/// search over `p ∈ {0, 0.01, …, 1}`.
pub fn best_constant_dice(target: &[f64]) -> f64 {
    (0..=100)
        .map(|k| {
            let p = if k as f64 / 100.0 >= 0.5 { 1.0 } else { 0.0 };
            pooled_dice(&vec![p; target.len()], target)
        })
        .fold(0.0, f64::max)
}

/// Trains a decoder with AdamW and early stopping on validation loss, and
/// scores the best-validation weights on `test`.
pub fn train_probe(
    train: &[ProbeSample],
    val: &[ProbeSample],
    test: &[ProbeSample],
    cfg: &ProbeTrainConfig,
) -> Result<ProbeOutcome> {
    cfg.validate()?;
    check_samples(train, "train")?;
    check_samples(val, "validation")?;
    check_samples(test, "test")?;
    let channels = train[0].channels;
    let mut decoder = ProbeDecoder::with_widths(channels, cfg.widths, cfg.task.activation(), cfg.seed)?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = decoder.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    // fixed-order batches for batch-norm recalibration
    let calib: Vec<Tensor> = train
        .chunks(cfg.batch)
        .filter(|c| c.len() > 1)
        .map(|c| batch_tensor(&c.iter().collect::<Vec<_>>()))
        .collect();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seeded(cfg.seed.wrapping_add(epoch as u64)));
        let mut train_loss = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch) {
            if idx.len() < 2 {
                continue; // batch statistics need two samples
            }
            let batch: Vec<&ProbeSample> = idx.iter().map(|&i| &train[i]).collect();
            let targets: Vec<&[f64]> = batch.iter().map(|s| s.target.as_slice()).collect();
            decoder.zero_grad();
            let loss = decoder.train_step(&batch_tensor(&batch), |out| batch_loss(cfg.task, out, &targets))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            opt.begin_step();
            for p in decoder.params_mut() {
                opt.update(p);
            }
            train_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        decoder.recalibrate(&calib)?;
        let val_loss = evaluate_loss(&decoder, val, cfg.task, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        log.push(EpochLog {
            epoch,
            train_loss: if seen > 0 { train_loss / seen as f64 } else { f64::NAN },
            val_loss,
        });
        log::info!("probe epoch {epoch}: val loss {val_loss:.6}");
        epochs_run = epoch;
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best = decoder.clone();
        }
        if stop {
            break;
        }
    }

    let preds = predictions(&best, test, cfg.batch)?;
    let targets: Vec<f64> = test.iter().flat_map(|s| s.target.iter().copied()).collect();
    let n = targets.len() as f64;
    let (test_metric, test_dice, baseline_dice) = match cfg.task {
        ProbeTask::Depth => (preds.iter().zip(&targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n, None, None),
        ProbeTask::Edges => {
            let bin: Vec<f64> = preds.iter().map(|&z| if z >= 0.0 { 1.0 } else { 0.0 }).collect();
            let mae = bin.iter().zip(&targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
            (mae, Some(pooled_dice(&bin, &targets)), Some(best_constant_dice(&targets)))
        }
    };
    Ok(ProbeOutcome {
        best_val_loss: stopper.best(),
        test_metric,
        epochs_run,
        best_epoch: stopper.best_epoch(),
        test_dice,
        baseline_dice,
        log,
        decoder: best,
    })
}

/// `epoch,train_loss,val_loss` with a config-hash comment line.
pub fn write_training_log(path: &Path, log: &[EpochLog], config_hash: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("# driftbench {} config_hash={config_hash}\nepoch,train_loss,val_loss\n", crate::VERSION);
    for e in log {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopper_stops_patience_after_best() {
        let mut s = EarlyStopper::new(10);
        assert!(!s.observe(1, 1.0));
        for e in 2..=10 {
            assert!(!s.observe(e, 1.0));
        }
        assert!(s.observe(11, 1.5));
        assert_eq!(s.best_epoch() + 10, 11);
    }

    #[test]
    fn stopper_resets_on_improvement() {
        let mut s = EarlyStopper::new(3);
        s.observe(1, 1.0);
        s.observe(2, 2.0);
        s.observe(3, 0.5);
        assert!(!s.observe(4, 0.6));
        assert!(!s.observe(5, 0.6));
        assert!(s.observe(6, 0.6));
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn split_is_deterministic_and_complete() {
        let ids: Vec<String> = (0..200).map(|i| format!("s{i}")).collect();
        let (a, b, c) = split_by_hash(&ids, |s| s.as_str());
        assert_eq!(a.len() + b.len() + c.len(), 200);
        assert!(a.len() > 140 && !b.is_empty() && !c.is_empty());
        assert_eq!(split_by_hash(&ids, |s| s.as_str()).0, a);
    }

    #[test]
    fn constant_dice_baseline() {
        let t = [1.0, 0.0, 0.0, 0.0];
        assert!((best_constant_dice(&t) - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ProbeTrainConfig::default().validate().is_ok());
        let bad = ProbeTrainConfig {
            patience: 100,
            ..ProbeTrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
