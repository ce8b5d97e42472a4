use driftbench_core::probe::{
    gradient_check, split_by_hash, toy_edge_samples, train_probe, ProbeSample, ProbeTask, ProbeTrainConfig,
};

fn assert_gradients(task: ProbeTask) {
    let check = gradient_check(task, 1e-6).unwrap();
    assert!(check.checked > 50, "{check:?}");
    assert!(check.max_rel_error <= 1e-3, "{task:?}: {check:?}");
}

#[test]
fn edge_loss_gradients_match_finite_differences() {
    assert_gradients(ProbeTask::Edges);
}

#[test]
fn depth_loss_gradients_match_finite_differences() {
    assert_gradients(ProbeTask::Depth);
}

fn tiny_cfg() -> ProbeTrainConfig {
    ProbeTrainConfig {
        lr: 0.0,
        batch: 8,
        max_epochs: 30,
        patience: 10,
        widths: [4, 4, 4, 4],
        ..ProbeTrainConfig::default()
    }
}

fn split(s: &[ProbeSample]) -> (&[ProbeSample], &[ProbeSample], &[ProbeSample]) {
    (&s[..24], &s[24..32], &s[32..])
}

#[test]
fn frozen_weights_stop_at_epoch_eleven() {
    let samples = toy_edge_samples(40, 3).unwrap();
    let (tr, va, te) = split(&samples);
    let out = train_probe(tr, va, te, &tiny_cfg()).unwrap();
    assert_eq!(out.best_epoch, 1);
    assert_eq!(out.epochs_run, 11);
    assert!(out.log.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
}

#[test]
fn early_stopping_respects_bounds() {
    let samples = toy_edge_samples(40, 4).unwrap();
    let (tr, va, te) = split(&samples);
    let cfg = ProbeTrainConfig {
        lr: 1e-2,
        max_epochs: 14,
        patience: 3,
        ..tiny_cfg()
    };
    let out = train_probe(tr, va, te, &cfg).unwrap();
    assert!(out.epochs_run <= cfg.max_epochs);
    assert!(out.epochs_run > cfg.patience);
    assert_eq!(out.log.len(), out.epochs_run);
    let best = out.log.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, out.best_val_loss);
}

#[test]
fn toy_edge_probe_beats_constant_dice() {
    let samples = toy_edge_samples(320, 11).unwrap();
    let (tr, va, te) = split_by_hash(&samples, |s| s.source_id.as_str());
    let cfg = ProbeTrainConfig {
        lr: 2e-3,
        batch: 16,
        max_epochs: 20,
        patience: 5,
        ..ProbeTrainConfig::default()
    };
    let start = std::time::Instant::now();
    let out = train_probe(&tr, &va, &te, &cfg).unwrap();
    let (dice, base) = (out.test_dice.unwrap(), out.baseline_dice.unwrap());
    eprintln!(
        "toy probe: dice {dice:.4} baseline {base:.4} best epoch {} in {:.1?}",
        out.best_epoch,
        start.elapsed()
    );
    assert!(out.epochs_run <= 20);
    assert!(dice - base >= 0.2, "dice {dice} baseline {base}");
}
