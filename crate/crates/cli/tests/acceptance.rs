//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the report; the test fails if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use driftbench_core::analysis::spearman_dense;
use driftbench_core::metrics::{
    condition_drift, frechet_distance, psnr, ssim, FeatureStats, SsimParams, StatsAccumulator,
};
use driftbench_core::probe::{gradient_check, ProbeTask};
use driftbench_core::projectors::BlockAverage;
use driftbench_core::synthetic::{blur_sweep, prop1_case, shapes_dataset, theorem1_trials, SyntheticAE};
use driftbench_core::{Autoencoder, ImagePair, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_driftbench");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("DRIFTBENCH_CACHE")
        .output()
        .expect("binary runs")
}

fn frechet_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut identical_ok = true;
    for case in 0..100 {
        let d = if case < 50 { 1 } else { rng.gen_range(2..10) };
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.gen_range(lo..hi)).collect() };
        let (m1, m2) = (draw(&mut rng, -3.0, 3.0), draw(&mut rng, -3.0, 3.0));
        let (v1, v2) = (draw(&mut rng, 0.01, 4.0), draw(&mut rng, 0.01, 4.0));
        let expected: f64 = (0..d)
            .map(|i| (m1[i] - m2[i]).powi(2) + v1[i] + v2[i] - 2.0 * (v1[i] * v2[i]).sqrt())
            .sum();
        let diag = |m: Vec<f64>, v: &[f64]| {
            let mut cov = vec![0.0; d * d];
            (0..d).for_each(|i| cov[i * d + i] = v[i]);
            FeatureStats::new(m, cov, 50).unwrap()
        };
        let (a, b) = (diag(m1, &v1), diag(m2, &v2));
        let got = frechet_distance(&a, &b).unwrap();
        worst = worst.max((got - expected).abs() / expected.abs().max(1e-300));
        identical_ok &= frechet_distance(&a, &a).unwrap() == 0.0;
    }
    outcome(
        worst <= 1e-9 && identical_ok,
        format!("max relative error {worst:.2e} over 100 cases, identical stats give 0: {identical_ok}"),
    )
}

fn theorem() -> Outcome {
    let r = theorem1_trials(2024, 1000);
    outcome(
        r.trials == 1000 && r.max_abs_gap <= 1e-12 && r.exact_mismatches == 0,
        format!(
            "{} worlds, max float gap {:.2e}, exact mismatches {}",
            r.trials, r.max_abs_gap, r.exact_mismatches
        ),
    )
}

fn proposition() -> Outcome {
    let c = prop1_case(32, 32, 1).unwrap();
    outcome(
        c.frechet <= 1e-6 && c.identity_drift == 0.0 && c.mean_drift >= c.min_pairwise && c.min_pairwise > 0.0,
        format!(
            "Fréchet {:.2e}, permutation drift {:.4}, identity drift {}, floor (min pairwise distance) {:.4}",
            c.frechet, c.mean_drift, c.identity_drift, c.min_pairwise
        ),
    )
}

fn guardrail() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images = shapes_dataset(64, 32, 9);
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    for i in 0..500 {
        let reference = &images[i % images.len()];
        let recon = match i % 4 {
            0 => SyntheticAE::blur(rng.gen_range(0.3..3.0)).unwrap().roundtrip(reference).unwrap(),
            1 => SyntheticAE::quantize(rng.gen_range(2..10)).unwrap().roundtrip(reference).unwrap(),
            2 => SyntheticAE::patch_pool([2, 4, 8][rng.gen_range(0..3)]).unwrap().roundtrip(reference).unwrap(),
            _ => {
                let noisy: Vec<f64> = reference.data().iter().map(|v| v + rng.gen_range(-0.4..0.4)).collect();
                ImageTensor::from_clamped(reference.source_id(), 32, 32, noisy).unwrap()
            }
        };
        let pair = ImagePair::new(reference.clone(), recon).unwrap();
        let block = [1, 2, 4, 8, 16, 32][i % 6];
        let drift = condition_drift(&pair, &BlockAverage { block }).unwrap();
        let slack = pair.mean_abs_error() + 1e-9 - drift;
        worst_slack = worst_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("500 pairs, {violations} violations, smallest slack {worst_slack:.2e}"))
}

fn metric_oracles() -> Outcome {
    let side = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let off = 16.0 / 255.0;
    let data: Vec<f64> = (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0 - off)).collect();
    let shifted: Vec<f64> = data.iter().map(|v| v + off).collect();
    let p = psnr(
        &ImagePair::new(
            ImageTensor::new("x", side, side, data).unwrap(),
            ImageTensor::new("x", side, side, shifted).unwrap(),
        )
        .unwrap(),
    );
    let psnr_ok = (p - 24.0494).abs() <= 1e-3;

    let params = SsimParams::default();
    let c1 = params.k1 * params.k1;
    let mut ssim_err = 0.0f64;
    for (a, b) in [(0.5, 0.5), (0.1, 0.9), (0.0, 1.0), (0.7, 0.3), (0.25, 0.26)] {
        let pair = ImagePair::new(ImageTensor::filled("c", 16, a).unwrap(), ImageTensor::filled("c", 16, b).unwrap()).unwrap();
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        ssim_err = ssim_err.max((ssim(&pair, &params).unwrap() - expected).abs());
    }
    let ssim_ok = ssim_err <= 1e-6;

    let rho = spearman_dense(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]);
    let rho_ok = rho == Ok(-0.5);

    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
    let mut acc = StatsAccumulator::new(5);
    rows.iter().for_each(|r| acc.push(r).unwrap());
    let s = acc.finish().unwrap();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..5).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut stats_err = 0.0f64;
    for i in 0..5 {
        stats_err = stats_err.max((s.mean[i] - mean[i]).abs());
        for j in 0..5 {
            let c = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
            stats_err = stats_err.max((s.cov_at(i, j) - c).abs());
        }
    }
    let stats_ok = stats_err <= 1e-10;
    outcome(
        psnr_ok && ssim_ok && rho_ok && stats_ok,
        format!("PSNR {p:.4} dB, SSIM max error {ssim_err:.1e}, Spearman {rho:?}, streaming stats max error {stats_err:.1e}"),
    )
}

fn monotonicity() -> Outcome {
    let s = blur_sweep(&[0.0, 1.0, 2.0, 4.0], 64, 64, 5).unwrap();
    let pass = s.psnr_strictly_decreasing() && s.drift_nondecreasing() && s.rho == Some(-1.0);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    outcome(
        pass,
        format!("PSNR [{}], Canny drift [{}], Spearman {:?}", fmt(&s.psnr), fmt(&s.canny_drift), s.rho),
    )
}

fn fixture(dir: &Path) -> Outcome {
    let out = run_cli(&["correlate", "--fixture", "table4", "--output", "fx"], dir);
    if !out.status.success() {
        return outcome(false, format!("correlate exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let al: Value = serde_json::from_slice(&std::fs::read(dir.join("fx/alignment.json")).unwrap()).unwrap();
    let rows = al["rows"].as_array().unwrap();
    let get = |col: &str, key: &str| {
        rows.iter().find(|r| r["column"] == col).and_then(|r| r[key].as_f64()).unwrap_or(f64::NAN)
    };
    let cols = ["Spatial", "Identity", "CLIP", "DINOv2"];
    let psnr_ok = cols.iter().all(|c| get(c, "psnr") > 0.95 - 0.05);
    let psnr_min = cols.iter().map(|c| get(c, "psnr")).fold(f64::INFINITY, f64::min);
    let gfid_ok = cols.iter().all(|c| get(c, "gfid") < 0.4 + 0.05);
    let rfid_spatial = get("Spatial", "rfid");
    let rfid_ok = (rfid_spatial - 0.9).abs() <= 0.05;
    let rfid_all: Vec<String> = cols.iter().map(|c| format!("{c} {:.3}", get(c, "rfid"))).collect();
    let gfid_max = cols.iter().map(|c| get(c, "gfid")).fold(0.0, f64::max);
    outcome(
        psnr_ok && gfid_ok && rfid_ok,
        format!(
            "{} models; |ρ| PSNR min {psnr_min:.3}; rFID vs spatial drift {rfid_spatial:.3} (all: {}); gFID max {gfid_max:.3} on {} models",
            al["models"],
            rfid_all.join(", "),
            al["gfid_models"]
        ),
    )
}

fn probe(dir: &Path) -> Outcome {
    let grads: Vec<_> = [ProbeTask::Edges, ProbeTask::Depth]
        .iter()
        .map(|&t| gradient_check(t, 1e-6).unwrap())
        .collect();
    let grad_ok = grads.iter().all(|g| g.max_rel_error <= 1e-3 && g.checked > 50);
    let out = run_cli(&["probe", "--toy", "--output", "probe"], dir);
    if !out.status.success() {
        return outcome(false, format!("probe exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let r: Value = serde_json::from_slice(&std::fs::read(dir.join("probe/probe.json")).unwrap()).unwrap();
    let (dice, base) = (r["test_dice"].as_f64().unwrap(), r["baseline_dice"].as_f64().unwrap());
    let epochs = r["epochs_run"].as_u64().unwrap();
    outcome(
        grad_ok && dice - base >= 0.2 && epochs <= 20,
        format!(
            "Dice {dice:.3} vs constant {base:.3} after {epochs} epochs; gradient relative error edges {:.1e}, depth {:.1e}",
            grads[0].max_rel_error, grads[1].max_rel_error
        ),
    )
}

const EVAL_CONFIG: &str = r#"
seed = 7
[dataset]
kind = "shapes"
n = 16
side = 64
seed = 7

[[models]]
name = "identity"
adapter = { kind = "identity" }

[[models]]
name = "blur"
adapter = { kind = "blur", sigma = 1.5 }

[[models]]
name = "quantize"
adapter = { kind = "quantize", levels = 6 }

[[models]]
name = "pool"
adapter = { kind = "patch_pool", factor = 8 }

[extractors.clip]
kind = "toy"
seed = 1

[extractors.dinov2]
kind = "toy"
seed = 2
"#;

fn determinism(dir: &Path) -> Outcome {
    std::fs::write(dir.join("eval.toml"), EVAL_CONFIG).unwrap();
    let mut outputs = Vec::new();
    for (out, cache) in [("e1", "cache_a"), ("e2", "cache_a"), ("e3", "cache_b")] {
        let o = run_cli(&["evaluate", "--config", "eval.toml", "--output", out, "--cache", cache], dir);
        if !o.status.success() {
            return outcome(false, format!("evaluate exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
        outputs.push(std::fs::read(dir.join(out).join("metrics.csv")).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!("3 runs (cold cache, warm cache, fresh cache), metrics.csv {} bytes, identical: {same}", outputs[0].len()),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    type Check<'a> = (&'a str, Option<Duration>, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("Fréchet oracle", Some(Duration::from_secs(1)), Box::new(frechet_oracle)),
        ("Alignment error equals expected drift", Some(Duration::from_secs(10)), Box::new(theorem)),
        ("Perfect Fréchet with large drift", Some(Duration::from_secs(30)), Box::new(proposition)),
        ("Block-average Lipschitz guardrail", None, Box::new(guardrail)),
        ("Metric oracles", None, Box::new(metric_oracles)),
        ("Blur monotonicity", Some(Duration::from_secs(120)), Box::new(monotonicity)),
        ("Fixture correlation", Some(Duration::from_secs(1)), Box::new(|| fixture(dir))),
        ("Probe sanity", Some(Duration::from_secs(600)), Box::new(|| probe(dir))),
        ("Evaluate determinism", None, Box::new(|| determinism(dir))),
    ];
    let mut failed = Vec::new();
    for (name, budget, check) in &checks {
        let start = Instant::now();
        let mut o = check();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > *b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {b:?} budget"));
            }
        }
        println!("{} {name}: {} [{took:.2?}]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
