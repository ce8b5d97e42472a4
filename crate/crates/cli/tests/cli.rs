use std::path::Path;
use std::process::{Command, Output};

use driftbench_core::synthetic::shapes_dataset;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_driftbench");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("DRIFTBENCH_CACHE")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const BASE: &str = r#"
[dataset]
kind = "shapes"
n = 6
side = 32
seed = 1

[[models]]
name = "blur"
adapter = { kind = "blur", sigma = 1.0 }
"#;

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = run(&["evaluate", "--config", "missing.toml"], d);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    write(d, "bad.toml", &format!("{BASE}\ncolour = 1\n"));
    let o = run(&["evaluate", "--config", "bad.toml"], d);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    write(d, "ok.toml", BASE);
    let o = run(&["evaluate", "--config", "ok.toml", "--set", "projectors.canny.low=0.9"], d);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = run(&["simulate", "--trials", "0"], d);
    assert_eq!(code(&o), 2);
    let o = run(&["no-such-command"], d);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(
        d,
        "dir.toml",
        "[dataset]\nkind = \"directory\"\npath = \"nowhere\"\n\n[[models]]\nname = \"a\"\nadapter = { kind = \"identity\" }\n",
    );
    let o = run(&["evaluate", "--config", "dir.toml"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    std::fs::create_dir(d.join("empty")).unwrap();
    let o = run(&["score-controlled", "--generated", "empty", "--reference-stats", "empty"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn external_extractor_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let failing = format!("{BASE}\n[projectors.depth]\nkind = \"external\"\ncommand = [\"false\"]\n");
    write(d, "fail.toml", &failing);
    let o = run(&["evaluate", "--config", "fail.toml"], d);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let slow = format!("{BASE}\n[projectors.depth]\nkind = \"external\"\ncommand = [\"sleep\", \"5\"]\ntimeout_secs = 0.2\nmax_concurrent = 6\n");
    write(d, "slow.toml", &slow);
    let o = run(&["evaluate", "--config", "slow.toml"], d);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("timed out"), "{}", stderr(&o));
}

#[test]
fn correlation_needs_three_models() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "two.toml", &format!("{BASE}\n[[models]]\nname = \"q\"\nadapter = {{ kind = \"quantize\", levels = 4 }}\n"));
    let o = run(&["evaluate", "--config", "two.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("out/metrics.csv").exists());
    assert!(!d.join("out/correlation.csv").exists());

    let o = run(&["correlate", "--metrics", "out/metrics.json", "--output", "c"], d);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("got 2"), "{}", stderr(&o));

    let o = run(&["report", "--metrics", "out/metrics.json", "--output", "r"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("r/leaderboard.md").exists());
}

#[test]
fn cache_env_var_and_reconstruction_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "run.toml", BASE);
    let o = Command::new(BIN)
        .args(["evaluate", "--config", "run.toml"])
        .current_dir(d)
        .env("DRIFTBENCH_CACHE", d.join("envcache"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("envcache/blur_s1/img_0000.png").exists());
    assert!(!d.join(".driftbench-cache").exists());

    let manifest = std::fs::read_to_string(d.join("out/pairs/blur.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("source_id,ref_path,recon_path"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn precomputed_reconstructions_pair_by_source_id() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let refs = shapes_dataset(5, 32, 4);
    for img in &refs {
        img.save_png(&d.join("refs").join(format!("{}.png", img.source_id()))).unwrap();
    }
    // two reconstructions, one of them with no reference
    refs[0].save_png(&d.join("recon").join(format!("{}.png", refs[0].source_id()))).unwrap();
    refs[1].save_png(&d.join("recon/orphan.png")).unwrap();
    refs[2].save_png(&d.join("recon").join(format!("{}.png", refs[2].source_id()))).unwrap();
    write(
        d,
        "pre.toml",
        "[dataset]\nkind = \"directory\"\npath = \"refs\"\nside = 32\n\n[[models]]\nname = \"saved\"\nreconstructions = \"recon\"\n",
    );
    let o = run(&["evaluate", "--config", "pre.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&std::fs::read(d.join("out/manifest.json")).unwrap()).unwrap();
    let model = &m["models"][0];
    assert_eq!(model["pairs"], 2);
    assert_eq!(model["unmatched_reconstructions"][0], "orphan");
    assert_eq!(model["unmatched_references"].as_array().unwrap().len(), 3);

    let metrics: Value = serde_json::from_slice(&std::fs::read(d.join("out/metrics.json")).unwrap()).unwrap();
    let text = metrics.to_string();
    assert!(text.contains("no extractor"), "{text}");
}

#[test]
fn overrides_are_stamped_into_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "run.toml", BASE);
    let first_line = |dir: &str| {
        std::fs::read_to_string(d.join(dir).join("metrics.csv"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert!(run(&["evaluate", "--config", "run.toml", "--output", "a"], d).status.success());
    assert!(run(&["evaluate", "--config", "run.toml", "--output", "b", "--set", "projectors.canny.blur_sigma=2.0"], d)
        .status
        .success());
    assert!(first_line("a").contains("config_hash="));
    assert_ne!(first_line("a"), first_line("b"));
}

#[test]
fn simulate_writes_the_documented_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = run(&["simulate", "--trials", "50", "--seed", "3", "--prop1-sizes", "8", "--output", "sim.json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(d.join("sim.json")).unwrap()).unwrap();
    assert_eq!(v["trials"], 50);
    assert!(v["max_abs_gap"].as_f64().unwrap() <= 1e-12);
    let case = &v["prop1_cases"][0];
    assert_eq!(case["n"], 8);
    assert!(case["frechet"].as_f64().unwrap() <= 1e-6);
    assert!(case["mean_drift"].as_f64().unwrap() > 0.0);
}

#[test]
fn score_controlled_matches_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let imgs = shapes_dataset(4, 32, 2);
    for img in &imgs {
        img.save_png(&d.join("gen").join(format!("{}.png", img.source_id()))).unwrap();
    }
    std::fs::create_dir(d.join("cond")).unwrap();
    // all-zero edge maps for two of the images
    for img in &imgs[..2] {
        let zeros = serde_json::json!({"height": 32, "width": 32, "values": vec![0.0; 32 * 32]});
        std::fs::write(d.join("cond").join(format!("{}.json", img.source_id())), zeros.to_string()).unwrap();
    }
    let o = run(
        &["score-controlled", "--generated", "gen", "--conditions", "cond", "--reference-stats", "gen", "--side", "32", "--grid", "4"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(d.join("score.json")).unwrap()).unwrap();
    assert_eq!(v["matched"], 2);
    assert_eq!(v["unmatched_generated"].as_array().unwrap().len(), 2);
    assert!(v["l1"].as_f64().unwrap() > 0.0);
    assert!(v["fid"].as_f64().unwrap().abs() < 1e-9);

    std::fs::create_dir(d.join("nocond")).unwrap();
    std::fs::write(d.join("nocond/other.json"), r#"{"height":1,"width":1,"values":[0]}"#).unwrap();
    let o = run(&["score-controlled", "--generated", "gen", "--conditions", "nocond", "--side", "32"], d);
    assert_eq!(code(&o), 3);
}
