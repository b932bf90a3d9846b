use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small enough for a few seconds per command
seed=7
seeds=7
data.a=2
data.b=2
data.h=4
data.w=4
data.content_len=2
data.group_size=2
data.n_distractors=2
split.n_pretext=20
split.n_train=12
split.n_eval=10
model.d_model=8
model.n_layers=1
model.n_heads=2
model.patch_size=2
model.prompt_len=2
pretrain.epochs=1
pretrain.batch_size=8
train.epochs=1
matrix.methods=head,map,msp
matrix.train_scenarios=1,0.3
matrix.eval_scenarios=1,0.3;0.3,1
";

fn msplab(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.cfg");
    if !cfg.exists() {
        std::fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_msplab"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .env_remove("MSPLAB_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let stdout = ok(&msplab(d, &["synth-data", "--out", path(&d.join("data")), "--n", "40"]));
    assert!(stdout.starts_with("samples=40 complete=40 "), "{stdout}");
    let data = d.join("data/dataset.jsonl");
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 41);

    let stdout = ok(&msplab(d, &["pretrain", "--out", path(&d.join("pre")), "--data", path(&data)]));
    assert!(stdout.starts_with("heldout_accuracy="));
    for f in ["backbone.ckpt", "head.ckpt", "loss.csv", "manifest.txt"] {
        assert!(d.join("pre").join(f).exists(), "{f}");
    }

    let backbone = d.join("pre/backbone.ckpt");
    for strategy in ["msp", "map", "head"] {
        let out = d.join(strategy);
        let stdout = ok(&msplab(
            d,
            &[
                "train", "--out", path(&out), "--strategy", strategy,
                "--backbone", path(&backbone), "--data", path(&data), "--scenario", "1,0.3",
            ],
        ));
        assert!(stdout.starts_with("steps=7 final_loss="), "{stdout}");
        let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("step,L_cls,L_ortho,L_total"));
        assert_eq!(csv.lines().count(), 8);

        let stdout = ok(&msplab(
            d,
            &[
                "eval", "--model", path(&out), "--strategy", strategy,
                "--data", path(&data), "--scenario", "0.3,1", "--out", path(&out),
            ],
        ));
        let value: f64 = stdout.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&value));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
        assert_eq!(json["value"].as_f64(), Some(value));
    }
    let manifest = std::fs::read_to_string(d.join("msp/manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with("final_ortho=")));
    assert!(manifest.lines().any(|l| l == "objective.lambda=0.15"));
}

#[test]
fn matrix_is_byte_reproducible_and_report_converts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let first = ok(&msplab(d, &["matrix", "--out", path(&d.join("a"))]));
    let second = ok(&msplab(d, &["matrix", "--out", path(&d.join("b"))]));
    assert_eq!(first, second);
    for f in ["report.csv", "report.json", "report.md", "cells.csv", "manifest.txt"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    // 3 methods x 2 eval scenarios x 1 seed
    let csv = std::fs::read_to_string(d.join("a/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let stdout = ok(&msplab(
        d,
        &["report", "--input", path(&d.join("a/report.json")), "--format", "csv"],
    ));
    assert_eq!(stdout, csv);
    let md = std::fs::read_to_string(d.join("a/report.md")).unwrap();
    let stdout = ok(&msplab(d, &["report", "--input", path(&d.join("a/report.csv")), "--format", "markdown"]));
    assert_eq!(stdout, md);
}

#[test]
fn seed_environment_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_msplab"));
        std::fs::write(d.join("tiny.cfg"), TINY).unwrap();
        cmd.arg("--config").arg(d.join("tiny.cfg")).args(extra);
        cmd.args(["synth-data", "--out", path(&d.join(out)), "--n", "8", "--scenario", "0.65,0.65"]);
        match env {
            Some(s) => cmd.env("MSPLAB_SEED", s),
            None => cmd.env_remove("MSPLAB_SEED"),
        };
        ok(&cmd.output().unwrap())
    };
    let base = run(None, &[], "x");
    assert_eq!(run(Some("7"), &[], "y"), base);
    let other = run(Some("8"), &[], "z");
    assert_ne!(other, base);
    // --set wins over the environment
    assert_eq!(run(Some("8"), &["--set", "seed=7"], "w"), base);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = msplab(d, &["--set", "model.d_modle=8", "synth-data", "--out", path(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_modle"));

    let out = msplab(d, &["--set", "train.lr=-1", "train", "--out", path(&d.join("x")), "--strategy", "finetune"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"not\": \"a header\"}\n").unwrap();
    let out = msplab(d, &["pretrain", "--out", path(&d.join("x")), "--data", path(&bad)]);
    assert_eq!(out.status.code(), Some(3));

    let out = msplab(
        d,
        &["--set", "train.lr=1e300", "train", "--out", path(&d.join("x")), "--strategy", "finetune"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let out = msplab(d, &["gradcheck", "--instances", "2"]);
    let stdout = ok(&out);
    assert!(stdout.lines().any(|l| l.contains("forward_wrt_prompts")));
}
