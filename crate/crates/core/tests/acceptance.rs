//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Exits non-zero on any failure when `MSPLAB_ACCEPT_STRICT=1`; otherwise
//! it reports and exits 0 so the statistical criteria can be tracked
//! without masking the deterministic test targets.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{brute_abs_cosine, brute_accuracy, brute_f1_macro, BayesOracle};
use msplab::datagen::{
    apply_missing, generate_synthetic, Dataset, ModalityRegistry, PlaceholderPolicy, Sample, ScenarioConfig,
    SyntheticTask, SyntheticTaskSpec, IMAGE_ID,
};
use msplab::diffcore::{Graph, Tensor};
use msplab::eval::{accuracy, f1_macro, run_matrix, Case, MatrixConfig, MatrixOutcome, Method};
use msplab::gradsuite::run_suite;
use msplab::model::{
    bind, build_prompt_bank, forward_graph, select_prompt, ModelConfig, ParamGroup, Strategy, TrainMode,
};
use msplab::objective::{ortho_value, ObjectiveConfig, ORTHO_EPS};
use msplab::trainer::{class_accuracy, pretrain_on, train, TrainConfig};
use msplab::Model64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);

const MATCHED: Case = Case { p_img: 1.0, p_txt: 0.3 };
const UNSEEN: Case = Case { p_img: 0.3, p_txt: 1.0 };

fn tiny_spec(n: usize, seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        a: 2,
        b: 2,
        h: 4,
        w: 4,
        content_len: 2,
        group_size: 2,
        n_distractors: 2,
        n_samples: n,
        seed,
        ..SyntheticTaskSpec::default()
    }
}

fn tiny_cfg(ds: &Dataset) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        patch_size: 2,
        prompt_len: 2,
        ..ModelConfig::for_dataset(ds)
    }
}

fn masked(ds: &Dataset, p_img: f64, p_txt: f64, seed: u64) -> Dataset {
    apply_missing(ds, &ScenarioConfig::new(p_img, p_txt, seed).unwrap(), &PlaceholderPolicy::default()).unwrap()
}

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let checks = match run_suite(20, 2024) {
        Ok(c) => c,
        Err(e) => return (false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
    let enough = checks.iter().all(|c| c.instances >= 20);
    (
        failed.is_empty() && enough && checks.len() == 8 && secs < 60.0,
        format!("{} ops x 20, worst rel err {worst:.2e}, failed {failed:?}, {secs:.1}s", checks.len()),
    )
}

fn ortho_oracle() -> Verdict {
    let reg = ModalityRegistry::text_image(4, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let cfg = ModelConfig {
            d_model: 4 * rng.random_range(1..5),
            n_layers: 2,
            prompt_len: rng.random_range(1..6),
            prompt_layers: if i % 2 == 0 { vec![0] } else { vec![0, 1] },
            n_heads: 1,
            ffn_mult: 1,
            vocab_size: 8,
            max_text_len: 4,
            patch_size: 2,
            image_h: 4,
            image_w: 4,
            n_classes: 2,
        };
        let mut bank = build_prompt_bank::<f64>(Strategy::Msp, &cfg, &reg, i).unwrap();
        let shape = bank.get("P_is").unwrap().shape().to_vec();
        for key in ["P_is", "P_ts"] {
            let t = if i == 0 {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, rng.random_range(1e-3..10.0), &mut rng)
            };
            *bank.params.get_mut(key).unwrap() = t;
        }
        let got = ortho_value(&bank, ORTHO_EPS).unwrap();
        let want = brute_abs_cosine(bank.get("P_is").unwrap().data(), bank.get("P_ts").unwrap().data(), ORTHO_EPS);
        if i == 0 && got != 0.0 {
            return (false, format!("all-zero pair gave {got}"));
        }
        worst = worst.max((got - want).abs());
    }
    (worst <= 1e-12, format!("100 pairs incl. all-zero, max |diff| {worst:.1e}"))
}

fn prompt_count_law() -> Verdict {
    let cfg = ModelConfig {
        d_model: 4,
        n_layers: 1,
        n_heads: 1,
        ffn_mult: 1,
        vocab_size: 8,
        max_text_len: 4,
        patch_size: 2,
        image_h: 4,
        image_w: 4,
        n_classes: 2,
        prompt_len: 2,
        prompt_layers: vec![0],
    };
    let mut sizes = Vec::new();
    let mut ok = true;
    for m in 1..=5 {
        let reg = ModalityRegistry::generic(m).unwrap();
        let msp = build_prompt_bank::<f64>(Strategy::Msp, &cfg, &reg, 1).unwrap().len();
        let map = build_prompt_bank::<f64>(Strategy::Map, &cfg, &reg, 1).unwrap().len();
        ok &= msp == m && map == (1 << m) - 1;
        sizes.push(format!("M={m}:{msp}/{map}"));
    }
    (ok, format!("msp/map sizes {}", sizes.join(" ")))
}

fn msp_additivity() -> Verdict {
    let reg = ModalityRegistry::text_image(4, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100u64 {
        let d = 4 * rng.random_range(1..4);
        let cfg = ModelConfig {
            d_model: d,
            n_layers: 3,
            n_heads: 1,
            ffn_mult: 1,
            vocab_size: 8,
            max_text_len: 4,
            patch_size: 2,
            image_h: 4,
            image_w: 4,
            n_classes: 2,
            prompt_len: rng.random_range(1..6),
            prompt_layers: (0..rng.random_range(1..4)).collect(),
        };
        let mut bank = build_prompt_bank::<f64>(Strategy::Msp, &cfg, &reg, i).unwrap();
        let shape = bank.get("P_is").unwrap().shape().to_vec();
        for key in ["P_is", "P_ts"] {
            *bank.params.get_mut(key).unwrap() = Tensor::randn(&shape, 5.0, &mut rng);
        }
        let img = select_prompt(&bank, reg.only('i').unwrap()).unwrap().unwrap();
        let txt = select_prompt(&bank, reg.only('t').unwrap()).unwrap().unwrap();
        let both = select_prompt(&bank, reg.complete()).unwrap().unwrap();
        let sum: Vec<f64> = img.data().iter().zip(txt.data()).map(|(a, b)| a + b).collect();
        let sum = Tensor::new(shape.clone(), sum).unwrap();
        if !bits_equal(&both, &sum) {
            return (false, format!("bank {i}: complete prompt differs from the sum"));
        }
    }
    (true, "100 random banks, bitwise".into())
}

fn unlearned_prompt() -> Verdict {
    let ds = masked(&generate_synthetic(&tiny_spec(40, 4)).unwrap(), 1.0, 0.3, 9);
    let model = Model64::build(tiny_cfg(&ds), Strategy::Map, &ds.registry, 2).unwrap();
    let before = model.bank.get("P_t").unwrap().clone();
    let p_i = model.bank.get("P_i").unwrap().clone();
    let tc = TrainConfig {
        epochs: 2,
        strategy: Strategy::Map,
        ..TrainConfig::default()
    };
    let oc = ObjectiveConfig::default();
    let run = train(model, &ds, &tc, &oc).unwrap();
    let p_t_same = bits_equal(run.model.bank.get("P_t").unwrap(), &before);
    let p_i_moved = !bits_equal(run.model.bank.get("P_i").unwrap(), &p_i);

    let img_only = masked(&generate_synthetic(&tiny_spec(6, 5)).unwrap(), 1.0, 0.0, 1);
    let batch: Vec<&Sample> = img_only.samples.iter().collect();
    let msp = Model64::build(tiny_cfg(&img_only), Strategy::Msp, &img_only.registry, 3).unwrap();
    let mut g = Graph::new();
    let binding = bind(&mut g, &msp, &msp.trainable(TrainMode::PromptTune).unwrap());
    let z = forward_graph(&mut g, &msp, &binding, &batch).unwrap();
    let labels: Vec<usize> = batch.iter().map(|s| s.label.class().unwrap()).collect();
    let loss = g.cross_entropy(z, &labels).unwrap();
    g.backward(loss).unwrap();
    let all_image_only = img_only.samples.iter().all(|s| s.pattern == img_only.registry.only(IMAGE_ID).unwrap());
    let zero = |key: &str| {
        g.grad(binding.get(ParamGroup::Prompt, key))
            .is_none_or(|t| t.data().iter().all(|&x| x == 0.0))
    };
    let ts_zero = zero("P_ts");
    let is_live = !zero("P_is");
    (
        p_t_same && p_i_moved && ts_zero && is_live && all_image_only,
        format!(
            "map P_t unchanged after {} steps: {p_t_same}; msp grad(P_ts)=0 on image-only batch: {ts_zero}",
            run.curve.len()
        ),
    )
}

fn freezing() -> Verdict {
    let ds = masked(&generate_synthetic(&tiny_spec(30, 6)).unwrap(), 0.65, 0.65, 2);
    let mut details = Vec::new();
    let mut ok = true;
    for method in [Method::Head, Method::Map, Method::Msp] {
        let name = method.as_str();
        let mut model = Model64::build(tiny_cfg(&ds), method.strategy(), &ds.registry, 8).unwrap();
        model.backbone.frozen = true;
        let before = model.backbone.params.hash();
        let tc = TrainConfig {
            epochs: 2,
            strategy: method.strategy(),
            mode: method.mode(),
            ..TrainConfig::default()
        };
        let run = train(model, &ds, &tc, &ObjectiveConfig::default()).unwrap();
        let same = run.model.backbone.params.hash() == before;
        ok &= same;
        details.push(format!("{name}:{}", if same { "same" } else { "CHANGED" }));
    }
    (ok, format!("backbone hash before/after {}", details.join(" ")))
}

fn masking_fractions() -> Verdict {
    let mut worst = 0i64;
    let mut zero_modality = 0;
    for n in [10, 100, 1000] {
        let ds = generate_synthetic(&tiny_spec(n, 1)).unwrap();
        for sc in ScenarioConfig::default_triple(3) {
            let out = apply_missing(&ds, &sc, &PlaceholderPolicy::default()).unwrap();
            let (c, i, t) = out.pattern_counts();
            let want = |f: f64| (f * n as f64).round() as i64;
            for (got, w) in [
                (c, want(sc.p_img + sc.p_txt - 1.0)),
                (i, want(1.0 - sc.p_txt)),
                (t, want(1.0 - sc.p_img)),
            ] {
                worst = worst.max((got as i64 - w).abs());
            }
            zero_modality += out.samples.iter().filter(|s| s.pattern.count() == 0).count();
        }
    }
    (
        worst <= 1 && zero_modality == 0,
        format!("N in {{10,100,1000}} x 3 scenarios, max count offset {worst}, zero-modality samples {zero_modality}"),
    )
}

fn robustness_matrix() -> (MatrixConfig, MatrixOutcome, f64) {
    let cfg = MatrixConfig {
        methods: vec![Method::Head, Method::Map, Method::Msp],
        train_scenarios: vec![MATCHED],
        eval_scenarios: vec![MATCHED, UNSEEN],
        ..MatrixConfig::default()
    };
    let t = Instant::now();
    let out = run_matrix(&cfg).expect("robustness matrix");
    (cfg, out, t.elapsed().as_secs_f64())
}

fn ortho_dynamics(out: &MatrixOutcome) -> Verdict {
    let runs: Vec<_> = out.cells.iter().filter(|c| c.method == Method::Msp).collect();
    let below = runs.iter().filter(|c| c.final_ortho.is_some_and(|o| o < 0.1)).count();
    let slowest = runs.iter().map(|c| c.seconds).fold(0.0, f64::max);
    let vals: Vec<String> = runs
        .iter()
        .map(|c| format!("{:.4}", c.final_ortho.unwrap_or(f64::NAN)))
        .collect();
    (
        runs.len() == 5 && below >= 4 && slowest < 180.0,
        format!("final |cos| [{}], {below}/5 below 0.1, slowest run {slowest:.0}s", vals.join(", ")),
    )
}

fn robustness_ordering(cfg: &MatrixConfig, out: &MatrixOutcome, secs: f64) -> Verdict {
    let get = |m: Method, ev: Case, s: u64| out.report.get(m, MATCHED, ev, s).expect("matrix row").value;
    let mut unseen_wins = 0;
    let mut matched_wins = 0;
    let mut per_seed = Vec::new();
    for &s in &cfg.seeds {
        let (msp_u, map_u) = (get(Method::Msp, UNSEEN, s), get(Method::Map, UNSEEN, s));
        let (msp_m, head_m) = (get(Method::Msp, MATCHED, s), get(Method::Head, MATCHED, s));
        unseen_wins += usize::from(msp_u >= map_u);
        matched_wins += usize::from(msp_m > head_m);
        per_seed.push(format!("s{s}: {msp_u:.3}/{map_u:.3} {msp_m:.3}/{head_m:.3}"));
    }
    let pretext: Vec<String> = out.pretext_accuracy.iter().map(|(_, a)| format!("{a:.2}")).collect();
    (
        unseen_wins >= 4 && matched_wins >= 4 && secs < 1800.0,
        format!(
            "msp>=map unseen {unseen_wins}/5, msp>head matched {matched_wins}/5, {secs:.0}s; \
             msp/map unseen, msp/head matched [{}]; pretext acc [{}]",
            per_seed.join("; "),
            pretext.join(", ")
        ),
    )
}

fn modality_information() -> Verdict {
    let spec = SyntheticTaskSpec {
        n_samples: 2500,
        ..SyntheticTaskSpec::default()
    };
    let task = SyntheticTask::new(spec.clone()).unwrap();
    let all = task.generate();
    let (fit, held) = all.split_at(2000).unwrap();
    let cfg = ModelConfig::for_spec(&spec);
    let tc = TrainConfig {
        seed: 1,
        ..MatrixConfig::default().pretrain
    };
    let pre = pretrain_on::<f64>(&cfg, &fit, &tc).unwrap();
    let oracle = BayesOracle::new(&task);

    let image_only = masked(&held, 1.0, 0.0, 4);
    let model_img = class_accuracy(&pre.model, &image_only.samples).unwrap();
    let model_all = class_accuracy(&pre.model, &held.samples).unwrap();
    let (bayes_img, bayes_all) = (oracle.accuracy(&image_only), oracle.accuracy(&held));
    let ceiling = oracle.ceiling(&image_only);
    // the model may not beat the Bayes rule by more than sampling noise on 500 draws
    let slack = 0.05;
    let ok = model_img <= 0.30
        && model_all >= 0.80
        && ceiling == 0.25
        && model_img <= bayes_img + slack
        && model_all <= bayes_all + slack;
    (
        ok,
        format!(
            "image-only {model_img:.3} (Bayes {bayes_img:.3}, ceiling {ceiling}), \
             complete {model_all:.3} (Bayes {bayes_all:.3})"
        ),
    )
}

const TINY_MATRIX: &str = "\
seeds=1,2
data.a=2
data.b=2
data.h=4
data.w=4
data.content_len=2
data.group_size=2
data.n_distractors=2
split.n_pretext=30
split.n_train=24
split.n_eval=20
model.d_model=8
model.n_layers=1
model.n_heads=2
model.patch_size=2
model.prompt_len=2
pretrain.epochs=2
train.epochs=2
matrix.methods=finetune,head,map,msp
";

fn determinism(dir: &Path) -> Verdict {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY_MATRIX).unwrap();
    for run in ["a", "b"] {
        let status = Command::new(env!("CARGO_BIN_EXE_msplab"))
            .arg("--config")
            .arg(&cfg)
            .args(["matrix", "--out"])
            .arg(dir.join(run))
            .env_remove("MSPLAB_SEED")
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return (false, format!("matrix run {run} exited with {status}"));
        }
    }
    let mut diffs = Vec::new();
    for f in ["report.csv", "report.json", "report.md", "cells.csv", "manifest.txt"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        if a != b {
            diffs.push(f);
        }
    }
    (
        diffs.is_empty(),
        format!("two `msplab matrix` runs (4 methods x 3 x 3 scenarios x 2 seeds), differing files {diffs:?}"),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..25);
        let k = rng.random_range(1..7);
        let threshold = rng.random_range(0.05..0.95);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
        let labels: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(0..2)).collect()).collect();
        let f1 = f1_macro(&scores, &labels, threshold).unwrap().value;
        worst = worst.max((f1 - brute_f1_macro(&scores, &labels, threshold)).abs());

        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        worst = worst.max((accuracy(&preds, &truth).unwrap() - brute_accuracy(&preds, &truth)).abs());
    }
    (worst <= 1e-12, format!("200 instances each, max |diff| {worst:.1e}"))
}

fn main() {
    let strict = std::env::var("MSPLAB_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let started = Instant::now();
    let scratch = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |id: u32, name: &'static str, v: Verdict| {
        println!("{} {id:>2} {name}: {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        results.push((id, name, v));
    };

    report(1, "gradient suite", gradient_suite());
    report(2, "orthogonality oracle", ortho_oracle());
    report(3, "prompt-count law", prompt_count_law());
    report(4, "msp additivity", msp_additivity());
    report(5, "unlearned prompt", unlearned_prompt());
    report(6, "frozen backbone", freezing());
    report(7, "masking fractions", masking_fractions());
    let (cfg, out, secs) = robustness_matrix();
    report(8, "orthogonality dynamics", ortho_dynamics(&out));
    report(9, "robustness ordering", robustness_ordering(&cfg, &out, secs));
    report(10, "modality information", modality_information());
    report(11, "determinism", determinism(scratch.path()));
    report(12, "metric oracles", metric_oracles());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed, failed {failed:?}, {:.0}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
