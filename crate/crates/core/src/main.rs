use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msplab::config::Config;
use msplab::datagen::{apply_missing, generate_synthetic, read_dataset, write_dataset, Dataset, ScenarioConfig};
use msplab::eval::{
    emit_report, evaluate, run_matrix, Case, Method, MetricsReport, ReportFormat, Splits, EVAL_MASK_SEED_OFFSET,
};
use msplab::gradsuite::run_suite;
use msplab::model::{Model, Strategy, TrainMode};
use msplab::objective::ortho_value;
use msplab::trainer::{loss_csv, manifest_text, pretrain_on, train, write_text};
use msplab::{Error, Result};

/// Exit code of `gradcheck` when some operation fails its check.
const GRADCHECK_VIOLATION: u8 = 5;

#[derive(Parser)]
#[command(name = "msplab", version, about = "Prompt tuning under missing modalities on synthetic data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset, optionally masked.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Number of samples; defaults to the three splits combined.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_name = "PIMG,PTXT")]
        scenario: Option<String>,
    },
    /// Finetune a prompt-free model on modality-complete pretext data.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one method on a masked train split.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "msp")]
        strategy: String,
        /// Pretrained backbone checkpoint.
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PIMG,PTXT")]
        scenario: Option<String>,
    },
    /// Score a trained model on a masked eval split.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "msp")]
        strategy: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PIMG,PTXT")]
        scenario: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the training x inference scenario grid.
    Matrix {
        #[arg(long)]
        out: PathBuf,
        /// Write only this format instead of all three.
        #[arg(long)]
        format: Option<String>,
        #[arg(long, value_name = "S1,S2,..")]
        seeds: Option<String>,
        /// Comma-separated methods.
        #[arg(long)]
        strategy: Option<String>,
        /// Restrict training to this scenario.
        #[arg(long, value_name = "PIMG,PTXT")]
        scenario: Option<String>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Convert a csv or json report to another format.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn scenario_arg(s: Option<&str>, fallback: Case) -> Result<Case> {
    match s {
        Some(s) => Ok(Case::from(&s.parse::<ScenarioConfig>()?)),
        None => Ok(fallback),
    }
}

fn is_complete(ds: &Dataset) -> bool {
    ds.pattern_counts().0 == ds.len()
}

/// Masks complete data under `case`; data that is already masked is used
/// as is unless a scenario was requested explicitly.
fn prepare_split(ds: Dataset, case: Case, explicit: bool, seed: u64, cfg: &Config) -> Result<Dataset> {
    if is_complete(&ds) {
        let sc = ScenarioConfig::new(case.p_img, case.p_txt, seed)?;
        apply_missing(&ds, &sc, &cfg.matrix.placeholder)
    } else if explicit {
        Err(Error::Data("--scenario needs modality-complete data".into()))
    } else {
        Ok(ds)
    }
}

fn load_or_split(path: Option<&Path>, cfg: &Config, pick: fn(Splits) -> Dataset) -> Result<Dataset> {
    match path {
        Some(p) => read_dataset(p),
        None => Ok(pick(Splits::from_config(&cfg.matrix)?)),
    }
}

fn manifest(cfg: &Config, extra: Vec<(String, String)>) -> String {
    let mut e = cfg.entries();
    e.extend(extra);
    manifest_text(&e)
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = Config::load(cli.common.config.as_deref(), &cli.common.sets)?;
    match cli.cmd {
        Cmd::SynthData { out, n, scenario } => {
            let m = &cfg.matrix;
            let n = n.unwrap_or(m.n_pretext + m.n_train + m.n_eval);
            let mut ds = generate_synthetic(&cfg.data_spec(n))?;
            if let Some(s) = scenario {
                let case = scenario_arg(Some(&s), cfg.scenario)?;
                ds = prepare_split(ds, case, true, cfg.seed, &cfg)?;
            }
            create_dir(&out)?;
            write_dataset(&ds, out.join("dataset.jsonl"))?;
            let (c, i, t) = ds.pattern_counts();
            println!("samples={} complete={c} image_only={i} text_only={t} hash={}", ds.len(), ds.hash());
        }
        Cmd::Pretrain { out, data } => {
            let ds = load_or_split(data.as_deref(), &cfg, |s| s.pretext)?;
            let model_cfg = cfg.model_shape().sized_for(&ds);
            let pre = pretrain_on::<f64>(&model_cfg, &ds, &cfg.pretrain_config())?;
            create_dir(&out)?;
            pre.model.save(&out)?;
            write_text(out.join("loss.csv"), &loss_csv(&pre.curve))?;
            let extra = vec![
                ("command".to_string(), "pretrain".to_string()),
                ("dataset_hash".to_string(), ds.hash()),
                ("heldout_accuracy".to_string(), pre.heldout_accuracy.to_string()),
                ("backbone_hash".to_string(), pre.model.backbone.params.hash()),
            ];
            write_text(out.join("manifest.txt"), &manifest(&cfg, extra))?;
            println!("heldout_accuracy={}", pre.heldout_accuracy);
        }
        Cmd::Train {
            out,
            strategy,
            backbone,
            data,
            scenario,
        } => {
            let method: Method = strategy.parse()?;
            let case = scenario_arg(scenario.as_deref(), cfg.scenario)?;
            let ds = load_or_split(data.as_deref(), &cfg, |s| s.train)?;
            let ds = prepare_split(ds, case, scenario.is_some(), cfg.seed, &cfg)?;
            let model_cfg = cfg.model_shape().sized_for(&ds);
            let mut model = Model::<f64>::build(model_cfg, method.strategy(), &ds.registry, cfg.seed)?;
            match &backbone {
                Some(p) => model.load_backbone(p)?,
                None if method.mode() == TrainMode::FinetuneAll => {}
                None => return Err(Error::Config(format!("training `{method}` needs --backbone"))),
            }
            model.backbone.frozen = method.mode() != TrainMode::FinetuneAll;
            let oc = msplab::objective::ObjectiveConfig {
                task_kind: ds.label_kind.into(),
                ..cfg.objective().clone()
            };
            let run = train(model, &ds, &cfg.tune_config(method), &oc)?;
            create_dir(&out)?;
            run.model.save(&out)?;
            write_text(out.join("loss.csv"), &loss_csv(&run.curve))?;
            let mut extra = vec![
                ("command".to_string(), "train".to_string()),
                ("method".to_string(), method.to_string()),
                ("train_scenario".to_string(), case.label()),
                ("dataset_hash".to_string(), ds.hash()),
            ];
            if method == Method::Msp {
                extra.push(("final_ortho".to_string(), ortho_value(&run.model.bank, oc.eps)?.to_string()));
            }
            write_text(out.join("manifest.txt"), &manifest(&cfg, extra))?;
            if let Some(last) = run.curve.last() {
                println!("steps={} final_loss={}", run.curve.len(), last.total);
            }
        }
        Cmd::Eval {
            model: dir,
            strategy,
            data,
            scenario,
            out,
        } => {
            let method: Method = strategy.parse()?;
            let case = scenario_arg(scenario.as_deref(), cfg.scenario)?;
            let ds = load_or_split(data.as_deref(), &cfg, |s| s.eval)?;
            let ds = prepare_split(ds, case, scenario.is_some(), cfg.seed + EVAL_MASK_SEED_OFFSET, &cfg)?;
            let model_cfg = cfg.model_shape().sized_for(&ds);
            let mut model = Model::<f64>::build(model_cfg, method.strategy(), &ds.registry, cfg.seed)?;
            model.load_backbone(dir.join("backbone.ckpt"))?;
            model.load_head(dir.join("head.ckpt"))?;
            if method.strategy() != Strategy::None {
                model.load_prompts(dir.join("prompts.ckpt"))?;
            }
            let (metric, value, flagged) = evaluate(&model, &ds, cfg.matrix.threshold)?;
            println!("{metric}={value}");
            if let Some(out) = out {
                create_dir(&out)?;
                let body = serde_json::json!({
                    "method": method.as_str(),
                    "eval_scenario": case,
                    "metric": metric,
                    "value": value,
                    "flagged": flagged,
                    "dataset_hash": ds.hash(),
                });
                let text = format!("{}\n", serde_json::to_string_pretty(&body).expect("json value"));
                write_text(out.join("eval.json"), &text)?;
            }
        }
        Cmd::Matrix {
            out,
            format,
            seeds,
            strategy,
            scenario,
        } => {
            let mut mc = cfg.matrix.clone();
            if let Some(s) = seeds {
                mc.seeds = s
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad seed `{x}`"))))
                    .collect::<Result<_>>()?;
            }
            if let Some(s) = strategy {
                mc.methods = s.split(',').map(|x| x.trim().parse()).collect::<Result<_>>()?;
            }
            if let Some(s) = scenario {
                mc.train_scenarios = vec![scenario_arg(Some(&s), cfg.scenario)?];
            }
            let formats = match format {
                Some(f) => vec![f.parse::<ReportFormat>()?],
                None => vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown],
            };
            let outcome = run_matrix(&mc)?;
            create_dir(&out)?;
            for f in formats {
                emit_report(&outcome.report, f, out.join(format!("report.{}", f.extension())))?;
            }
            let mut cells = String::from("method,train_p_img,train_p_txt,seed,steps,first_loss,last_loss,final_ortho\n");
            for c in &outcome.cells {
                let ortho = c.final_ortho.map(|o| format!("{o:?}")).unwrap_or_default();
                cells += &format!(
                    "{},{:?},{:?},{},{},{:?},{:?},{ortho}\n",
                    c.method, c.train.p_img, c.train.p_txt, c.seed, c.steps, c.first_loss, c.last_loss
                );
            }
            write_text(out.join("cells.csv"), &cells)?;
            let run_cfg = Config {
                matrix: mc,
                ..cfg.clone()
            };
            let mut extra = vec![
                ("command".to_string(), "matrix".to_string()),
                ("train_hash".to_string(), outcome.train_hash.clone()),
                ("eval_hash".to_string(), outcome.eval_hash.clone()),
            ];
            for (s, a) in &outcome.pretext_accuracy {
                extra.push((format!("pretext_accuracy.{s}"), a.to_string()));
            }
            write_text(out.join("manifest.txt"), &manifest(&run_cfg, extra))?;
            print!("{}", outcome.report.to_markdown());
        }
        Cmd::Gradcheck { instances } => {
            let res = run_suite(instances, cfg.seed)?;
            println!("{:<22} {:>9} {:>12} {:>8}", "op", "instances", "max_rel_err", "status");
            let mut ok = true;
            for r in &res {
                let status = if r.passed() { "ok" } else { "FAIL" };
                ok &= r.passed();
                println!("{:<22} {:>9} {:>12.3e} {:>8}", r.op, r.instances, r.max_rel_err, status);
            }
            if !ok {
                return Ok(GRADCHECK_VIOLATION);
            }
        }
        Cmd::Report { input, format, out } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let report = match input.extension().and_then(|e| e.to_str()) {
                Some("json") => MetricsReport::from_json(&text)?,
                Some("csv") => MetricsReport::from_csv(&text)?,
                _ => return Err(Error::Config("report input must be a .csv or .json file".into())),
            };
            let f: ReportFormat = format.parse()?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    emit_report(&report, f, dir.join(format!("report.{}", f.extension())))?;
                }
                None => print!("{}", report.render(f)),
            }
        }
    }
    Ok(0)
}
