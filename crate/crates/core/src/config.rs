//! Flat `key = value` run configuration.
//!
//! Later sources win: built-in defaults, the config file, `MSPLAB_SEED`,
//! then `--set key=value` overrides.

use std::path::Path;
use std::str::FromStr;

use crate::datagen::{LabelKind, ScenarioConfig, SyntheticTaskSpec};
use crate::error::{Error, Result};
use crate::eval::{Case, MatrixConfig, Method};
use crate::model::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "MSPLAB_SEED";

/// Every tunable of the pipeline in one place.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Run seed: model init, batch order and masking.
    pub seed: u64,
    /// Scenario of a single train or eval run.
    pub scenario: Case,
    pub matrix: MatrixConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            scenario: Case { p_img: 1.0, p_txt: 0.3 },
            matrix: MatrixConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_case(v: &str) -> Result<Case> {
    let sc: ScenarioConfig = v.parse()?;
    Ok(Case::from(&sc))
}

/// `pimg,ptxt;pimg,ptxt;...`
fn parse_cases(v: &str) -> Result<Vec<Case>> {
    v.split(';').map(|c| parse_case(c.trim())).collect()
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn case_str(c: &Case) -> String {
    format!("{},{}", c.p_img, c.p_txt)
}

fn set_train(tc: &mut TrainConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    let a = &mut tc.adam;
    match field {
        "lr" => a.lr = parse(key, v)?,
        "weight_decay" => a.weight_decay = parse(key, v)?,
        "beta1" => a.beta1 = parse(key, v)?,
        "beta2" => a.beta2 = parse(key, v)?,
        "adam_eps" => a.eps = parse(key, v)?,
        "batch_size" => tc.batch_size = parse(key, v)?,
        "epochs" => tc.epochs = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_entries(prefix: &str, tc: &TrainConfig) -> Vec<(String, String)> {
    let a = &tc.adam;
    [
        ("lr", a.lr.to_string()),
        ("weight_decay", a.weight_decay.to_string()),
        ("beta1", a.beta1.to_string()),
        ("beta2", a.beta2.to_string()),
        ("adam_eps", a.eps.to_string()),
        ("batch_size", tc.batch_size.to_string()),
        ("epochs", tc.epochs.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}.{k}"), v))
    .collect()
}

impl Config {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.matrix;
        let (d, mc) = (&mut m.data, &mut m.model);
        match key {
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.matrix.seeds = parse_list(key, v)?,
            "scenario" => self.scenario = parse_case(v)?,
            "data.a" => d.a = parse(key, v)?,
            "data.b" => d.b = parse(key, v)?,
            "data.h" => d.h = parse(key, v)?,
            "data.w" => d.w = parse(key, v)?,
            "data.content_len" => d.content_len = parse(key, v)?,
            "data.group_size" => d.group_size = parse(key, v)?,
            "data.n_distractors" => d.n_distractors = parse(key, v)?,
            "data.noise_sigma" => d.noise_sigma = parse(key, v)?,
            "data.text_noise" => d.text_noise = parse(key, v)?,
            "data.seed" => d.seed = parse(key, v)?,
            "data.label_kind" => {
                d.label_kind = match v {
                    "multiclass" => LabelKind::Multiclass,
                    "multilabel" => LabelKind::Multilabel,
                    _ => return Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
                }
            }
            "split.n_pretext" => m.n_pretext = parse(key, v)?,
            "split.pretext_seed" => {
                m.pretext_seed = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "split.n_train" => m.n_train = parse(key, v)?,
            "split.n_eval" => m.n_eval = parse(key, v)?,
            "model.d_model" => mc.d_model = parse(key, v)?,
            "model.n_layers" => mc.n_layers = parse(key, v)?,
            "model.n_heads" => mc.n_heads = parse(key, v)?,
            "model.ffn_mult" => mc.ffn_mult = parse(key, v)?,
            "model.patch_size" => mc.patch_size = parse(key, v)?,
            "model.prompt_len" => mc.prompt_len = parse(key, v)?,
            "model.prompt_layers" => mc.prompt_layers = parse_list(key, v)?,
            "objective.lambda" => m.objective.lambda = parse(key, v)?,
            "objective.eps" => m.objective.eps = parse(key, v)?,
            "eval.threshold" => m.threshold = parse(key, v)?,
            "matrix.methods" => m.methods = parse_list(key, v)?,
            "matrix.train_scenarios" => m.train_scenarios = parse_cases(v)?,
            "matrix.eval_scenarios" => m.eval_scenarios = parse_cases(v)?,
            _ => {
                let known = match key.split_once('.') {
                    Some(("pretrain", f)) => set_train(&mut m.pretrain, f, key, v)?,
                    Some(("train", f)) => set_train(&mut m.tune, f, key, v)?,
                    _ => false,
                };
                if !known {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line: i + 1, msg },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies a seed taken from the environment; a matrix then runs that
    /// single seed.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed: u64 = parse(SEED_ENV, v.trim())?;
            self.seed = seed;
            self.matrix.seeds = vec![seed];
        }
        Ok(())
    }

    /// Defaults, then `path`, then the environment seed, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_seed_env(std::env::var(SEED_ENV).ok().as_deref())?;
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }

    pub fn data_spec(&self, n_samples: usize) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n_samples,
            ..self.matrix.data.clone()
        }
    }

    pub fn model_shape(&self) -> &ModelConfig {
        &self.matrix.model
    }

    /// Training configuration of a single downstream run.
    pub fn tune_config(&self, method: Method) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            mode: method.mode(),
            strategy: method.strategy(),
            ..self.matrix.tune.clone()
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.matrix.pretrain.clone()
        }
    }

    pub fn objective(&self) -> &ObjectiveConfig {
        &self.matrix.objective
    }

    /// Every setting as `key, value`, in the form accepted by [`Config::set`].
    pub fn entries(&self) -> Vec<(String, String)> {
        let m = &self.matrix;
        let (d, mc) = (&m.data, &m.model);
        let label_kind = match d.label_kind {
            LabelKind::Multiclass => "multiclass",
            LabelKind::Multilabel => "multilabel",
        };
        let mut out: Vec<(String, String)> = [
            ("seed", self.seed.to_string()),
            ("seeds", join(&m.seeds, ",")),
            ("scenario", case_str(&self.scenario)),
            ("data.a", d.a.to_string()),
            ("data.b", d.b.to_string()),
            ("data.h", d.h.to_string()),
            ("data.w", d.w.to_string()),
            ("data.content_len", d.content_len.to_string()),
            ("data.group_size", d.group_size.to_string()),
            ("data.n_distractors", d.n_distractors.to_string()),
            ("data.noise_sigma", d.noise_sigma.to_string()),
            ("data.text_noise", d.text_noise.to_string()),
            ("data.seed", d.seed.to_string()),
            ("data.label_kind", label_kind.to_string()),
            ("split.n_pretext", m.n_pretext.to_string()),
            (
                "split.pretext_seed",
                m.pretext_seed.map_or("none".to_string(), |s| s.to_string()),
            ),
            ("split.n_train", m.n_train.to_string()),
            ("split.n_eval", m.n_eval.to_string()),
            ("model.d_model", mc.d_model.to_string()),
            ("model.n_layers", mc.n_layers.to_string()),
            ("model.n_heads", mc.n_heads.to_string()),
            ("model.ffn_mult", mc.ffn_mult.to_string()),
            ("model.patch_size", mc.patch_size.to_string()),
            ("model.prompt_len", mc.prompt_len.to_string()),
            ("model.prompt_layers", join(&mc.prompt_layers, ",")),
            ("objective.lambda", m.objective.lambda.to_string()),
            ("objective.eps", m.objective.eps.to_string()),
            ("eval.threshold", m.threshold.to_string()),
            ("matrix.methods", join(&m.methods, ",")),
            (
                "matrix.train_scenarios",
                m.train_scenarios.iter().map(case_str).collect::<Vec<_>>().join(";"),
            ),
            (
                "matrix.eval_scenarios",
                m.eval_scenarios.iter().map(case_str).collect::<Vec<_>>().join(";"),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(train_entries("pretrain", &m.pretrain));
        out.extend(train_entries("train", &m.tune));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
