use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::metrics::{accuracy, f1_macro, sigmoid};
use super::report::{Case, Method, MetricRow, MetricsReport};
use crate::datagen::{
    apply_missing, generate_synthetic, read_dataset, Dataset, Label, LabelKind, PlaceholderPolicy, ScenarioConfig,
    SyntheticTaskSpec,
};
use crate::error::{Error, Result};
use crate::model::{predict_class, Model, ModelConfig, TrainMode};
use crate::objective::{ortho_value, ObjectiveConfig};
use crate::trainer::{pretrain_on, train, AdamHyper, Pretrained, TrainConfig, PRETRAIN_EPOCHS};

/// Offset between the train-split and eval-split masking seeds of a run.
pub const EVAL_MASK_SEED_OFFSET: u64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixConfig {
    pub train_scenarios: Vec<Case>,
    pub eval_scenarios: Vec<Case>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Generator for the pooled data; `n_samples` is replaced by the split sizes.
    pub data: SyntheticTaskSpec,
    /// Read the pooled data from a file instead of generating it.
    pub data_path: Option<PathBuf>,
    pub n_pretext: usize,
    /// Draw the pretext split from a generator with this seed (its own
    /// prototypes and token groups) instead of from the pooled data.
    pub pretext_seed: Option<u64>,
    pub n_train: usize,
    pub n_eval: usize,
    /// Architecture; dataset-dependent sizes are filled in at run time.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub tune: TrainConfig,
    pub objective: ObjectiveConfig,
    pub threshold: f64,
    pub placeholder: PlaceholderPolicy,
}

pub fn default_cases() -> Vec<Case> {
    ScenarioConfig::default_triple(0).iter().map(Case::from).collect()
}

impl Default for MatrixConfig {
    fn default() -> Self {
        let data = SyntheticTaskSpec::default();
        MatrixConfig {
            train_scenarios: default_cases(),
            eval_scenarios: default_cases(),
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            model: ModelConfig::for_spec(&data),
            data,
            data_path: None,
            n_pretext: 1000,
            pretext_seed: None,
            n_train: 1000,
            n_eval: 1000,
            pretrain: TrainConfig {
                adam: AdamHyper {
                    lr: 3e-3,
                    ..AdamHyper::default()
                },
                batch_size: 32,
                epochs: PRETRAIN_EPOCHS,
                ..TrainConfig::default()
            },
            tune: TrainConfig::default(),
            objective: ObjectiveConfig::default(),
            threshold: 0.5,
            placeholder: PlaceholderPolicy::default(),
        }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("train_scenarios", self.train_scenarios.is_empty()),
            ("eval_scenarios", self.eval_scenarios.is_empty()),
            ("methods", self.methods.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        for (name, empty) in nonempty {
            if empty {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        for c in self.train_scenarios.iter().chain(&self.eval_scenarios) {
            ScenarioConfig::new(c.p_img, c.p_txt, 0)?;
        }
        let dup = |v: &[String]| v.iter().collect::<HashSet<_>>().len() != v.len();
        if dup(&self.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>())
            || dup(&self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            || dup(&self.train_scenarios.iter().map(Case::label).collect::<Vec<_>>())
            || dup(&self.eval_scenarios.iter().map(Case::label).collect::<Vec<_>>())
        {
            return Err(Error::Config("matrix lists must not repeat entries".into()));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_train and n_eval must be positive".into()));
        }
        if self.n_pretext < 5 {
            return Err(Error::Config("n_pretext must be at least 5".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        self.pretrain.validate()?;
        self.tune.validate()?;
        self.objective.validate()
    }

    fn pooled_len(&self) -> usize {
        let pretext = if self.pretext_seed.is_some() { 0 } else { self.n_pretext };
        pretext + self.n_train + self.n_eval
    }

    fn pooled_data(&self) -> Result<Dataset> {
        let total = self.pooled_len();
        let ds = match &self.data_path {
            Some(p) => read_dataset(p)?,
            None => generate_synthetic(&SyntheticTaskSpec {
                n_samples: total,
                ..self.data.clone()
            })?,
        };
        if ds.len() < total {
            return Err(Error::Data(format!("dataset has {} samples, the splits need {total}", ds.len())));
        }
        Ok(ds)
    }
}

/// Disjoint pretext, train and eval splits of the pooled data.
#[derive(Clone, Debug)]
pub struct Splits {
    pub pretext: Dataset,
    pub train: Dataset,
    pub eval: Dataset,
}

impl Splits {
    pub fn from_config(cfg: &MatrixConfig) -> Result<Self> {
        let ds = cfg.pooled_data()?;
        let (pretext, rest) = match cfg.pretext_seed {
            Some(seed) => {
                if cfg.data_path.is_some() {
                    return Err(Error::Config("pretext_seed needs generated data".into()));
                }
                let spec = SyntheticTaskSpec {
                    n_samples: cfg.n_pretext,
                    seed,
                    ..cfg.data.clone()
                };
                (generate_synthetic(&spec)?, ds)
            }
            None => ds.split_at(cfg.n_pretext)?,
        };
        let (train, rest) = rest.split_at(cfg.n_train)?;
        let (eval, _) = rest.split_at(cfg.n_eval)?;
        let splits = Splits { pretext, train, eval };
        splits.verify_disjoint()?;
        Ok(splits)
    }

    /// Fails if any eval sample's content also occurs in the pretext or
    /// train split.
    pub fn verify_disjoint(&self) -> Result<()> {
        let seen: HashSet<[u8; 32]> = self
            .pretext
            .samples
            .iter()
            .chain(&self.train.samples)
            .map(|s| s.content_hash())
            .collect();
        if let Some(i) = self.eval.samples.iter().position(|s| seen.contains(&s.content_hash())) {
            return Err(Error::Data(format!("eval sample {i} also occurs in the training data")));
        }
        Ok(())
    }
}

/// Metric of a trained model on an already masked dataset: accuracy for
/// single-label tasks, macro F1 for multi-label ones.
pub fn evaluate(model: &Model<f64>, ds: &Dataset, threshold: f64) -> Result<(String, f64, bool)> {
    let logits = model.logits_all(&ds.samples, 128)?;
    match ds.label_kind {
        LabelKind::Multiclass => {
            let preds: Vec<usize> = logits.iter().map(|z| predict_class(z)).collect();
            let labels = ds
                .samples
                .iter()
                .map(|s| s.label.class().ok_or_else(|| Error::Data("multi-hot label in a multiclass set".into())))
                .collect::<Result<Vec<_>>>()?;
            Ok(("accuracy".into(), accuracy(&preds, &labels)?, false))
        }
        LabelKind::Multilabel => {
            let probs: Vec<Vec<f64>> = logits.iter().map(|z| z.iter().map(|&x| sigmoid(x)).collect()).collect();
            let labels = ds
                .samples
                .iter()
                .map(|s| match &s.label {
                    Label::MultiHot(v) => Ok(v.clone()),
                    Label::Class(_) => Err(Error::Data("class label in a multilabel set".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let f1 = f1_macro(&probs, &labels, threshold)?;
            Ok(("f1_macro".into(), f1.value, f1.zero_division))
        }
    }
}

/// Training summary of one (method, train scenario, seed) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub method: Method,
    pub train: Case,
    pub seed: u64,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Final orthogonality value of the MSP prompts.
    pub final_ortho: Option<f64>,
    /// Wall-clock training time. Not part of any report file.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct MatrixOutcome {
    pub report: MetricsReport,
    /// Held-out pretext accuracy per seed.
    pub pretext_accuracy: Vec<(u64, f64)>,
    pub cells: Vec<CellRun>,
    pub train_hash: String,
    pub eval_hash: String,
}

fn cell_name(m: Method, train: &Case, seed: u64) -> String {
    format!("{m} train={} seed={seed}", train.label())
}

/// Trains one cell from a pretrained model and evaluates it under every
/// inference scenario.
pub fn run_cell(
    cfg: &MatrixConfig,
    splits: &Splits,
    pretrained: &Pretrained<f64>,
    method: Method,
    train_case: Case,
    seed: u64,
) -> Result<(Vec<MetricRow>, CellRun)> {
    let started = Instant::now();
    let model_cfg = pretrained.model.cfg.clone();
    let mut model = Model::<f64>::build(model_cfg, method.strategy(), &splits.train.registry, seed)?;
    model.backbone = pretrained.model.backbone.clone();
    model.backbone.frozen = method.mode() != TrainMode::FinetuneAll;

    let sc = ScenarioConfig::new(train_case.p_img, train_case.p_txt, seed)?;
    let train_ds = apply_missing(&splits.train, &sc, &cfg.placeholder)?;
    let tc = TrainConfig {
        seed,
        mode: method.mode(),
        strategy: method.strategy(),
        ..cfg.tune.clone()
    };
    let oc = ObjectiveConfig {
        task_kind: splits.train.label_kind.into(),
        ..cfg.objective.clone()
    };
    let run = train(model, &train_ds, &tc, &oc)?;
    let seconds = started.elapsed().as_secs_f64();
    let final_ortho = match method {
        Method::Msp => Some(ortho_value(&run.model.bank, oc.eps)?),
        _ => None,
    };

    let mut rows = Vec::with_capacity(cfg.eval_scenarios.len());
    for ev in &cfg.eval_scenarios {
        let sc = ScenarioConfig::new(ev.p_img, ev.p_txt, seed + EVAL_MASK_SEED_OFFSET)?;
        let eval_ds = apply_missing(&splits.eval, &sc, &cfg.placeholder)?;
        let (metric, value, flagged) = evaluate(&run.model, &eval_ds, cfg.threshold)?;
        rows.push(MetricRow {
            method,
            train: train_case,
            eval: *ev,
            seed,
            metric,
            value,
            flagged,
        });
    }
    let summary = CellRun {
        method,
        train: train_case,
        seed,
        steps: run.curve.len(),
        first_loss: run.curve.first().map_or(f64::NAN, |r| r.total),
        last_loss: run.curve.last().map_or(f64::NAN, |r| r.total),
        final_ortho,
        seconds,
    };
    Ok((rows, summary))
}

/// Pretrains one backbone per seed, then trains and evaluates every
/// (method, train scenario, seed) cell. Cells run in parallel; the report
/// order depends only on the configuration.
pub fn run_matrix(cfg: &MatrixConfig) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let splits = Splits::from_config(cfg)?;
    let model_cfg = cfg.model.sized_for(&splits.pretext);
    model_cfg.validate()?;

    let pretrained: Vec<Result<Pretrained<f64>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let tc = TrainConfig {
                seed,
                ..cfg.pretrain.clone()
            };
            pretrain_on(&model_cfg, &splits.pretext, &tc).map_err(|e| Error::Cell {
                cell: format!("pretrain seed={seed}"),
                source: Box::new(e),
            })
        })
        .collect();
    let pretrained = pretrained.into_iter().collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        for &m in &cfg.methods {
            for t in &cfg.train_scenarios {
                jobs.push((si, seed, m, *t));
            }
        }
    }
    let results: Vec<Result<(Vec<MetricRow>, CellRun)>> = jobs
        .par_iter()
        .map(|&(si, seed, m, t)| {
            run_cell(cfg, &splits, &pretrained[si], m, t, seed).map_err(|e| Error::Cell {
                cell: cell_name(m, &t, seed),
                source: Box::new(e),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for r in results {
        let (r, c) = r?;
        rows.extend(r);
        cells.push(c);
    }
    let pos = |list: &[Case], c: &Case| list.iter().position(|x| x == c).unwrap_or(usize::MAX);
    let mpos = |m: &Method| cfg.methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| {
        (
            pos(&cfg.train_scenarios, &r.train),
            pos(&cfg.eval_scenarios, &r.eval),
            mpos(&r.method),
            r.seed,
        )
    });
    Ok(MatrixOutcome {
        report: MetricsReport::from_rows(rows)?,
        pretext_accuracy: cfg.seeds.iter().copied().zip(pretrained.iter().map(|p| p.heldout_accuracy)).collect(),
        cells,
        train_hash: splits.train.hash(),
        eval_hash: splits.eval.hash(),
    })
}
