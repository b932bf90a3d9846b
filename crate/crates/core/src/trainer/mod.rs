//! AdamW optimization, the training loop and backbone pretraining.

mod adamw;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adamw::{adamw_step, AdamHyper, AdamW, Moments};

use crate::datagen::{generate_synthetic, Dataset, Sample, SyntheticTaskSpec};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{bind, forward_graph, predict_class, Model, ModelConfig, Strategy, TrainMode};
use crate::objective::{ortho_loss, task_loss, total_loss, ObjectiveConfig};
use crate::scalar::Scalar;

pub const PRETRAIN_EPOCHS: usize = 30;
pub const PROMPT_TUNE_EPOCHS: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub strategy: Strategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamHyper::default(),
            batch_size: 6,
            epochs: PROMPT_TUNE_EPOCHS,
            seed: 1,
            mode: TrainMode::PromptTune,
            strategy: Strategy::Msp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0) || !a.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", a.lr)));
        }
        if !(a.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", a.weight_decay)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let a = &self.adam;
        [
            ("lr", a.lr.to_string()),
            ("weight_decay", a.weight_decay.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("adam_eps", a.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("strategy", self.strategy.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub cls: f64,
    pub ortho: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedRun<S: Scalar = f64> {
    pub model: Model<S>,
    pub curve: Vec<LossRecord>,
    pub optimizer: AdamW<S>,
}

/// Whether the objective carries an orthogonality term for this bank.
fn uses_ortho<S: Scalar>(model: &Model<S>) -> bool {
    model.bank.strategy == Strategy::Msp && model.bank.len() >= 2
}

/// One forward/backward pass over `batch`; returns the loss record and the
/// gradient of every trainable parameter (zeros where none flowed).
pub fn loss_and_grads<S: Scalar>(
    model: &Model<S>,
    trainable: &[crate::model::ParamId],
    batch: &[&Sample],
    oc: &ObjectiveConfig,
    step: usize,
) -> Result<(LossRecord, HashMap<crate::model::ParamId, Tensor<S>>)> {
    let mut g = Graph::new();
    let binding = bind(&mut g, model, trainable);
    let logits = forward_graph(&mut g, model, &binding, batch)?;
    let labels: Vec<_> = batch.iter().map(|s| &s.label).collect();
    let cls = task_loss(&mut g, logits, &labels, oc.task_kind)?;
    let ortho = if uses_ortho(model) {
        Some(ortho_loss(&mut g, &model.bank, &binding, oc)?)
    } else {
        None
    };
    let total = total_loss(&mut g, cls, ortho, oc)?;
    let rec = LossRecord {
        step,
        cls: g.value(cls).item().as_f64(),
        ortho: ortho.map(|o| g.value(o).item().as_f64()),
        total: g.value(total).item().as_f64(),
    };
    if !rec.total.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    g.backward(total)?;
    let grads = trainable
        .iter()
        .map(|id| {
            let v = binding.get(id.group, &id.name);
            let grad = g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
            (id.clone(), grad)
        })
        .collect();
    Ok((rec, grads))
}

/// Trains the parameters selected by `tc.mode` for `tc.epochs` passes over
/// `ds` in seed-shuffled batches.
pub fn train<S: Scalar>(mut model: Model<S>, ds: &Dataset, tc: &TrainConfig, oc: &ObjectiveConfig) -> Result<TrainedRun<S>> {
    tc.validate()?;
    oc.validate()?;
    if model.bank.strategy != tc.strategy {
        return Err(Error::Config(format!(
            "train config asks for {} prompts but the model carries {}",
            tc.strategy, model.bank.strategy
        )));
    }
    if ds.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let trainable = model.trainable(tc.mode)?;
    let mut opt = AdamW::new(tc.adam, &model, &trainable)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut curve = Vec::with_capacity(tc.epochs * tc.steps_per_epoch(ds.len()));
    let mut step = 0;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &ds.samples[i]).collect();
            let (rec, grads) = loss_and_grads(&model, &trainable, &batch, oc, step)?;
            opt.step(&mut model, &grads)?;
            curve.push(rec);
            step += 1;
        }
    }
    Ok(TrainedRun {
        model,
        curve,
        optimizer: opt,
    })
}

/// Fraction of samples whose argmax logit equals the class label.
pub fn class_accuracy<S: Scalar>(model: &Model<S>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let logits = model.logits_all(samples, 64)?;
    let hits = logits
        .iter()
        .zip(samples)
        .filter(|(z, s)| s.label.class() == Some(predict_class(z)))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct Pretrained<S: Scalar = f64> {
    pub model: Model<S>,
    pub curve: Vec<LossRecord>,
    pub heldout_accuracy: f64,
}

/// Share of the pretext data held out to score the pretrained model.
pub const PRETEXT_HOLDOUT: f64 = 0.2;

/// Full finetuning of a prompt-free model on a modality-complete synthetic
/// pretext task. The returned model's backbone is marked frozen.
pub fn pretrain_backbone<S: Scalar>(cfg: &ModelConfig, spec: &SyntheticTaskSpec, tc: &TrainConfig) -> Result<Pretrained<S>> {
    pretrain_on(cfg, &generate_synthetic(spec)?, tc)
}

/// [`pretrain_backbone`] on an existing modality-complete dataset, holding
/// out its last fifth for scoring.
pub fn pretrain_on<S: Scalar>(cfg: &ModelConfig, ds: &Dataset, tc: &TrainConfig) -> Result<Pretrained<S>> {
    let (complete, _, _) = ds.pattern_counts();
    if complete != ds.len() {
        return Err(Error::Data("pretext data must be modality-complete".into()));
    }
    let n_hold = ((ds.len() as f64) * PRETEXT_HOLDOUT).round() as usize;
    let (fit, held) = ds.split_at(ds.len() - n_hold)?;
    let model = Model::<S>::build(cfg.clone(), Strategy::None, &ds.registry, tc.seed)?;
    let tc = TrainConfig {
        mode: TrainMode::FinetuneAll,
        strategy: Strategy::None,
        ..tc.clone()
    };
    let oc = ObjectiveConfig {
        lambda: 0.0,
        task_kind: ds.label_kind.into(),
        ..ObjectiveConfig::default()
    };
    let run = train(model, &fit, &tc, &oc)?;
    let heldout_accuracy = if held.is_empty() {
        f64::NAN
    } else {
        class_accuracy(&run.model, &held.samples)?
    };
    let mut model = run.model;
    model.backbone.frozen = true;
    Ok(Pretrained {
        model,
        curve: run.curve,
        heldout_accuracy,
    })
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("step,L_cls,L_ortho,L_total\n");
    for r in curve {
        let ortho = r.ortho.map(|o| format!("{o:.17e}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.17e},{},{:.17e}", r.step, r.cls, ortho, r.total);
    }
    out
}

pub fn manifest_text(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
