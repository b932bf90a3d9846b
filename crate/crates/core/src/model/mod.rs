//! ViLT-shaped multimodal encoder with missing-aware and modality-specific
//! prompt banks.

mod backbone;
pub mod checkpoint;
mod config;
mod forward;
mod params;
mod prompt;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use backbone::{build_head, build_model, Backbone, TaskHead, INIT_SIGMA, N_TYPES};
pub use config::ModelConfig;
pub use forward::{bind, forward_graph, Binding};
pub use params::{ParamGroup, ParamId, ParamSet};
pub use prompt::{build_prompt_bank, map_key, msp_key, prompt_shape, select_prompt, PromptBank, Strategy};

use crate::datagen::{ModalityRegistry, Sample};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which parameters an optimization run may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainMode {
    /// Backbone and head; no prompts.
    FinetuneAll,
    /// Prompts and head; backbone frozen.
    PromptTune,
    /// Head only; backbone and prompts frozen.
    HeadOnly,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::FinetuneAll => "finetune_all",
            TrainMode::PromptTune => "prompt_tune",
            TrainMode::HeadOnly => "head_only",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune_all" => Ok(TrainMode::FinetuneAll),
            "prompt_tune" => Ok(TrainMode::PromptTune),
            "head_only" => Ok(TrainMode::HeadOnly),
            other => Err(Error::Config(format!("unknown training mode \"{other}\""))),
        }
    }
}

/// Parameters `mode` trains. Everything else is frozen.
pub fn trainable_parameters<S: Scalar>(
    backbone: &Backbone<S>,
    head: &TaskHead<S>,
    bank: &PromptBank<S>,
    mode: TrainMode,
) -> Result<Vec<ParamId>> {
    let ids = |group: ParamGroup, set: &ParamSet<S>| -> Vec<ParamId> {
        set.names().map(|n| ParamId::new(group, n)).collect()
    };
    let mut out = Vec::new();
    match mode {
        TrainMode::FinetuneAll => {
            if backbone.frozen {
                return Err(Error::Config("finetune_all on a frozen backbone".into()));
            }
            if bank.strategy != Strategy::None {
                return Err(Error::Config(format!(
                    "finetune_all trains no prompts, but the bank uses strategy {}",
                    bank.strategy
                )));
            }
            out.extend(ids(ParamGroup::Backbone, &backbone.params));
        }
        TrainMode::PromptTune => {
            if bank.strategy == Strategy::None {
                return Err(Error::Config("prompt_tune needs a MAP or MSP prompt bank".into()));
            }
            out.extend(ids(ParamGroup::Prompt, &bank.params));
        }
        TrainMode::HeadOnly => {}
    }
    out.extend(ids(ParamGroup::Head, &head.params));
    Ok(out)
}

/// Backbone, head and prompt bank evaluated together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S: Scalar = f64> {
    pub cfg: ModelConfig,
    pub backbone: Backbone<S>,
    pub head: TaskHead<S>,
    pub bank: PromptBank<S>,
}

impl<S: Scalar> Model<S> {
    pub fn build(cfg: ModelConfig, strategy: Strategy, registry: &ModalityRegistry, seed: u64) -> Result<Self> {
        let (backbone, head) = build_model(&cfg, seed)?;
        let bank = build_prompt_bank(strategy, &cfg, registry, seed.wrapping_add(0x5eed))?;
        Ok(Model {
            cfg,
            backbone,
            head,
            bank,
        })
    }

    pub fn trainable(&self, mode: TrainMode) -> Result<Vec<ParamId>> {
        trainable_parameters(&self.backbone, &self.head, &self.bank, mode)
    }

    pub fn total_params(&self) -> usize {
        self.backbone.params.numel() + self.head.params.numel() + self.bank.params.numel()
    }

    pub fn param(&self, id: &ParamId) -> Option<&Tensor<S>> {
        self.set(id.group).get(&id.name)
    }

    pub fn param_mut(&mut self, id: &ParamId) -> Option<&mut Tensor<S>> {
        match id.group {
            ParamGroup::Backbone => self.backbone.params.get_mut(&id.name),
            ParamGroup::Head => self.head.params.get_mut(&id.name),
            ParamGroup::Prompt => self.bank.params.get_mut(&id.name),
        }
    }

    pub fn set(&self, group: ParamGroup) -> &ParamSet<S> {
        match group {
            ParamGroup::Backbone => &self.backbone.params,
            ParamGroup::Head => &self.head.params,
            ParamGroup::Prompt => &self.bank.params,
        }
    }

    /// Logits `[batch, n_classes]` without recording gradients.
    pub fn logits(&self, batch: &[&Sample]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let binding = bind(&mut g, self, &[]);
        let out = forward_graph(&mut g, self, &binding, batch)?;
        Ok(g.value(out).clone())
    }

    /// Logits for a whole sample list, evaluated in chunks.
    pub fn logits_all(&self, samples: &[Sample], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(chunk.max(1)) {
            let refs: Vec<&Sample> = part.iter().collect();
            let z = self.logits(&refs)?;
            let k = self.cfg.n_classes;
            for row in z.data().chunks(k) {
                out.push(row.iter().map(|x| x.as_f64()).collect());
            }
        }
        Ok(out)
    }

    /// Writes `backbone.ckpt`, `head.ckpt` and (if any) `prompts.ckpt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        checkpoint::save_checkpoint(dir.join("backbone.ckpt"), "backbone", &self.backbone.params)?;
        checkpoint::save_checkpoint(dir.join("head.ckpt"), "head", &self.head.params)?;
        if !self.bank.is_empty() {
            let kind = format!("prompts:{}", self.bank.strategy);
            checkpoint::save_checkpoint(dir.join("prompts.ckpt"), &kind, &self.bank.params)?;
        }
        Ok(())
    }

    /// Replaces the backbone with a checkpoint validated against this
    /// model's configuration.
    pub fn load_backbone(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.backbone.params = checkpoint::load_checkpoint(path, "backbone", &self.backbone.params)?;
        Ok(())
    }

    pub fn load_head(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.head.params = checkpoint::load_checkpoint(path, "head", &self.head.params)?;
        Ok(())
    }

    pub fn load_prompts(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let kind = format!("prompts:{}", self.bank.strategy);
        self.bank.params = checkpoint::load_checkpoint(path, &kind, &self.bank.params)?;
        Ok(())
    }
}

/// Decision rule: argmax for multiclass, `sigmoid(z) > threshold` per class
/// for multilabel.
pub fn predict_class(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &z)| if z > best.1 { (i, z) } else { best })
        .0
}

pub fn predict_multilabel(logits: &[f64], threshold: f64) -> Vec<u8> {
    logits
        .iter()
        .map(|&z| u8::from(1.0 / (1.0 + (-z).exp()) > threshold))
        .collect()
}
