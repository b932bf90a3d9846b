use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::INIT_SIGMA;
use super::config::ModelConfig;
use super::params::ParamSet;
use crate::datagen::{MissingPattern, ModalityRegistry, IMAGE_ID, TEXT_ID};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Prompt allocation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// No prompts.
    None,
    /// Missing-aware: one prompt per nonempty modality subset.
    Map,
    /// Modality-specific: one prompt per modality; present ones are summed.
    Msp,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Map => "map",
            Strategy::Msp => "msp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Strategy::None),
            "map" => Ok(Strategy::Map),
            "msp" => Ok(Strategy::Msp),
            other => Err(Error::Config(format!("unknown strategy \"{other}\""))),
        }
    }
}

/// Name of the modality-specific prompt for one modality, e.g. `P_is`.
pub fn msp_key(id: char) -> String {
    format!("P_{id}s")
}

/// Name of the missing-aware prompt for a subset: `P_c` for the complete
/// case, otherwise `P_` followed by the present ids (`P_i`, `P_t`, `P_ab`).
pub fn map_key(pattern: MissingPattern, reg: &ModalityRegistry) -> String {
    if pattern.is_complete(reg.m()) {
        "P_c".to_string()
    } else {
        format!("P_{}", pattern.to_ids(reg))
    }
}

/// Learnable prompts of one strategy. Every prompt has shape
/// `[|prompt_layers|, prompt_len, d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank<S: Scalar = f64> {
    pub strategy: Strategy,
    pub registry: ModalityRegistry,
    pub params: ParamSet<S>,
}

pub fn prompt_shape(cfg: &ModelConfig) -> [usize; 3] {
    [cfg.prompt_layers.len(), cfg.prompt_len, cfg.d_model]
}

/// Bank with the strategy's key set, Gaussian(σ = 0.02) initialized.
///
/// MSP keys follow registry order; MAP keys follow subset bitmask order.
pub fn build_prompt_bank<S: Scalar>(
    strategy: Strategy,
    cfg: &ModelConfig,
    registry: &ModalityRegistry,
    seed: u64,
) -> Result<PromptBank<S>> {
    let shape = prompt_shape(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    match strategy {
        Strategy::None => {}
        Strategy::Msp => {
            for m in registry.modalities() {
                params.insert(msp_key(m.id), Tensor::randn(&shape, INIT_SIGMA, &mut rng));
            }
        }
        Strategy::Map => {
            for p in registry.nonempty_patterns() {
                params.insert(map_key(p, registry), Tensor::randn(&shape, INIT_SIGMA, &mut rng));
            }
        }
    }
    Ok(PromptBank {
        strategy,
        registry: registry.clone(),
        params,
    })
}

impl<S: Scalar> PromptBank<S> {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<S>> {
        self.params.get(key)
    }

    /// Image-specific / text-specific prompt of an MSP bank.
    pub fn image_prompt(&self) -> Option<&Tensor<S>> {
        self.get(&msp_key(IMAGE_ID))
    }

    pub fn text_prompt(&self) -> Option<&Tensor<S>> {
        self.get(&msp_key(TEXT_ID))
    }

    /// Keys whose prompts are summed (MSP) or looked up (MAP) for `pattern`.
    pub fn keys_for(&self, pattern: MissingPattern) -> Result<Vec<String>> {
        let m = self.registry.m();
        if pattern.bits() == 0 || pattern.bits() >> m != 0 {
            return Err(Error::Contract(format!(
                "pattern {pattern} does not fit a bank over {m} modalities"
            )));
        }
        let keys = match self.strategy {
            Strategy::None => Vec::new(),
            Strategy::Msp => pattern
                .present()
                .map(|k| msp_key(self.registry.modalities()[k].id))
                .collect(),
            Strategy::Map => vec![map_key(pattern, &self.registry)],
        };
        if let Some(k) = keys.iter().find(|k| self.params.get(k).is_none()) {
            return Err(Error::Contract(format!("prompt bank has no key {k}")));
        }
        Ok(keys)
    }
}

/// The prompt used for samples with `pattern`: nothing without a strategy,
/// the subset's own prompt under MAP, and the element-wise sum of the
/// present modalities' prompts (in registry order) under MSP.
pub fn select_prompt<S: Scalar>(bank: &PromptBank<S>, pattern: MissingPattern) -> Result<Option<Tensor<S>>> {
    let keys = bank.keys_for(pattern)?;
    let mut it = keys.iter().map(|k| bank.params.get(k).expect("checked key"));
    let Some(first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first.clone();
    for t in it {
        acc = acc.add(t)?;
    }
    Ok(Some(acc))
}
