use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::ParamSet;
use crate::diffcore::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Standard deviation of every Gaussian initialization.
pub const INIT_SIGMA: f64 = 0.02;

/// Number of modality-type embedding rows (text, image).
pub const N_TYPES: usize = 2;

/// Embeddings and transformer blocks. The `[CLS]` token is row
/// [`CLS_TOKEN`](crate::datagen::CLS_TOKEN) of `text_embed`.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<S: Scalar = f64> {
    pub params: ParamSet<S>,
    pub frozen: bool,
}

/// Pooler (`tanh(W·h_CLS + b)`) followed by a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead<S: Scalar = f64> {
    pub params: ParamSet<S>,
}

pub(crate) fn block_param(l: usize, name: &str) -> String {
    format!("blocks.{l}.{name}")
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn normal<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::randn(shape, INIT_SIGMA, self.rng)
    }
}

/// Backbone and head with Gaussian(σ = 0.02) weights, zero biases and unit
/// layernorm gains. Deterministic in `seed`.
pub fn build_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Backbone<S>, TaskHead<S>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init { rng: &mut rng };
    let d = cfg.d_model;
    let f = cfg.ffn_dim();

    let mut bb = ParamSet::new();
    bb.insert("text_embed", init.normal(&[cfg.vocab_size, d]));
    bb.insert("patch_proj.w", init.normal(&[cfg.patch_dim(), d]));
    bb.insert("patch_proj.b", Tensor::zeros(&[d]));
    bb.insert("type_embed", init.normal(&[N_TYPES, d]));
    bb.insert("text_pos", init.normal(&[cfg.max_text_len, d]));
    bb.insert("image_pos", init.normal(&[cfg.n_patches(), d]));
    for l in 0..cfg.n_layers {
        bb.insert(block_param(l, "ln1.g"), Tensor::full(&[d], S::one()));
        bb.insert(block_param(l, "ln1.b"), Tensor::zeros(&[d]));
        for proj in ["q", "k", "v", "o"] {
            bb.insert(block_param(l, &format!("attn.w{proj}")), init.normal(&[d, d]));
            bb.insert(block_param(l, &format!("attn.b{proj}")), Tensor::zeros(&[d]));
        }
        bb.insert(block_param(l, "ln2.g"), Tensor::full(&[d], S::one()));
        bb.insert(block_param(l, "ln2.b"), Tensor::zeros(&[d]));
        bb.insert(block_param(l, "ffn.w1"), init.normal(&[d, f]));
        bb.insert(block_param(l, "ffn.b1"), Tensor::zeros(&[f]));
        bb.insert(block_param(l, "ffn.w2"), init.normal(&[f, d]));
        bb.insert(block_param(l, "ffn.b2"), Tensor::zeros(&[d]));
    }
    bb.insert("ln_f.g", Tensor::full(&[d], S::one()));
    bb.insert("ln_f.b", Tensor::zeros(&[d]));

    let mut head = ParamSet::new();
    head.insert("pooler.w", init.normal(&[d, d]));
    head.insert("pooler.b", Tensor::zeros(&[d]));
    head.insert("classifier.w", init.normal(&[d, cfg.n_classes]));
    head.insert("classifier.b", Tensor::zeros(&[cfg.n_classes]));

    Ok((
        Backbone {
            params: bb,
            frozen: false,
        },
        TaskHead { params: head },
    ))
}

/// Fresh head only, e.g. to re-initialize task layers on top of a
/// pretrained backbone.
pub fn build_head<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<TaskHead<S>> {
    let (_, head) = build_model::<S>(cfg, seed)?;
    Ok(head)
}
