use std::collections::HashMap;
use std::rc::Rc;

use super::backbone::block_param;
use super::params::{ParamGroup, ParamId};
use super::prompt::Strategy;
use super::Model;
use crate::datagen::{MissingPattern, Sample, PAD_TOKEN};
use crate::diffcore::{Graph, Tensor, Var, LAYERNORM_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Graph leaves for every model parameter.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: HashMap<ParamId, Var>,
}

impl Binding {
    pub fn get(&self, group: ParamGroup, name: &str) -> Var {
        // The binding covers every parameter of the model it was built from.
        self.vars[&ParamId::new(group, name)]
    }

    pub fn try_get(&self, id: &ParamId) -> Option<Var> {
        self.vars.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Var)> {
        self.vars.iter()
    }

    /// Routes `id` to an existing graph variable instead of its own leaf.
    pub fn with(mut self, id: ParamId, v: Var) -> Self {
        self.vars.insert(id, v);
        self
    }
}

/// Records every parameter of `model` as a leaf; exactly those listed in
/// `trainable` require gradients.
pub fn bind<S: Scalar>(g: &mut Graph<S>, model: &Model<S>, trainable: &[ParamId]) -> Binding {
    let mut vars = HashMap::new();
    let groups = [
        (ParamGroup::Backbone, &model.backbone.params),
        (ParamGroup::Head, &model.head.params),
        (ParamGroup::Prompt, &model.bank.params),
    ];
    for (group, set) in groups {
        for (name, t) in set.iter() {
            let id = ParamId::new(group, name);
            let rg = trainable.contains(&id);
            vars.insert(id, g.leaf(t.clone(), rg));
        }
    }
    Binding { vars }
}

struct BatchInputs<S: Scalar> {
    token_ids: Vec<usize>,
    patches: Tensor<S>,
    /// Per sample, `true` marks a padding text position.
    text_pad: Vec<Vec<bool>>,
}

fn prepare<S: Scalar>(model: &Model<S>, batch: &[&Sample]) -> Result<BatchInputs<S>> {
    let cfg = &model.cfg;
    let (lt, p) = (cfg.max_text_len, cfg.patch_size);
    let gw = cfg.image_w / p;
    let mut token_ids = Vec::with_capacity(batch.len() * lt);
    let mut text_pad = Vec::with_capacity(batch.len());
    let mut patches = Vec::with_capacity(batch.len() * cfg.n_patches() * cfg.patch_dim());
    for s in batch {
        if s.text.is_empty() || s.text.len() > lt {
            return Err(Error::Data(format!(
                "text of {} tokens does not fit max_text_len {lt}",
                s.text.len()
            )));
        }
        if let Some(&t) = s.text.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Data(format!("token {t} outside vocabulary of {}", cfg.vocab_size)));
        }
        if (s.image.h, s.image.w) != (cfg.image_h, cfg.image_w) || s.image.pixels.len() != cfg.image_h * cfg.image_w {
            return Err(Error::Data(format!(
                "image {}x{} does not match model input {}x{}",
                s.image.h, s.image.w, cfg.image_h, cfg.image_w
            )));
        }
        let mut pad = vec![false; lt];
        for (i, slot) in pad.iter_mut().enumerate() {
            match s.text.get(i) {
                Some(&t) => token_ids.push(t as usize),
                None => {
                    token_ids.push(PAD_TOKEN as usize);
                    *slot = true;
                }
            }
        }
        text_pad.push(pad);
        for patch in 0..cfg.n_patches() {
            let (pr, pc) = (patch / gw, patch % gw);
            for r in 0..p {
                for c in 0..p {
                    let px = s.image.pixels[(pr * p + r) * cfg.image_w + pc * p + c];
                    patches.push(S::lit(px));
                }
            }
        }
    }
    let patches = Tensor::new(vec![batch.len() * cfg.n_patches(), cfg.patch_dim()], patches)?;
    Ok(BatchInputs {
        token_ids,
        patches,
        text_pad,
    })
}

/// Differentiable prompt for `pattern`, reshaped to
/// `[|prompt_layers|·prompt_len, d_model]`.
fn prompt_var<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    binding: &Binding,
    pattern: MissingPattern,
) -> Result<Option<Var>> {
    let keys = model.bank.keys_for(pattern)?;
    let mut acc: Option<Var> = None;
    for k in keys {
        let v = binding.get(ParamGroup::Prompt, &k);
        acc = Some(match acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
    }
    let rows = model.cfg.prompt_layers.len() * model.cfg.prompt_len;
    acc.map(|v| g.reshape(v, &[rows, model.cfg.d_model])).transpose()
}

fn linear<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Records the forward pass for `batch` and returns the logits node
/// `[batch, n_classes]`.
///
/// Sequence per sample: text tokens (starting with `[CLS]`) plus text type
/// and position embeddings, then image patches plus image type and position
/// embeddings. At the first prompt layer the sample's prompt slice is
/// prepended; at later prompt layers it overwrites those leading slots.
/// Padding keys are masked in attention and the pooler reads the `[CLS]`
/// position only.
pub fn forward_graph<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    binding: &Binding,
    batch: &[&Sample],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("forward on an empty batch".into()));
    }
    let cfg = &model.cfg;
    let inputs = prepare(model, batch)?;
    let bsz = batch.len();
    let (lt, np, d) = (cfg.max_text_len, cfg.n_patches(), cfg.d_model);
    let p = |name: &str| binding.get(ParamGroup::Backbone, name);

    // embeddings
    let tok = g.gather_rows(p("text_embed"), &inputs.token_ids)?;
    let tpos_ids: Vec<usize> = (0..bsz).flat_map(|_| 0..lt).collect();
    let tpos = g.gather_rows(p("text_pos"), &tpos_ids)?;
    let ttype = g.gather_rows(p("type_embed"), &vec![0; bsz * lt])?;
    let text = g.add(tok, tpos)?;
    let text = g.add(text, ttype)?;

    let patches = g.constant(inputs.patches);
    let img = linear(g, patches, p("patch_proj.w"), p("patch_proj.b"))?;
    let ipos_ids: Vec<usize> = (0..bsz).flat_map(|_| 0..np).collect();
    let ipos = g.gather_rows(p("image_pos"), &ipos_ids)?;
    let itype = g.gather_rows(p("type_embed"), &vec![1; bsz * np])?;
    let img = g.add(img, ipos)?;
    let img = g.add(img, itype)?;

    let mut parts = Vec::with_capacity(2 * bsz);
    for b in 0..bsz {
        parts.push(g.slice_rows(text, b * lt, lt)?);
        parts.push(g.slice_rows(img, b * np, np)?);
    }
    let mut x = g.concat_rows(&parts)?;
    let mut seq = lt + np;

    // per-pattern prompt cache
    let use_prompts = model.bank.strategy != Strategy::None;
    let mut prompts: HashMap<MissingPattern, Var> = HashMap::new();
    if use_prompts {
        for s in batch {
            if !prompts.contains_key(&s.pattern) {
                let v = prompt_var(g, model, binding, s.pattern)?
                    .ok_or_else(|| Error::Contract("prompt strategy produced no prompt".into()))?;
                prompts.insert(s.pattern, v);
            }
        }
    } else {
        for s in batch {
            model.bank.keys_for(s.pattern)?;
        }
    }
    let lp = cfg.prompt_len;
    let mut prompted = false;

    for l in 0..cfg.n_layers {
        if use_prompts {
            if let Some(j) = cfg.prompt_layers.iter().position(|&pl| pl == l) {
                let skip = if prompted { lp } else { 0 };
                let mut rows = Vec::with_capacity(2 * bsz);
                for (b, s) in batch.iter().enumerate() {
                    let slice = g.slice_rows(prompts[&s.pattern], j * lp, lp)?;
                    rows.push(slice);
                    rows.push(g.slice_rows(x, b * seq + skip, seq - skip)?);
                }
                x = g.concat_rows(&rows)?;
                if !prompted {
                    seq += lp;
                    prompted = true;
                }
            }
        }
        let offset = if prompted { lp } else { 0 };
        let masks: Vec<Rc<[bool]>> = inputs
            .text_pad
            .iter()
            .map(|pad| {
                let mut m = vec![false; seq];
                m[offset..offset + lt].copy_from_slice(pad);
                Rc::from(m)
            })
            .collect();
        x = block(g, model, binding, l, x, bsz, seq, &masks)?;
    }

    let x = g.layernorm(x, p("ln_f.g"), p("ln_f.b"), S::lit(LAYERNORM_EPS))?;
    let cls_at = if prompted { lp } else { 0 };
    let cls: Vec<Var> = (0..bsz)
        .map(|b| g.slice_rows(x, b * seq + cls_at, 1))
        .collect::<Result<_>>()?;
    let cls = g.concat_rows(&cls)?;
    let h = |name: &str| binding.get(ParamGroup::Head, name);
    let pooled = linear(g, cls, h("pooler.w"), h("pooler.b"))?;
    let pooled = g.tanh(pooled);
    debug_assert_eq!(g.shape(pooled), &[bsz, d]);
    linear(g, pooled, h("classifier.w"), h("classifier.b"))
}

#[allow(clippy::too_many_arguments)]
fn block<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    binding: &Binding,
    l: usize,
    x: Var,
    bsz: usize,
    seq: usize,
    masks: &[Rc<[bool]>],
) -> Result<Var> {
    let cfg = &model.cfg;
    let p = |name: &str| binding.get(ParamGroup::Backbone, &block_param(l, name));
    let (nh, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = S::one() / S::from_usize(dh).unwrap().sqrt();

    let hn = g.layernorm(x, p("ln1.g"), p("ln1.b"), S::lit(LAYERNORM_EPS))?;
    let q = linear(g, hn, p("attn.wq"), p("attn.bq"))?;
    let k = linear(g, hn, p("attn.wk"), p("attn.bk"))?;
    let v = linear(g, hn, p("attn.wv"), p("attn.bv"))?;
    let mut per_sample = Vec::with_capacity(bsz);
    for (b, mask) in masks.iter().enumerate() {
        let mut heads = Vec::with_capacity(nh);
        for hd in 0..nh {
            let qh = g.slice(q, b * seq, seq, hd * dh, dh)?;
            let kh = g.slice(k, b * seq, seq, hd * dh, dh)?;
            let vh = g.slice(v, b * seq, seq, hd * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_masked(scores, mask.clone())?;
            heads.push(g.matmul(attn, vh)?);
        }
        per_sample.push(g.concat_cols(&heads)?);
    }
    let ctx = g.concat_rows(&per_sample)?;
    let out = linear(g, ctx, p("attn.wo"), p("attn.bo"))?;
    let x = g.add(x, out)?;

    let hn = g.layernorm(x, p("ln2.g"), p("ln2.b"), S::lit(LAYERNORM_EPS))?;
    let f = linear(g, hn, p("ffn.w1"), p("ffn.b1"))?;
    let f = g.gelu(f);
    let f = linear(g, f, p("ffn.w2"), p("ffn.b2"))?;
    g.add(x, f)
}
