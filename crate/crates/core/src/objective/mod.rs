//! Task losses, the prompt orthogonality regularizer and their combination.

use std::fmt;
use std::str::FromStr;

use crate::datagen::{Label, LabelKind};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{msp_key, Binding, ParamGroup, PromptBank, Strategy};
use crate::scalar::Scalar;

pub const ORTHO_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    MulticlassCe,
    MultilabelBce,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MulticlassCe => "multiclass_ce",
            TaskKind::MultilabelBce => "multilabel_bce",
        }
    }
}

impl From<LabelKind> for TaskKind {
    fn from(k: LabelKind) -> Self {
        match k {
            LabelKind::Multiclass => TaskKind::MulticlassCe,
            LabelKind::Multilabel => TaskKind::MultilabelBce,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass_ce" => Ok(TaskKind::MulticlassCe),
            "multilabel_bce" => Ok(TaskKind::MultilabelBce),
            _ => Err(Error::Config(format!("unknown task kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub eps: f64,
    pub task_kind: TaskKind,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.15,
            eps: ORTHO_EPS,
            task_kind: TaskKind::MulticlassCe,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Row-major 1-D copy of `p`.
pub fn flatten<S: Scalar>(p: &Tensor<S>) -> Tensor<S> {
    p.flatten()
}

/// Mean over unordered pairs of `|cos|` between the flattened prompts.
pub fn pairwise_abs_cosine<S: Scalar>(g: &mut Graph<S>, prompts: &[Var], eps: f64) -> Result<Var> {
    if prompts.len() < 2 {
        return Err(Error::Contract(format!(
            "orthogonality needs at least 2 prompts, got {}",
            prompts.len()
        )));
    }
    let flat: Vec<Var> = prompts.iter().map(|&p| g.flatten(p)).collect();
    let mut terms = Vec::new();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            terms.push(g.abs_cosine(flat[i], flat[j], S::lit(eps))?);
        }
    }
    if terms.len() == 1 {
        return Ok(terms[0]);
    }
    let n = terms.len();
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, S::lit(1.0 / n as f64)))
}

/// Orthogonality term over the modality-specific prompts bound in `binding`.
pub fn ortho_loss<S: Scalar>(
    g: &mut Graph<S>,
    bank: &PromptBank<S>,
    binding: &Binding,
    cfg: &ObjectiveConfig,
) -> Result<Var> {
    if bank.strategy != Strategy::Msp {
        return Err(Error::Contract(format!(
            "orthogonality loss is defined for msp prompts, not {}",
            bank.strategy
        )));
    }
    let prompts: Vec<Var> = bank
        .registry
        .modalities()
        .iter()
        .map(|m| binding.get(ParamGroup::Prompt, &msp_key(m.id)))
        .collect();
    pairwise_abs_cosine(g, &prompts, cfg.eps)
}

/// Current orthogonality value of a bank without building a graph.
pub fn ortho_value<S: Scalar>(bank: &PromptBank<S>, eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let prompts: Vec<Var> = bank.params.iter().map(|(_, t)| g.constant(t.clone())).collect();
    if bank.strategy != Strategy::Msp {
        return Err(Error::Contract("orthogonality value needs msp prompts".into()));
    }
    let v = pairwise_abs_cosine(&mut g, &prompts, eps)?;
    Ok(g.value(v).item().as_f64())
}

/// Mean cross-entropy or binary cross-entropy of `logits` against `labels`.
pub fn task_loss<S: Scalar>(g: &mut Graph<S>, logits: Var, labels: &[&Label], kind: TaskKind) -> Result<Var> {
    let (b, k) = g.value(logits).dims2()?;
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "task_loss",
            lhs: vec![b, k],
            rhs: vec![labels.len()],
        });
    }
    match kind {
        TaskKind::MulticlassCe => {
            let idx = labels
                .iter()
                .map(|l| match l {
                    Label::Class(c) if *c < k => Ok(*c),
                    Label::Class(c) => Err(Error::Data(format!("label {c} out of range for {k} classes"))),
                    Label::MultiHot(_) => Err(Error::Data("multi-hot label in a multiclass task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            g.cross_entropy(logits, &idx)
        }
        TaskKind::MultilabelBce => {
            let mut targets = Vec::with_capacity(b * k);
            for l in labels {
                match l {
                    Label::MultiHot(v) if v.len() == k => targets.extend(v.iter().map(|&x| S::lit(x as f64))),
                    Label::MultiHot(v) => {
                        return Err(Error::Data(format!("multi-hot label of length {} for {k} classes", v.len())))
                    }
                    Label::Class(_) => return Err(Error::Data("class label in a multilabel task".into())),
                }
            }
            g.bce_with_logits(logits, &Tensor::new(vec![b, k], targets)?)
        }
    }
}

/// `task + λ·ortho`; without an ortho term, or with `λ = 0`, the task node itself.
pub fn total_loss<S: Scalar>(g: &mut Graph<S>, task: Var, ortho: Option<Var>, cfg: &ObjectiveConfig) -> Result<Var> {
    match ortho {
        Some(o) if cfg.lambda != 0.0 => {
            let w = g.scale(o, S::lit(cfg.lambda));
            g.add(task, w)
        }
        _ => Ok(task),
    }
}
