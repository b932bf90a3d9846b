use std::collections::{BTreeMap, HashMap};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ParamId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-2,
            weight_decay: 2e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments and the number of updates applied to one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<S: Scalar = f64> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub t: u64,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros_like(p: &Tensor<S>) -> Self {
        Moments {
            m: Tensor::zeros(p.shape()),
            v: Tensor::zeros(p.shape()),
            t: 0,
        }
    }
}

/// One decoupled-decay Adam update of `param`. A gradient that is exactly
/// zero everywhere leaves parameter and moments untouched; returns whether
/// an update happened.
pub fn adamw_step<S: Scalar>(param: &mut Tensor<S>, grad: &Tensor<S>, st: &mut Moments<S>, hp: &AdamHyper) -> Result<bool> {
    if param.shape() != grad.shape() || st.m.shape() != param.shape() {
        return Err(Error::Dimension {
            op: "adamw_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if grad.data().iter().all(|&g| g == S::zero()) {
        return Ok(false);
    }
    st.t += 1;
    let (b1, b2) = (S::lit(hp.beta1), S::lit(hp.beta2));
    let one = S::one();
    let bc1 = one - S::lit(hp.beta1.powi(st.t as i32));
    let bc2 = one - S::lit(hp.beta2.powi(st.t as i32));
    let (lr, wd, eps) = (S::lit(hp.lr), S::lit(hp.weight_decay), S::lit(hp.eps));
    let theta = param.data_mut();
    let (m, v) = (st.m.data_mut(), st.v.data_mut());
    for (i, &g) in grad.data().iter().enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        let old = theta[i];
        theta[i] = old - lr * (mh / (vh.sqrt() + eps)) - lr * wd * old;
    }
    Ok(true)
}

/// AdamW over a fixed set of parameters. The state holds exactly that set.
#[derive(Clone, Debug)]
pub struct AdamW<S: Scalar = f64> {
    pub hyper: AdamHyper,
    state: BTreeMap<ParamId, Moments<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(hyper: AdamHyper, model: &Model<S>, trainable: &[ParamId]) -> Result<Self> {
        let mut state = BTreeMap::new();
        for id in trainable {
            let p = model
                .param(id)
                .ok_or_else(|| Error::Contract(format!("unknown trainable parameter {id}")))?;
            state.insert(id.clone(), Moments::zeros_like(p));
        }
        Ok(AdamW { hyper, state })
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamId> {
        self.state.keys()
    }

    pub fn moments(&self, id: &ParamId) -> Option<&Moments<S>> {
        self.state.get(id)
    }

    /// Updates every tracked parameter from `grads`, which must cover the
    /// tracked set and nothing else.
    pub fn step(&mut self, model: &mut Model<S>, grads: &HashMap<ParamId, Tensor<S>>) -> Result<()> {
        if let Some(stray) = grads.keys().find(|id| !self.state.contains_key(*id)) {
            return Err(Error::Contract(format!("gradient for non-trainable parameter {stray}")));
        }
        for (id, st) in &mut self.state {
            let g = grads
                .get(id)
                .ok_or_else(|| Error::Contract(format!("missing gradient for {id}")))?;
            let p = model
                .param_mut(id)
                .ok_or_else(|| Error::Contract(format!("parameter {id} vanished from the model")))?;
            adamw_step(p, g, st, &self.hyper)?;
        }
        Ok(())
    }
}
