use std::fmt;

use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;
use crate::scalar::Scalar;

/// Named tensors in manifest order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S: Scalar = f64> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        let name = name.into();
        debug_assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in &self.entries {
            h.update(n.as_bytes());
            h.update([0]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.numel() * S::BYTES);
            for &x in t.data() {
                x.write_le(&mut buf);
            }
            h.update(&buf);
        }
        let digest: [u8; 32] = h.finalize().into();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Backbone,
    Head,
    Prompt,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Head => "head",
            ParamGroup::Prompt => "prompt",
        }
    }
}

/// Fully qualified parameter name such as `prompt/P_is`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub group: ParamGroup,
    pub name: String,
}

impl ParamId {
    pub fn new(group: ParamGroup, name: impl Into<String>) -> Self {
        ParamId {
            group,
            name: name.into(),
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.group.as_str(), self.name)
    }
}
