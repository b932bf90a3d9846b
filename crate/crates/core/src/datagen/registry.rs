use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEXT_ID: char = 't';
pub const IMAGE_ID: char = 'i';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Text,
    Image,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modality {
    pub id: char,
    pub kind: ModalityKind,
    pub dims: Vec<usize>,
}

/// Ordered set of modalities a dataset and its prompt banks range over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalityRegistry {
    modalities: Vec<Modality>,
}

impl ModalityRegistry {
    pub fn new(modalities: Vec<Modality>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Config("registry needs at least one modality".into()));
        }
        if modalities.len() > 16 {
            return Err(Error::Config("at most 16 modalities are supported".into()));
        }
        for (i, m) in modalities.iter().enumerate() {
            if modalities[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::Config(format!("duplicate modality id '{}'", m.id)));
            }
            if !m.id.is_ascii_alphanumeric() {
                return Err(Error::Config(format!("modality id '{}' must be ASCII alphanumeric", m.id)));
            }
        }
        Ok(ModalityRegistry { modalities })
    }

    /// Text (m₁) followed by image (m₂).
    pub fn text_image(max_text_len: usize, h: usize, w: usize) -> Self {
        ModalityRegistry {
            modalities: vec![
                Modality {
                    id: TEXT_ID,
                    kind: ModalityKind::Text,
                    dims: vec![max_text_len],
                },
                Modality {
                    id: IMAGE_ID,
                    kind: ModalityKind::Image,
                    dims: vec![h, w],
                },
            ],
        }
    }

    /// Registry of `m` abstract modalities, used when only the modality count
    /// matters (prompt banks for M > 2).
    pub fn generic(m: usize) -> Result<Self> {
        // no `c`: it would collide with the complete-case prompt key
        const IDS: &[u8] = b"tiabdefghjklmnop";
        if m == 0 || m > IDS.len() {
            return Err(Error::Config(format!("unsupported modality count {m}")));
        }
        let modalities = (0..m)
            .map(|k| Modality {
                id: IDS[k] as char,
                kind: if k == 1 { ModalityKind::Image } else { ModalityKind::Text },
                dims: vec![1],
            })
            .collect();
        Self::new(modalities)
    }

    pub fn m(&self) -> usize {
        self.modalities.len()
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn index_of(&self, id: char) -> Option<usize> {
        self.modalities.iter().position(|m| m.id == id)
    }

    pub fn get(&self, id: char) -> Option<&Modality> {
        self.modalities.iter().find(|m| m.id == id)
    }

    /// Every nonempty subset as a pattern, ordered by bitmask.
    pub fn nonempty_patterns(&self) -> Vec<MissingPattern> {
        (1u32..(1 << self.m())).map(MissingPattern).collect()
    }

    pub fn complete(&self) -> MissingPattern {
        MissingPattern((1 << self.m()) - 1)
    }

    pub fn only(&self, id: char) -> Option<MissingPattern> {
        self.index_of(id).map(|i| MissingPattern(1 << i))
    }
}

/// Which registry modalities a sample actually carries; bit `k` refers to the
/// `k`-th registry entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MissingPattern(u32);

impl MissingPattern {
    pub fn from_bits(bits: u32, m: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::Data("pattern marks every modality missing".into()));
        }
        if bits >> m != 0 {
            return Err(Error::Data(format!("pattern bits {bits:#b} exceed {m} modalities")));
        }
        Ok(MissingPattern(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, index: usize) -> bool {
        self.0 & (1 << index) != 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_complete(self, m: usize) -> bool {
        self.0 == (1 << m) - 1
    }

    pub fn present(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&k| self.contains(k))
    }

    /// Present modality ids, sorted, e.g. `"it"`.
    pub fn to_ids(self, reg: &ModalityRegistry) -> String {
        let mut ids: Vec<char> = self.present().map(|k| reg.modalities[k].id).collect();
        ids.sort_unstable();
        ids.into_iter().collect()
    }

    pub fn parse(s: &str, reg: &ModalityRegistry) -> Result<Self> {
        let mut bits = 0u32;
        for c in s.chars() {
            let k = reg
                .index_of(c)
                .ok_or_else(|| Error::Data(format!("unknown modality '{c}' in pattern \"{s}\"")))?;
            if bits & (1 << k) != 0 {
                return Err(Error::Data(format!("modality '{c}' repeated in pattern \"{s}\"")));
            }
            bits |= 1 << k;
        }
        Self::from_bits(bits, reg.m())
    }
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:b}", self.0)
    }
}
