use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::registry::{MissingPattern, ModalityRegistry, IMAGE_ID, TEXT_ID};
use crate::error::{Error, Result};

pub const PAD_TOKEN: u32 = 0;
pub const CLS_TOKEN: u32 = 1;
pub const SEP_TOKEN: u32 = 2;
/// First id usable for content tokens.
pub const FIRST_CONTENT_TOKEN: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Multiclass,
    Multilabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    MultiHot(Vec<u8>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::MultiHot(_) => None,
        }
    }
}

/// Row-major `h×w` pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        ImageGrid {
            h,
            w,
            pixels: vec![value; h * w],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Token ids including the leading `[CLS]` and trailing `[SEP]`.
    pub text: Vec<u32>,
    pub image: ImageGrid,
    pub label: Label,
    pub pattern: MissingPattern,
}

impl Sample {
    /// SHA-256 over label, pattern, tokens and pixel bits.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        match &self.label {
            Label::Class(c) => {
                h.update(b"c");
                h.update((*c as u64).to_le_bytes());
            }
            Label::MultiHot(v) => {
                h.update(b"m");
                h.update(v);
            }
        }
        h.update(self.pattern.bits().to_le_bytes());
        h.update((self.text.len() as u64).to_le_bytes());
        for t in &self.text {
            h.update(t.to_le_bytes());
        }
        h.update((self.image.h as u64).to_le_bytes());
        h.update((self.image.w as u64).to_le_bytes());
        for p in &self.image.pixels {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Constant stand-ins for absent modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaceholderPolicy {
    pub text: Vec<u32>,
    pub image_value: f64,
}

impl Default for PlaceholderPolicy {
    fn default() -> Self {
        PlaceholderPolicy {
            text: vec![CLS_TOKEN, SEP_TOKEN],
            image_value: 1.0,
        }
    }
}

impl PlaceholderPolicy {
    pub fn image(&self, h: usize, w: usize) -> ImageGrid {
        ImageGrid::filled(h, w, self.image_value)
    }

    pub fn is_text_placeholder(&self, text: &[u32]) -> bool {
        text == self.text.as_slice()
    }

    pub fn is_image_placeholder(&self, img: &ImageGrid) -> bool {
        img.pixels.iter().all(|&p| p.to_bits() == self.image_value.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub registry: ModalityRegistry,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub label_kind: LabelKind,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_text_len(&self) -> usize {
        self.registry.get(TEXT_ID).map_or(0, |m| m.dims[0])
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.registry
            .get(IMAGE_ID)
            .map_or((0, 0), |m| (m.dims[0], m.dims[1]))
    }

    pub fn text_index(&self) -> usize {
        self.registry.index_of(TEXT_ID).expect("registry has text")
    }

    pub fn image_index(&self) -> usize {
        self.registry.index_of(IMAGE_ID).expect("registry has image")
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            registry: self.registry.clone(),
            vocab_size: self.vocab_size,
            n_classes: self.n_classes,
            label_kind: self.label_kind,
            samples,
        }
    }

    /// Splits off the first `n` samples.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Config(format!(
                "cannot split {n} samples from a dataset of {}",
                self.len()
            )));
        }
        Ok((
            self.with_samples(self.samples[..n].to_vec()),
            self.with_samples(self.samples[n..].to_vec()),
        ))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        self.with_samples(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Hash of every sample in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.content_hash());
        }
        let digest: [u8; 32] = h.finalize().into();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Counts of (complete, image-only, text-only) samples for a two-modality
    /// registry.
    pub fn pattern_counts(&self) -> (usize, usize, usize) {
        let (ti, ii) = (self.text_index(), self.image_index());
        let mut counts = (0, 0, 0);
        for s in &self.samples {
            match (s.pattern.contains(ii), s.pattern.contains(ti)) {
                (true, true) => counts.0 += 1,
                (true, false) => counts.1 += 1,
                (false, true) => counts.2 += 1,
                (false, false) => {}
            }
        }
        counts
    }
}
