//! Factored two-modality classification task.
//!
//! Each sample draws an image factor `a` (which prototype the image shows)
//! and a text factor `b` (which signature token group the text uses). The
//! label is `a·B + b`, so neither modality alone determines it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::registry::ModalityRegistry;
use super::sample::{Dataset, ImageGrid, Label, LabelKind, Sample, CLS_TOKEN, FIRST_CONTENT_TOKEN, SEP_TOKEN};
use crate::error::{Error, Result};

/// Low and high pixel levels of the binary prototypes.
const PROTO_LEVELS: [f64; 2] = [0.2, 0.8];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    /// Number of image prototypes.
    pub a: usize,
    /// Number of text signature groups.
    pub b: usize,
    pub h: usize,
    pub w: usize,
    /// Content tokens per sample, excluding `[CLS]`/`[SEP]`.
    pub content_len: usize,
    /// Tokens per signature group.
    pub group_size: usize,
    pub n_distractors: usize,
    pub noise_sigma: f64,
    pub text_noise: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub label_kind: LabelKind,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            a: 4,
            b: 4,
            h: 8,
            w: 8,
            content_len: 6,
            group_size: 4,
            n_distractors: 8,
            noise_sigma: 0.05,
            text_noise: 0.2,
            n_samples: 2000,
            seed: 1,
            label_kind: LabelKind::Multiclass,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn n_classes(&self) -> usize {
        match self.label_kind {
            LabelKind::Multiclass => self.a * self.b,
            LabelKind::Multilabel => self.a + self.b,
        }
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_CONTENT_TOKEN as usize + self.b * self.group_size + self.n_distractors
    }

    pub fn max_text_len(&self) -> usize {
        self.content_len + 2
    }

    pub fn registry(&self) -> ModalityRegistry {
        ModalityRegistry::text_image(self.max_text_len(), self.h, self.w)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.a < 2 || self.b < 2 {
            return bad("A and B must both be at least 2");
        }
        if self.h == 0 || self.w == 0 || self.content_len == 0 || self.group_size == 0 {
            return bad("image dims, content length and group size must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a nonnegative finite number");
        }
        if !(0.0..=1.0).contains(&self.text_noise) {
            return bad("text_noise must be a probability");
        }
        if self.text_noise > 0.0 && self.n_distractors == 0 {
            return bad("text_noise > 0 needs at least one distractor token");
        }
        Ok(())
    }
}

/// The generative model behind a [`SyntheticTaskSpec`]: prototypes and token
/// groups are fixed by the seed; samples are drawn on per-index streams.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    prototypes: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let npx = spec.h * spec.w;
        let prototypes: Vec<Vec<f64>> = (0..spec.a)
            .map(|_| (0..npx).map(|_| PROTO_LEVELS[rng.random_range(0..2)]).collect())
            .collect();
        let min_dist = 4.0 * spec.noise_sigma * (npx as f64).sqrt();
        for i in 0..spec.a {
            for j in 0..i {
                let d = prototypes[i]
                    .iter()
                    .zip(&prototypes[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if d <= min_dist {
                    return Err(Error::Config(format!(
                        "prototypes {j} and {i} are {d:.4} apart, need more than {min_dist:.4}; \
                         lower noise_sigma or enlarge the image"
                    )));
                }
            }
        }
        Ok(SyntheticTask { spec, prototypes })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// Token ids that signal text factor `b`.
    pub fn signature_tokens(&self, b: usize) -> std::ops::Range<u32> {
        let start = FIRST_CONTENT_TOKEN + (b * self.spec.group_size) as u32;
        start..start + self.spec.group_size as u32
    }

    pub fn distractor_tokens(&self) -> std::ops::Range<u32> {
        let start = FIRST_CONTENT_TOKEN + (self.spec.b * self.spec.group_size) as u32;
        start..start + self.spec.n_distractors as u32
    }

    pub fn label_for(&self, a: usize, b: usize) -> Label {
        match self.spec.label_kind {
            LabelKind::Multiclass => Label::Class(a * self.spec.b + b),
            LabelKind::Multilabel => {
                let mut v = vec![0u8; self.spec.a + self.spec.b];
                v[a] = 1;
                v[self.spec.a + b] = 1;
                Label::MultiHot(v)
            }
        }
    }

    /// Sample `index`, drawn from its own stream so generation order does
    /// not matter.
    pub fn sample(&self, index: u64) -> Sample {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(index + 1);
        let a = rng.random_range(0..s.a);
        let b = rng.random_range(0..s.b);
        let noise = Normal::new(0.0, s.noise_sigma).expect("validated sigma");
        let pixels = self.prototypes[a]
            .iter()
            .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        let sig = self.signature_tokens(b);
        let dis = self.distractor_tokens();
        let mut text = Vec::with_capacity(s.content_len + 2);
        text.push(CLS_TOKEN);
        for pos in 0..s.content_len {
            let tok = if pos > 0 && rng.random_bool(s.text_noise) {
                rng.random_range(dis.clone())
            } else {
                rng.random_range(sig.clone())
            };
            text.push(tok);
        }
        text.push(SEP_TOKEN);
        Sample {
            text,
            image: ImageGrid {
                h: s.h,
                w: s.w,
                pixels,
            },
            label: self.label_for(a, b),
            pattern: self.spec.registry().complete(),
        }
    }

    pub fn generate(&self) -> Dataset {
        let samples = (0..self.spec.n_samples as u64)
            .into_par_iter()
            .map(|i| self.sample(i))
            .collect();
        Dataset {
            registry: self.spec.registry(),
            vocab_size: self.spec.vocab_size(),
            n_classes: self.spec.n_classes(),
            label_kind: self.spec.label_kind,
            samples,
        }
    }
}

/// Modality-complete dataset of `spec.n_samples` samples.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    Ok(SyntheticTask::new(spec.clone())?.generate())
}
