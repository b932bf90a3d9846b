use crate::datagen::{Dataset, SyntheticTaskSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub patch_size: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub n_classes: usize,
    /// Tokens per prompt slice.
    pub prompt_len: usize,
    /// Layers whose attention input receives a prompt slice, ascending.
    pub prompt_layers: Vec<usize>,
}

impl ModelConfig {
    /// Small default sized to a dataset's vocabulary, text length, image and
    /// class count.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let (h, w) = ds.image_dims();
        Self::for_dataset_dims(ds.vocab_size, ds.max_text_len(), h, w, ds.n_classes)
    }

    fn for_dataset_dims(vocab_size: usize, max_text_len: usize, h: usize, w: usize, n_classes: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_mult: 2,
            vocab_size,
            max_text_len,
            patch_size: 4,
            image_h: h,
            image_w: w,
            n_classes,
            prompt_len: 4,
            prompt_layers: vec![0],
        }
    }

    /// [`ModelConfig::for_dataset`] for the data a generator would produce.
    pub fn for_spec(spec: &SyntheticTaskSpec) -> Self {
        Self::for_dataset_dims(spec.vocab_size(), spec.max_text_len(), spec.h, spec.w, spec.n_classes())
    }

    /// This architecture with vocabulary, text length, image and class
    /// count taken from `ds`.
    pub fn sized_for(&self, ds: &Dataset) -> Self {
        let (h, w) = ds.image_dims();
        ModelConfig {
            vocab_size: ds.vocab_size,
            max_text_len: ds.max_text_len(),
            image_h: h,
            image_w: w,
            n_classes: ds.n_classes,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model config: {m}")));
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
            ("vocab_size", self.vocab_size),
            ("max_text_len", self.max_text_len),
            ("patch_size", self.patch_size),
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("n_classes", self.n_classes),
            ("prompt_len", self.prompt_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.image_h % self.patch_size != 0 || self.image_w % self.patch_size != 0 {
            return bad(format!(
                "patch_size {} does not divide image {}x{}",
                self.patch_size, self.image_h, self.image_w
            ));
        }
        if self.prompt_layers.is_empty() {
            return bad("prompt_layers must name at least one layer".into());
        }
        if self.prompt_layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("prompt_layers must be strictly ascending".into());
        }
        if let Some(l) = self.prompt_layers.iter().find(|&&l| l >= self.n_layers) {
            return bad(format!("prompt layer {l} outside [0, {})", self.n_layers));
        }
        if self.vocab_size <= crate::datagen::FIRST_CONTENT_TOKEN as usize {
            return bad("vocab_size must leave room for content tokens".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_patches(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Token count before any prompt is attached.
    pub fn base_seq_len(&self) -> usize {
        self.max_text_len + self.n_patches()
    }
}
