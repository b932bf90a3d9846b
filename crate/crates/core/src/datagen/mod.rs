//! Synthetic two-modality data, the missing-modality protocol and dataset
//! files.

pub mod io;
mod masking;
mod registry;
mod sample;
mod synth;

pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
pub use masking::{apply_missing, GroupCounts, ScenarioConfig};
pub use registry::{MissingPattern, Modality, ModalityKind, ModalityRegistry, IMAGE_ID, TEXT_ID};
pub use sample::{
    Dataset, ImageGrid, Label, LabelKind, PlaceholderPolicy, Sample, CLS_TOKEN, FIRST_CONTENT_TOKEN, PAD_TOKEN,
    SEP_TOKEN,
};
pub use synth::{generate_synthetic, SyntheticTask, SyntheticTaskSpec};
