//! On-disk formats, dataset manifests, configuration and synthetic data.

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod manifest;
pub mod synth;
pub mod tsv;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::Config;
pub use features::{bundles_from_files, FeatureFile};
pub use manifest::{Dataset, Manifest, NEGATED_SUFFIX};
pub use synth::{generate, synth_dataset, SynthConfig, SynthData, SynthSpace};
