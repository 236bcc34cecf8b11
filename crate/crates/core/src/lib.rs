//! Text-to-video retrieval over precomputed features: attentional feature
//! fusion, negation-aware training, reranking, pseudo-caption selection and
//! TREC-style evaluation.

pub mod error;
pub mod eval;
pub mod io;
pub mod laff;
pub mod negation;
pub mod numeric;
pub mod pseudocap;
pub mod rerank;
pub mod train;

pub use error::{Error, Result};
pub use laff::{feature_importance, FeatureBundle, LaffModel, Modality, SpaceSpec};
pub use negation::{Caption, Margins, Triplet};
pub use train::{fit, TrainConfig, TrainReport, ValidationSet};
