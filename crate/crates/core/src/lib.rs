//! Core algorithms for a CAN bus intrusion detection testbed.
//!
//! The crate covers the full loop of a desk-scale study: synthetic CAN
//! traffic generation and log parsing, spectral feature extraction over
//! ID occurrence cycles, federated random-forest training with a
//! content-addressed model registry, substitute-model attacks (FGSM,
//! saliency, linear-SVM step, decision-tree path flips), two-sample
//! statistical detection of perturbed batches, and dataset augmentation
//! that folds detected batches back into training.
//!
//! Every routine that draws randomness takes an explicit seed; a fixed
//! seed reproduces outputs byte for byte.

#![warn(missing_docs)]

pub mod attack;
pub mod augment;
pub mod canonical;
pub mod detector;
pub mod error;
pub mod features;
pub mod forest;
pub mod ingest;
pub mod registry;
pub mod report;
pub mod seeding;
pub mod substitute;
mod textfmt;
pub mod types;

pub use attack::{AdversarialBatch, AttackMethod, SubstituteModel};
pub use canonical::Digest;
pub use detector::{DetectionVerdict, DetectorConfig, StatKind};
pub use error::Error;
pub use features::{FeatureParams, FeatureVector, LabeledDataset, NormState, FEATURE_DIM};
pub use forest::{DecisionTree, FederatedForest, ForestParams, PartialForest, TreeParams};
pub use registry::{Chain, ContentStore};
pub use textfmt::sig6;
pub use types::{CanFrame, CanLog, TrafficClass};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
