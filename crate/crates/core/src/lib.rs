//! Semi-supervised kernel SVM training with triply stochastic functional gradients.
//!
//! Each training iteration samples a labeled batch, an unlabeled batch and a fresh
//! block of random Fourier features regenerated from `(seed, iteration)`, so a model
//! is just its per-iteration coefficient vectors. The crate also ships the
//! fixed-feature SGD baseline, an exact-kernel diagnostics engine that tracks the
//! hypothetical kernel iterate alongside training, grid search with unlabeled k-fold
//! cross-validation, and timing benchmarks.

pub mod baseline;
pub mod bench;
pub mod data;
pub mod diagnostics;
pub mod loss;
pub mod model;
pub mod rf;
pub mod search;
pub mod synthetic;
pub mod trainer;

pub use data::{SemiDataset, SemiSplit};
pub use loss::{DerivativeConvention, Label, UnlabeledLossKind};
pub use model::Model;
pub use rf::{FeatureBlock, KernelSpec};
pub use trainer::{train, StepSchedule, TrainConfig};
