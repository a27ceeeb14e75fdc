//! Training-data attribution from feature embeddings, and the counterfactual
//! protocols used to evaluate it.
//!
//! The crate is organised bottom-up:
//!
//! - [`store`]: the `ATRB` embedding file format and a Gaussian-mixture generator.
//! - [`esvm`]: exemplar SVM training (one positive against many negatives).
//! - [`attribution`]: per-training-sample scores (ℓ2, cosine, ESVM, Grad-Cos,
//!   signed sparse ℓ2) and ranking.
//! - [`oracle`]: a softmax-regression retraining oracle with lazy dataset
//!   modifications and the counterfactual test.
//! - [`brittleness`]: bisection search for removal/mislabel support, CDF/AUC
//!   reporting and win-rate comparison.
//! - [`lds`]: the linear datamodeling score and Spearman correlation.
//! - [`report`], [`manifest`] and [`cli`]: CSV/SVG export and the command-line
//!   surface.

pub mod attribution;
pub mod brittleness;
pub mod cli;
pub mod esvm;
pub mod lds;
pub mod manifest;
pub mod oracle;
pub mod report;
pub mod store;

mod seed;

pub use attribution::{Method, RankFilter, RankedIndices, ScoreVector};
pub use brittleness::{BrittlenessReport, SupportMode, SupportQuery, SupportResult};
pub use esvm::{EsvmParams, Hyperplane};
pub use lds::LdsResult;
pub use oracle::{Modification, SoftmaxModel, SoftmaxOracle, TrainConfig};
pub use store::{EmbeddingSet, SyntheticConfig, TargetSample};
