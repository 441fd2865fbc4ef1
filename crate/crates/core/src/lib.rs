//! Task-adaptive asymmetric deep cross-modal hashing.
//!
//! Two retrieval directions are learned independently: image queries against
//! a text database (I2T) and text queries against an image database (T2I).
//! Each direction owns an image encoder, a text encoder, binary codes for the
//! training items, and a projection that regresses the query modality's
//! features onto the class labels.
//!
//! Training alternates SGD sweeps over both encoders with two exact block
//! updates: the codes are the sign of a weighted feature sum and the
//! projection is a ridge closed form. Retrieval ranks packed codes by
//! Hamming distance; evaluation reports mAP and topK precision.
//!
//! Module map:
//!
//! - [`matstore`]: dense matrices, products, Cholesky solve
//! - [`dataset`]: aligned multi-modal data, labels, splits, on-disk format,
//!   synthetic generator
//! - [`encoder`]: MLP encoders with forward, backward and SGD
//! - [`objective`]: objective value and feature gradients per task
//! - [`trainer`]: alternating optimization, variants, model files
//! - [`hamming`]: packed codes, Hamming ranking, query/database encoding
//! - [`evalkit`]: mAP, topK precision, Welch t-test, CSV output
//! - [`gradcheck`]: finite-difference verification harness

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod hamming;
pub mod matstore;
pub mod objective;
pub mod trainer;

pub use dataset::{Labels, MultiModalDataset, Similarity, SplitSpec, SynthParams};
pub use encoder::{GradBuffer, MlpEncoder};
pub use error::{Error, Result};
pub use evalkit::EvalReport;
pub use hamming::{CodeMatrix, DatabaseCodes, RetrievalIndex};
pub use matstore::Matrix;
pub use objective::{HyperParams, Preset, Regression, Task};
pub use trainer::{TaskModel, TrainConfig, Variant};
