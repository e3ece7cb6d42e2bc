//! Multi-level sequence learners (MLSL) for node prediction on graphs.
//!
//! A target node's neighborhood is unfolded into a depth-bounded tree; one
//! LSTM per tree depth summarizes each node's children for its parent, and
//! the depth-1 learner's output is the prediction for the root.
//!
//! The crate also carries the crowdsourcing baselines (majority vote, KOS
//! message passing, one-coin EM, grade averaging), a spammer-hammer data
//! generator, evaluation metrics, and the text file formats used by the
//! `mlsl` command-line tool.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod seed;

pub use error::{Error, Result};
pub use graph::{ChildOrder, Graph, NodeId, UnfoldTree, Unfolding};
pub use lstm::{AdaDelta, AdaDeltaConfig, LearnerShape, LstmCache, LstmGrads, LstmParams};
pub use model::{LabeledDataset, MlslModel, OutputMode, Target, TrainConfig, Trainer};
