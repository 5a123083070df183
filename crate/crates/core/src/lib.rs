//! Core of a latent-factor-augmented graph contrastive recommender.
//!
//! A sparse user-item graph is factorized by alternating least squares into a
//! low-rank pair `P, Q`. Node representations are then learned in two
//! channels: a LightGCN-style propagation over the normalized adjacency, and an
//! augmented propagation over the dense low-rank graph `P Qᵀ` evaluated in
//! factored order. The two views are tied together by an InfoNCE objective and
//! trained jointly with BPR ranking loss. Models are evaluated with the
//! all-ranking Top-K protocol.
//!
//! The crate is `no_std` and only needs an allocator; file formats, text
//! loading and the command line live in the `lfagcl` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod eval;
pub mod lfa;
pub mod linalg;
pub mod objectives;
pub mod propagation;
pub mod sparse;
pub mod synthetic;
pub mod trainer;

pub use data::{
    build_graph, group_users_by_degree, split_dataset, DataError, DatasetSplit, Interaction,
    InteractionGraph, RawInteractions, SparsityGroups,
};
pub use eval::{evaluate, EvalError, EvalOptions, MetricReport, NdcgVariant, RankingResult};
pub use lfa::{train_lfa, LatentFactors, LfaConfig, LfaError, LfaSolver, ObservedEntries};
pub use linalg::Matrix;
pub use objectives::{
    joint_loss_and_gradients, ClNegatives, JointHyper, LossBreakdown, Minibatch,
};
pub use propagation::{AugmentedStates, EmbeddingTables, LayerStates, Mode};
pub use sparse::CsrMatrix;
pub use trainer::{fit, AdamState, FitOutcome, Model, TrainConfig, TrainError};
