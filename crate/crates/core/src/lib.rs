//! Budget-constrained contextual-bandit routing over a pool of language models.
//!
//! Queries and models share a low-dimensional embedding space learned from
//! pairwise preferences ([`pretrain`]). Those embeddings seed per-arm ridge
//! priors for an optimistic linear bandit ([`bandit`]), and an online knapsack
//! policy ([`cost_policy`]) keeps deployment spend under a budget. [`replay`]
//! runs the offline learning/deployment protocol, and [`oful`] compares OFUL
//! with its preference-informed variant on synthetic linear bandits.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod baselines;
pub mod cost_policy;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oful;
pub mod pretrain;
pub mod replay;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
