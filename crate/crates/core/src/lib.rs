#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

//! Filter pruning of small CNNs by relevance: the matrix-based mutual
//! information between each filter's activation maps and the class labels.

pub mod config;
pub mod data;
pub mod error;
pub mod infotheory;
pub mod iplane;
pub mod linalg;
pub mod nnet;
pub mod par;
pub mod pipeline;
pub mod pruner;
pub mod relevance;

pub use error::{Error, ErrorKind, Result};
