//! LiDAR place recognition through 2-D projections.
//!
//! The pipeline turns each scan into a multi-channel image ([`projection`]),
//! encodes the image into a token grid ([`features`]), pools the grid into a
//! unit-norm global descriptor ([`aggregation`]) and evaluates exact nearest
//! neighbour retrieval against pose ground truth ([`retrieval`], [`metrics`]).
//!
//! Binary interchange formats (`PPRJ`, `PFEA`, `PDSC`, `PVLD`) are little-endian
//! and documented next to their readers and writers.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod aggregation;
pub mod cli;
mod codec;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pointcloud;
pub mod projection;
pub mod retrieval;

pub use error::{Error, Result};
