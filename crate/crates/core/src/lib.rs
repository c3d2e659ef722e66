//! Delineation of non-administrative urban regions from geo-located point
//! records.
//!
//! The crate turns a stream of `(user, location, time)` observations into a
//! weighted, directed origin–destination network over a square fishnet,
//! partitions that network by minimizing the two-level map equation, and
//! checks the resulting regions against a gravity model of spatial
//! interaction. Mobility statistics (displacement lengths, radius of
//! gyration) and their piecewise distribution fits are computed along the
//! way.
//!
//! Module map:
//!
//! - [`ingest`]: record parsing, de-duplication, speed and residency filters
//! - [`geo`]: planar projection, fishnet tessellation, polygon masks
//! - [`mobility`]: displacements, radius of gyration, CCDFs, MLE fits
//! - [`odgraph`]: origin–destination graph construction and export
//! - [`mapeq`]: walker rates, map-equation codelength and its optimizer
//! - [`gravity`]: region summaries and gravity-model fit
//! - [`synth`]: synthetic truncated Lévy-walk corpora with ground truth
//! - [`pipeline`]: staged and end-to-end runs with hashed manifests

pub mod error;
pub mod geo;
pub mod gravity;
pub mod ingest;
pub mod mapeq;
pub mod mobility;
pub mod odgraph;
pub mod pipeline;
pub mod synth;

mod numeric;

pub use error::{Error, Result};

/// Build identifier embedded in every run manifest.
pub const BUILD_ID: &str = concat!("mobnet ", env!("CARGO_PKG_VERSION"));
