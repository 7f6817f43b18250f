//! Clustering feature vectors by learned link prediction.
//!
//! For every instance (the *pivot*) a small subgraph of its nearest
//! neighbors is built, a graph convolution network scores how likely the
//! pivot is to share an identity with each direct neighbor, and the scored
//! links are merged into clusters.
//!
//! ```
//! use pivotgcn::dataset::{synth_generate, SynthSpec};
//! use pivotgcn::pipeline::prepare_features;
//!
//! let spec = SynthSpec { num_identities: 3, samples_per_identity: (4, 6), dim: 8, ..SynthSpec::default() };
//! let fs = prepare_features(synth_generate(&spec)?, true)?;
//! assert!(fs.is_normalized());
//! # Ok::<(), pivotgcn::Error>(())
//! ```

pub mod config;
pub mod dataset;
mod error;
pub mod gcn;
pub mod ips;
pub mod knn;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};

// The guide's chapters are compiled as doctests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/subgraphs.md")]
    mod subgraphs {}
    #[doc = include_str!("../../../book/src/graph_convolution.md")]
    mod graph_convolution {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
