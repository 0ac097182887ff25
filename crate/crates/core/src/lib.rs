//! Transformer-based hierarchical clustering (THC) for weighted-graph
//! classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense matrices with a reverse-mode gradient tape
//! * [`model`]: stochastic attention encoder, shared soft assignment,
//!   coarsening and readouts
//! * [`objective`]: cross-entropy plus assignment regularisers
//! * [`train`]: splits, optimiser, epoch loop, model selection, final
//!   assignment extraction
//! * [`data`]: planted-community generator and the on-disk dataset format
//! * [`cluster_eval`]: purity/NMI/homogeneity, AUROC, Lloyd and Louvain
//! * [`checkpoint`]: binary model container
//! * [`bench`]: layer timing for the complexity comparison
//! * [`cli`]: the `thc` command line

pub mod bench;
pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod cluster_eval;
pub mod data;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod train;

pub use model::{ClusterMode, Mode, ModelConfig, ThcModel};
pub use tensor::{Tape, Tensor, Var};
