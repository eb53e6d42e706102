//! Dynamic multi-network mining for tensor time series.
//!
//! A tensor time series is split into segments and grouped into clusters;
//! each cluster carries one sparse Gaussian dependency network per
//! non-temporal mode. Segment boundaries, cluster count and sparsity are
//! chosen by minimizing a total description cost.

pub mod cluster;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod export;
pub mod glasso;
pub mod io;
pub mod mdl;
pub mod model;
pub mod segmenter;
pub mod synth;
pub mod tensor;

pub use cluster::{assign_segments, detect_clusters, fit, infer_networks, ClusterConfig, ClusterParams};
pub use error::{Error, Result};
pub use eval::{loglik_report, macro_f1, EvalReport};
pub use glasso::{AdmmConfig, ModeNetwork};
pub use mdl::{cost_total, Assignments, CostBreakdown};
pub use model::ClusterModel;
pub use segmenter::{detect, init_cutpoints, InitialWindows, Segmentation};
pub use synth::{gen_tts, GroundTruth, Sequence};
pub use tensor::TensorTS;
