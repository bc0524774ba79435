//! In-situ instrumentation for convolutional network training.
//!
//! The crate trains a small CNN, turns its weights and batch-summed
//! activations into polygon geometry, finds redundant filters by Pearson
//! correlation and merges them away, and writes geometry as CSV or VTK XML
//! PolyData. Math is generic over [`Scalar`]; the `*f` aliases below fix it
//! to `f64`, which every shipped tool uses.

pub mod cnn;
pub mod emit;
mod error;
pub mod prune;
mod scalar;
pub mod similarity;
pub mod snapshot;
pub mod tensor;
pub mod view;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use emit::{read_vtp, write_csv, write_vtp, Format, VtpMode};
pub use prune::{apply_prune, plan_prune, Merge, PrunePlan};
pub use similarity::{group_filters, pcc, pcc_matrix, Group, SimilarityReport};
pub use snapshot::{LayerState, Snapshot};
pub use tensor::{batch_sum, flatten_window, normalize_unit, Matrix, Tensor3, Tensor4};
pub use view::{grid_layout, GridLayout, PolyData, TrajectoryTrace, ViewKind};

pub type Tensor4f = Tensor4<f64>;
pub type Tensor3f = Tensor3<f64>;
pub type Matrixf = Matrix<f64>;
pub type Networkf = cnn::Network<f64>;
pub type Datasetf = cnn::Dataset<f64>;
pub type Snapshotf = Snapshot<f64>;
