//! Deep learning on dynamic 3D point cloud sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: frames, sequences, grid-hash spatial index, FPS and Hausdorff distance.
//! * [`grouping`]: spatiotemporal neighborhoods (direct and chained-flow) and flow chaining.
//! * [`nncore`]: a small reverse-mode tape, shared MLPs, optimizer and gradient checking.
//! * [`meteor`]: Meteor-ind / Meteor-rel layers, set abstraction, feature propagation and
//!   the architecture presets.
//! * [`theory`]: the sequence-to-set embedding and the sequence distance.
//! * [`toybench`]: the particle-speed toy dataset, grid baselines and the experiment driver.
//! * [`metrics`]: accuracy, IoU and end-point-error statistics.
//! * [`io`]: the PCSQ / PCFL / MTRW binary formats and the dataset manifest.
//! * [`suites`]: gradient-check suites and the neighborhood growth benchmark, shared by the CLI
//!   and the acceptance tests.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod grouping;
pub mod io;
pub mod meteor;
pub mod metrics;
pub mod nncore;
pub mod suites;
pub mod theory;
pub mod toybench;

pub use error::{Error, Result};
pub use geometry::{Frame, Point3, Sequence, SpatialIndex};
pub use grouping::{FlowField, Neighborhood, PointRef, RadiusSchedule};
pub use meteor::{ArchitectureSpec, Model, ModelOutput};
pub use nncore::{ParamStore, Tape, Tensor, Var};
