//! Meteor modules and the architectures built from them.
//!
//! A Meteor layer updates each point of a sequence by max-pooling a shared MLP over its
//! spatiotemporal neighborhood. The `ind` variant feeds `(f_j, x_j - x_i, t_j - t_i)`,
//! the `rel` variant additionally feeds the query's own feature `f_i` after `f_j`.
//! Time offsets are raw signed frame differences.

mod arch;
mod layers;
mod model;

pub use arch::{
    default_options, meteornet_cls, meteornet_flow, meteornet_seg, preset, seg_widths, toy_cls,
    ArchitectureSpec, EncoderLayer, FpConfig, Fusion, HeadKind, HeadSpec, PresetOptions, PRESET_NAMES,
};
pub use layers::{
    feature_propagation, interpolation_rows, meteor_forward, meteor_neighborhoods, set_abstraction,
    GroupingConfig, MeteorLayerConfig, MeteorMode, PointLevel, SampleCount, SetAbstractionConfig,
};
pub use model::{argmax_rows, Model, ModelOutput, Target};
