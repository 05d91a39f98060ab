//! The gated convolutional-recurrent feature extractor.
//!
//! Per frame, the color frame and its optical flow each pass through a
//! first convolutional layer (`conv1`, `conv1_of`). A gate is generated per
//! stream from those maps and the previous recurrent state, the gates are
//! fused, and the fused single-channel gate filters both maps before they
//! are concatenated and passed through `conv2`, `conv3` and a recurrent
//! layer. The video feature is the mean of the per-frame recurrent outputs.

mod config;
mod forward;
mod params;

pub use config::{FeatureOutput, FusionMode, GateMode, NetworkConfig};
pub use forward::{
    compute_gate, frame_forward, frame_forward_with_gate, fuse_gates, sequence_forward, shared_conv, ClipInput,
    FrameGateValues, FrameGates, FrameOutput, GateKind, GateMap, Inference, Network, SequenceOutput, Stream,
};
pub use params::{gate_streams, glorot_uniform, param_shapes, BoundParams, GateStream, NetworkParams};

pub(crate) use config::parse_bool;
