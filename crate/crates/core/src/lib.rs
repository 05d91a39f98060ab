//! Gated convolutional-recurrent video features for person re-identification.
//!
//! Frames and optical flow pass through shared convolutions, a learned
//! spatial gate filters the feature maps, and a recurrent layer aggregates
//! the frames of a clip into one descriptor. Everything is differentiated by
//! a small tape-based reverse-mode engine ([`Tape`]) that runs in `f32` for
//! training and `f64` for verification.
//!
//! ```
//! use gated_reid::{Network, NetworkConfig, NetworkParams, ClipInput, Tensor};
//!
//! let cfg = NetworkConfig::tiny();
//! let params = NetworkParams::<f64>::zeros(&cfg).unwrap();
//! let net = Network::new(cfg.clone(), params).unwrap();
//! let clip = ClipInput {
//!     frames: vec![Tensor::zeros(vec![cfg.height, cfg.width, 3])],
//!     flows: vec![Tensor::zeros(vec![cfg.height, cfg.width, 2])],
//! };
//! let out = net.infer(&clip).unwrap();
//! assert_eq!(out.feature.shape(), &[cfg.feature_dim]);
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod kernels;
pub mod losses;
pub mod network;
pub mod tape;
pub mod tensor;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use data::{Dataset, GeneratorConfig, VideoClip};
pub use error::{Error, Result};
pub use evaluation::{compute_cmc, CMCCurve, DistanceMatrix};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use losses::{ClassifierParams, LossBreakdown};
pub use network::{ClipInput, FusionMode, GateMode, Network, NetworkConfig, NetworkParams};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Precision, Real, Tensor};
pub use training::{train, TrainConfig, TrainState, TrainingLog};
