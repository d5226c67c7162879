//! Weakly-supervised single-shot object localization.
//!
//! A small all-convolutional network ends in a single-channel class
//! activation map (CAM). During training the CAM is reduced to one scalar by
//! a global pooling layer (max, average or spatial-pyramid averaged max) and
//! fed to a two-logit softmax head, so only image-level presence labels are
//! needed. At inference the pooling and head are dropped: CAM peaks above the
//! learned decision threshold are flood-filled and mapped back to input
//! pixels with receptive-field arithmetic, and the resulting regions become
//! bounding boxes.

pub mod backproject;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod net;
pub mod nn;
pub mod pnm;
pub mod pooling;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use backproject::{BackprojectConfig, BinaryMask, Detection, PixelBox};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use net::{ClassHead, Model, NetConfig, Params};
pub use pooling::{CamMap, PoolContext, PoolingKind, SpamConfig};
pub use tensor::{LayerGeometry, LayerKind, Real, Tensor};
