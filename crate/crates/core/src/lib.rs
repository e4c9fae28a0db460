//! Self-supervised data association for multi-object tracking.
//!
//! A pairwise scoring network is trained by maximizing the marginal
//! likelihood of detections under a Kalman smoother whose observation model
//! is permuted by Sinkhorn-normalized soft assignments. The trained scorer
//! then drives an online Kalman tracker with augmented Hungarian matching.

pub mod assoc_net;
pub mod error;
pub mod gaussian;
pub mod grad;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sinkhorn;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
