//! Crowd-powered local photo enhancement.
//!
//! A photo is edited by a per-pixel parameter map `P = W Q`: `Q` holds one
//! brightness / saturation / contrast vector per key pixel and `W` holds
//! Gaussian-process interpolation weights over position and illumination.
//! Key pixels are chosen by active learning, and each key pixel's vector is
//! found by a sequence of one-dimensional slider adjustments.

pub mod active;
pub mod error;
pub mod gpr;
pub mod illumination;
pub mod imaging;
pub mod linesearch;
pub mod orchestrator;
pub mod quality;
pub mod scenes;

pub use error::{Error, Result};
pub use imaging::{Image, ParamMap, ParamVector};
