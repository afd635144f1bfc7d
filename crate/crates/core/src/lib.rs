//! Desk-scale pipeline coupling a differentiable point-splat renderer and
//! mass-spring/rigid dynamics into a single updatable model, with
//! sensing-aware view selection driven by the camera-pose gradient of a
//! learned Q function, imitation-trained actors, and a residual policy that
//! closes the gap to a black-box target environment.
//!
//! The math core ([`autodiff`]) is generic over the scalar type; the
//! pipeline uses the `f64` aliases below.

pub mod autodiff;
pub mod geom;
pub mod physics;
pub mod neural;
pub mod proxy;
pub mod real2sim;
pub mod render;
pub mod error;
pub mod scalar;
pub mod scene;

pub use error::{Error, Result};

/// Pipeline-wide tensor (64-bit).
pub type Tensor = autodiff::Tensor<f64>;
/// Pipeline-wide tape (64-bit).
pub type Tape = autodiff::Tape<f64>;
/// Pipeline-wide op kind (64-bit).
pub type OpKind = autodiff::OpKind<f64>;
/// Pipeline-wide gradient map (64-bit).
pub type GradientMap = autodiff::GradientMap<f64>;
