//! Topological decoding of orbital-angular-momentum (OAM) beams.
//!
//! The crate is organised along the signal path:
//!
//! * [`optics`] synthesises Laguerre-Gaussian modes and encodes messages as
//!   mode superpositions.
//! * [`turbulence`] draws Kolmogorov phase screens and applies the channel.
//! * [`homology`] turns received intensity images into persistence diagrams.
//! * [`vectorize`] projects diagrams onto a bank of learnable Gaussian kernels.
//! * [`autonet`] is a small differentiable network (conv / pool / fc) with an
//!   optimizer and a parameter/FLOP estimator.
//! * [`pipeline`] ties everything together: datasets, diagram caches,
//!   training, evaluation and the turbulence × message-length sweep.

pub mod autonet;
pub mod error;
pub mod homology;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod turbulence;
pub mod vectorize;

pub use error::{Error, Result};

pub use autonet::{Layer, Model, ModelInput, ModelParams, NetworkSpec, Tensor, TrainConfig};
pub use homology::{
    FiltrationMode, FiltrationParams, PersistenceDiagram, PersistencePoint, PointCloud3,
};
pub use optics::{ComplexField, GridSpec, Image, Message, ModeSet};
pub use turbulence::TurbulenceSpec;
pub use vectorize::{FeatureVector, Kernel, KernelBank, NormMode};
