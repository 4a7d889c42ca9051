//! Binary morphological neural networks.
//!
//! A BiSE neuron is a thresholded correlation whose weights and bias can be
//! read back, after training, as an exact dilation or erosion. LUI units
//! aggregate channels as unions or intersections, BiSEL layers combine both,
//! and a [`net::Bimonn`] stacks layers and trains them with Adam on binary
//! image tasks.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the experiments use.

pub mod bise;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod loss;
pub mod lui;
pub mod morpho;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use grid::BinaryImage;
pub use morpho::{MorphOp, SeKind, SeShape, StructuringElement};
pub use scalar::Scalar;

pub type RealImage = grid::Grid<f64>;
pub type Kernel = grid::KernelWindow<f64>;
pub type Bounds = bise::AlmostBinaryBounds<f64>;
pub type BiseParams = bise::BiseParams<f64>;
pub type BiseNeuron = bise::Bise<f64>;
pub type ActivationStatus = bise::ActivationStatus<f64>;
pub type LuiParams = lui::LuiParams<f64>;
pub type BiselLayer = lui::Bisel<f64>;
pub type Network = net::Bimonn<f64>;
