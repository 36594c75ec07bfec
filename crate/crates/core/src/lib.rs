//! Differentiable semantic Gaussian splatting on the CPU.
//!
//! A point cloud of anisotropic 3D Gaussians carries color (spherical
//! harmonics) and a 16-channel semantic feature per point. The rasterizer
//! projects the Gaussians into a view and alpha-blends color and features
//! per pixel; a small MLP decodes the blended features into class logits.
//! All of it is differentiable by hand-written backward passes, so the whole
//! pipeline can be optimized against a few labeled views plus pseudo-labels.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`): training
//! runs in `f32`, while gradient tests run the exact same code in `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub mod camera;
pub mod checkpoint;
pub mod cloud;
pub mod decoder;
pub mod eval;
pub mod image;
pub mod losses;
pub mod math;
pub mod pseudolabel;
pub mod rasterizer;
pub mod spatial;
pub mod trainer;

/// Floating-point scalar the whole crate is generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

pub use camera::{Intrinsics, Pose, SparsePoint, View};
pub use cloud::GaussianCloud;
pub use decoder::SemanticDecoder;
pub use image::{Image, LabelMap};
pub use rasterizer::{GradientBundle, RenderOptions, RenderOutput};
pub use spatial::SpatialIndex;
pub use trainer::{Scene, TrainConfig};

/// Concrete aliases for the training precision used by the CLI.
pub type GaussianCloud32 = cloud::GaussianCloud<f32>;
pub type SemanticDecoder32 = decoder::SemanticDecoder<f32>;
pub type RenderOutput32 = rasterizer::RenderOutput<f32>;
pub type Scene32 = trainer::Scene<f32>;

/// Aliases for the double-precision path used by gradient oracles.
pub type GaussianCloud64 = cloud::GaussianCloud<f64>;
pub type SemanticDecoder64 = decoder::SemanticDecoder<f64>;
pub type RenderOutput64 = rasterizer::RenderOutput<f64>;
