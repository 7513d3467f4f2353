//! Single-view background-oriented schlieren tomography.
//!
//! Forward model: gradient-index ray tracing through a refractive-index field and Monte
//! Carlo rendering of a textured or projector-lit back wall. Inverse model: a neural
//! temperature/pressure/velocity field trained against a camera image, boundary data and
//! Boussinesq residuals.
//!
//! Numeric code is generic over [`Real`] (`f32`, `f64` and the tape scalar
//! [`diffengine::Var`]); training runs in `f64`.

pub mod diffengine;
pub mod error;
pub mod fields;
pub mod io;
pub mod math;
pub mod optim;
pub mod oracle;
pub mod pinn;
pub mod real;
pub mod renderer;
pub mod scene;
pub mod tracer;

pub use error::{Error, Result};
pub use real::Real;

pub type Vec3f = math::Vec3<f32>;
pub type Vec3d = math::Vec3<f64>;
pub type Aabbd = math::Aabb<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type Scene64 = scene::Scene<f64>;
pub type VoxelGrid32 = fields::VoxelGrid<f32>;
pub type VoxelGrid64 = fields::VoxelGrid<f64>;
pub type Image32 = renderer::Image<f32>;
pub type Image64 = renderer::Image<f64>;
pub type NeuralField64 = pinn::NeuralField<f64>;
