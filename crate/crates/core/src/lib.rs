pub mod augment;
pub mod container;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod run;
pub mod sample;
pub mod scalar;
pub mod scoring;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision image, the default for verification and reproducible runs.
pub type Image = image::ImageTensor<f64>;
pub type ImageF32 = image::ImageTensor<f32>;
pub type Params = vit::ModelParams<f64>;
pub type ParamsF32 = vit::ModelParams<f32>;
pub type Bank = scoring::ReferenceBank<f64>;
pub type BankF32 = scoring::ReferenceBank<f32>;
