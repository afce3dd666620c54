//! Numerical kernels shared by every sampler block.

pub mod mvn;
pub mod normal;
pub mod rng;
pub mod sample;
pub mod stick;
pub mod truncnorm;

pub use mvn::{GaussianKernel, MvnParams};
pub use rng::RngStream;
pub use stick::StickWeights;
pub use truncnorm::TruncNormal;
