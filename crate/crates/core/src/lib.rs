pub mod error;
pub mod fusion;
pub mod graph;
pub mod init;
pub mod metrics;
pub mod model;
pub mod mrffi;
pub mod ops;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod verify;
pub mod wavelet;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor};
