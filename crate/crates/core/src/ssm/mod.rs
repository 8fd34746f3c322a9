//! State-space machinery: ZOH discretization, the recurrence and its
//! convolution kernel, the selective scan and the Mamba mixer built on it.

pub mod lti;
pub mod mixer;
pub mod reference;
pub mod selective;

pub use lti::{
    discretize_zoh, scan_convolutional, scan_recurrent, ssm_kernel, zoh, LtiSsm, ScanStep,
    ZOH_TAYLOR_THRESHOLD,
};
pub use mixer::{mamba_mixer, MambaMixer};
pub use selective::{
    bidirectional_scan, selective_scan, ScanDirection, ScanOptions, SelectiveSsmParams,
};
