pub mod activation;
pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod elementwise;
pub mod norm;
pub mod resample;
pub mod shuffle;
pub mod spectral;
