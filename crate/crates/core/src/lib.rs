//! Wavelet-subband convolutional networks: a packet wavelet front end, the
//! BCNN / TCNN / SRCNN model families, SGD training, cost counting,
//! quantization and dataset loaders.

pub mod cost;
pub mod data;
pub mod error;
pub mod layers;
mod linalg;
pub mod model;
pub mod optim;
pub mod quant;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use model::{ArchitectureConfig, Checkpoint, Family, Model};
pub use tensor::{Element, Precision, Shape4, Tensor4};
pub use wavelet::{packet_decompose, packet_reconstruct, FilterPair, SubbandSet};
