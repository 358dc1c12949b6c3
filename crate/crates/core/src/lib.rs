//! SANet: a selective-attention encoder/decoder network for infrared
//! small-target detection, built on a self-contained reverse-mode tensor
//! engine. Includes the training loop, the IRSTD metric suite, a synthetic
//! scene generator, and checkpoint I/O.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, SanetError};
pub use scalar::{DType, Scalar};
pub use tape::{Pad, Reduce, Tape};
pub use tensor::Tensor;

pub mod attention;
pub mod dsm;
pub mod init;
pub mod layers;
pub mod pinwheel;
pub mod safm;
pub mod checkpoint;
pub mod network;
pub mod loss;
pub mod metrics;
pub mod data;
pub mod trainer;
pub mod ablation;
pub mod checks;
