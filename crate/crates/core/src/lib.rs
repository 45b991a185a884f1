//! Vision transformer hashing for image retrieval.
//!
//! A ViT encoder feeds a hashing head whose real-valued outputs are trained
//! under one of six deep-hashing objectives, binarized into compact codes,
//! and ranked by Hamming distance for mAP and precision-recall evaluation.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod image;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod retrieval;
pub mod train;
pub mod tensor;
pub mod vit;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{no_grad, Real, Tensor};
