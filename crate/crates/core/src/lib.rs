//! Class-incremental learning with compressed exemplars.
//!
//! Old-class exemplars are stored with only their discriminative region at
//! full resolution; the rest of the image is kept downsampled. The region
//! comes from a class activation map of a second network branch whose
//! activation functions are learnable Padé units, trained by a one-step
//! bilevel update so that models trained on compressed data still do well on
//! the originals.

pub mod archive;
pub mod cam;
pub mod compression;
pub mod error;
pub mod harness;
pub mod image;
pub mod memory;
pub mod io;
pub mod model;
pub mod pau;
pub mod scalar;
pub mod train;

pub use cam::{BBox, Branch, BinaryMask, ActivationMap};
pub use compression::CompressedExemplar;
pub use error::{Error, Result};
pub use image::Image;
pub use model::{Architecture, ModelState};
pub use pau::{CimParams, PauParams};
