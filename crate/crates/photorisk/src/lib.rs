//! File formats and the `photorisk` command line on top of `photorisk-core`.
//!
//! Datasets are directories of PGM images with a CSV manifest, weights are a
//! JSON header plus raw little-endian `f64` tensors, and explanations are
//! written as PPM overlays and CSV tables.

pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod explain_io;
pub mod netpbm;
pub mod weights_io;

pub use dataset_io::{load_dataset, save_dataset};
pub use error::{Error, Result};
pub use weights_io::{load_weights, save_weights};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
