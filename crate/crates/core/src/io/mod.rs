//! File formats: binary PGM images/masks and the flat FDM descriptor-map
//! container.

mod fdm;
mod pgm;

pub use fdm::{read_fdm, write_fdm};
pub use pgm::{read_gray_pgm, read_mask_pgm, write_gray_pgm, write_mask_pgm, GrayImage};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} data: {detail}")]
    Malformed { format: &'static str, detail: String },
}

impl FormatError {
    pub(crate) fn malformed(format: &'static str, detail: impl Into<String>) -> Self {
        FormatError::Malformed { format, detail: detail.into() }
    }
}
