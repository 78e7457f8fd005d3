//! Muon scattering tomography: simulation, PoCA reconstruction, stamping
//! augmentation and image-quality metrics.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod iqa;
pub mod par;
pub mod physics;
pub mod poca;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use image::ScatterImage;
pub use par::Exec;
