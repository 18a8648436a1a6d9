//! Hyper-local deformable-transformer text spotting, from scratch.
//!
//! Everything a desk-scale spotter needs lives here: an f64 reverse-mode
//! autodiff tape ([`tensor`]), polygon geometry ([`geometry`]), a synthetic
//! map generator ([`synthmap`]), the detector/recognizer itself ([`model`]),
//! Hungarian matching and the training losses ([`matching`]), the training
//! loops ([`training`]), the evaluation protocol ([`eval`]), and runtime
//! self-verification suites ([`verify`]). No ML framework underneath — the
//! whole gradient path is auditable and finite-difference checked.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod matching;
pub mod model;
pub mod parallel;
pub mod synthmap;
pub mod tensor;
pub mod training;
pub mod verify;
pub mod vocab;

pub use error::{Error, Result};
