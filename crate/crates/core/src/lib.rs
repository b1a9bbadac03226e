//! Training-free few-shot object detection.
//!
//! Class prototypes are built offline from a handful of support embeddings.
//! Online, class-agnostic mask proposals are filtered, matched against the
//! prototypes by cosine similarity, gated on a combined similarity/softmax
//! score, re-scored with a mean-corrected similarity and suppressed per class.
//! A local COCO-style AP evaluator closes the loop.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod prototype;
pub mod synthetic;

pub use error::{Error, Result};
