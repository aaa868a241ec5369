//! Learning about objects by interacting with a physics micro-world.
//!
//! An agent looks at a single RGB+D frame, predicts where pushing would move
//! something, how hard it must push, and which pixels belong together. It then
//! pushes, watches what changes, and turns those changes into its own training
//! targets. After training it proposes instance masks and relative masses from
//! one observation without touching the scene.

pub mod actsel;
pub mod error;
pub mod eval;
pub mod headgrads;
pub mod imaging;
pub mod membank;
pub mod microworld;
pub mod predictor;
pub mod selfsup;
pub mod trainer;

pub use error::{Error, Result};
