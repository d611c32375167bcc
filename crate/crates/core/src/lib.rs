//! Sparse recovery on coherent dictionaries.

pub mod aiht;
pub mod datagen;
pub mod dictgen;
pub mod error;
pub mod harness;
pub mod matio;
pub mod model;
pub mod netlab;
pub mod rip;
pub mod seeding;
pub mod solvers;
pub mod stereo;

pub use error::{Error, Result};
