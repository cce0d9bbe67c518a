//! Sarcasm-aware text-to-speech toolkit.

pub mod audio;
pub mod cli;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod nn;
pub mod phoneme;
pub mod synthesis;
pub mod text;
pub mod toy;
pub mod training;
pub mod tts;

pub use error::{Error, Result};
