//! File formats, run management and the command-line front end for the
//! `udaseg-core` domain-adaptation stack.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod images;
pub mod report;
pub mod run;

pub use error::{Result, UdasError};
