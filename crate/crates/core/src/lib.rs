//! Unsupervised domain adaptation for semantic segmentation, desk scale.
//!
//! A segmentation network `G` is trained on labelled source scenes while two
//! fully-convolutional discriminators pull its target-domain output toward
//! the source statistics: `D1` separates ground-truth maps from generated
//! ones, `D2` separates source-generated from target-generated maps. `D1`'s
//! per-pixel output is reused as a confidence score to select target pixels
//! for self-training, thresholded per class at a percentile recomputed on
//! every batch.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation;
//! file formats, the CLI and timing live in the `udaseg` companion crate.
//! Enable the `std` feature to let the GEMM kernel detect SIMD extensions at
//! runtime.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod error;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod scenegen;
pub mod selftrain;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{LabelMap, Tensor, IGNORE_INDEX};
