//! Pure-compute core for hierarchical multi-resolution vision-language alignment.
//!
//! Everything in this crate is `no_std` + `alloc`: a small reverse-mode
//! autodiff engine, synthetic slide pyramids with a parent-child patch
//! quadtree, keyword bags, toy encoders with a fusion stack, the alignment
//! and pre-training losses, a deterministic trainer and the zero-shot
//! evaluation pipeline. File formats and the command line live in the
//! `hieralign` crate.

#![no_std]
#![deny(unused_must_use, rust_2018_idioms)]
// `!(x > 0.0)` style checks reject NaN on purpose
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

extern crate alloc;

pub mod ablation;
pub mod autodiff;
pub mod bags;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod model;
pub mod optim;
pub mod pyramid;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
