//! Fiber-optic channel simulation and learned channel surrogates.
//!
//! The crate covers the full chain used to build and judge a data-driven
//! replacement for a split-step Fourier fiber model:
//!
//! - [`sigproc`]: 16QAM mapping, RRC pulse shaping, resampling, launch power, BER counting.
//! - [`fiberchan`]: radix-2 FFT and the symmetric split-step NLSE solver with CD, SPM,
//!   attenuation and receiver AWGN.
//! - [`rxdsp`]: CD compensation, digital backpropagation and hard decisions.
//! - [`nncore`]: dense MLPs with manual backpropagation and Adam.
//! - [`surrogate`]: condition windows, scaling, CGAN and FCNN training, surrogate inference.
//! - [`harness`]: datasets, evaluation reports, runtime benchmarks, constellation export.
//! - [`cli`]: the `fibergan` command-line front end.

pub mod cli;
pub mod error;
pub mod fiberchan;
pub mod harness;
pub mod nncore;
pub mod rxdsp;
pub mod sigproc;
pub mod surrogate;

mod binio;
mod seeds;

pub use error::{Error, Result};
pub use num_complex::Complex64;
