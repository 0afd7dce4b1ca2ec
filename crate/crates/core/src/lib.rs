//! Carbide segmentation for two-channel SEM micrographs.
//!
//! The guide in `book/` walks through each module; its code blocks are
//! compiled as doctests of this crate.

pub mod calibration;
pub mod classical;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod imagecore;
pub mod rng;
pub mod synthdata;
pub mod tensornet;
pub mod training;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/baseline.md")]
    struct Baseline;
    #[doc = include_str!("../../../book/src/network.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/calibration.md")]
    struct Calibration;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
