// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod detector;
pub mod error;
pub mod kernel;
pub mod markov;
pub mod mmd;
pub mod theory;

pub use bench::{ExperimentConfig, RunResult};
pub use detector::{Algorithm, DetectorConfig, DetectorState, Event, Oral, Ral, RunOutcome, SequentialDetector};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec, StatePair};
pub use markov::{ChangePoint, ErgodicityParams, PairMeasure, TransitionKernel};
pub use mmd::BlockPair;
pub use theory::BoundsReport;
