//! Online learning control for obstacle avoidance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dac;
pub mod envsim;
pub mod error;
pub mod game;
pub mod lindyn;
pub mod olc;
pub mod trs;

pub use error::{Error, Result};
