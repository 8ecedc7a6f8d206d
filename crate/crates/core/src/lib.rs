#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ansi;
pub mod cli;
pub mod consensus;
pub mod control;
pub mod error;
pub mod forward;
pub mod io;
pub mod mmi;
pub mod model;
pub mod netsim;
pub mod rng;
pub mod run;
pub mod scenario;
pub mod signal;
pub mod tomo;

pub use error::{Error, Result};
