//! Model-parallel, partially asynchronous proximal gradient.
//!
//! Each of `p` workers owns one block of the model and updates it with a
//! proximal gradient step computed from a possibly stale view of the other
//! blocks. Staleness is bounded by `s` clocks and every worker updates at
//! least once in every `s + 1` clocks.
//!
//! * [`engine`] runs the recursion deterministically against a [`schedule`]
//! * [`runtime`] runs it on real threads and captures the realized schedule
//! * [`diagnostics`] checks the convergence inequalities on recorded traces

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod prox;
pub mod runtime;
pub mod schedule;

pub use error::{Error, Result};
