//! # deepccg
//!
//! Online continual learning with an empirical-Bayes class-conditional
//! Gaussian classifier on top of a learned embedding.
//!
//! The crate is organised by subsystem:
//!
//! - [`stream`]: synthetic and CSV datasets, disjoint-task and shifting-window
//!   task sequences, and the batch cursor that serves them.
//! - [`embedding`]: a ReLU multilayer perceptron with exact backpropagation,
//!   SGD and a finite-difference gradient oracle.
//! - [`ccg_head`]: per-class posteriors over Gaussian means, the closed-form
//!   posterior predictive, the conditional marginal likelihood loss with its
//!   analytic gradient, and a Monte Carlo oracle for the predictive.
//! - [`memory`]: class-balanced memory, lasso-relaxed subset selection,
//!   reservoir sampling, replay sampling and the i.i.d. shift check.
//! - [`trainer`]: the update steps for every method, evaluation and the
//!   representation-shift probe.
//! - [`experiment`], [`config`], [`selftest`]: the runner behind the
//!   `deepccg` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`:
//!
//! ```bash
//! cargo run -p deepccg --example synthetic_stream
//! cargo run -p deepccg --example posterior_predictive
//! cargo run -p deepccg --example gradient_check
//! cargo run -p deepccg --example memory_selection
//! cargo run -p deepccg --example shift_robustness
//! cargo run -p deepccg --example train_deepccg
//! cargo run -p deepccg --example compare_methods
//! cargo run -p deepccg --example representation_shift
//! cargo run -p deepccg --example run_from_config
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccg_head;
pub mod config;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod memory;
pub mod selftest;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
