//! Weight-decay trained stacked ReLU networks and their function-space
//! representation cost.
//!
//! - [`net`]: network data model, forward pass, rescaling and balancing
//! - [`pfunc`]: closed-form representation cost of finite networks
//! - [`train`]: squared loss, exact gradients, full-batch training
//! - [`oracle`]: convex group-lasso solver over a grid of kink atoms (1-D input)
//! - [`baselines`]: random-feature ridge regression
//! - [`tasks`]: dataset generators and CSV I/O
//! - [`svg`]: dependency-free line/scatter plots
//! - [`experiments`]: the reproducible experiments behind the CLI

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod net;
pub mod oracle;
pub mod pfunc;
pub mod svg;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
pub use net::{Architecture, InnerActivation, NetworkParams, Skip, SkipKind, StackParams};
pub use tasks::Dataset;
