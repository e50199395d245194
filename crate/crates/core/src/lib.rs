//! Discretised incidence geometry at dyadic scales.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] exact dyadic-grid arithmetic, covering numbers and dyadic
//!   Hausdorff content;
//! * [`frostman`] generators and exact validators for Frostman and Katz-Tao
//!   sets, uniform-subset extraction and dyadic pigeonholing;
//! * [`incidence`] tube/square incidences, shadings and the two-ends test;
//! * [`refine`] the two-ends reduction and bipartite min-degree refinement;
//! * [`expander`] the `f(x, y) = x(x + y)` expander experiments and the dual
//!   tube instance behind them;
//! * [`harness`] the instrumented incidence-theorem pipeline.
//!
//! Data-parallel loops go through [`par::Exec`]; with the `parallel` feature
//! disabled every call runs sequentially.

pub mod error;
pub mod expander;
pub mod frostman;
pub mod grid;
pub mod harness;
pub mod incidence;
pub mod par;
pub mod refine;

pub use error::{Error, Result};
pub use grid::{GridSet1D, GridSet2D, Scale, Q};
pub use par::Exec;
