//! Distributed state estimation for neutrally stable LTI plants observed by a
//! network of agents whose communication graph switches over time and is only
//! jointly connected.
//!
//! The pipeline mirrors the design flow:
//!
//! 1. [`plant`] validates the plant (neutral stability, joint observability)
//!    and finds a similarity transform that makes the system matrix skew-symmetric.
//! 2. [`decomposition`] splits each agent's state space into its observable and
//!    unobservable parts with an orthogonal change of basis.
//! 3. [`graph`] models the switching topologies and certifies joint connectivity.
//! 4. [`design`] places the observable-block poles and assembles the injection
//!    and weighting matrices of every local observer.
//! 5. [`simulation`] integrates the coupled plant/observer network with RK4.
//! 6. [`analysis`] certifies Gramian bounds, window contraction and decay rates.
//!
//! [`scenario`] ties everything to the JSON scenario files consumed by the CLI.

pub mod analysis;
pub mod decomposition;
pub mod design;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod plant;
pub mod report;
pub mod scenario;
pub mod simulation;

pub use error::{Error, Result};
