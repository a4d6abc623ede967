//! Interacting particle systems on random graphs and their mean-field limit.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the numerical pieces:
//!
//! * [`graph`]: interaction graphs (regular, Erdős–Rényi, community) and
//!   their degree statistics.
//! * [`models`]: drifts, interaction kernels and disorder laws together with
//!   their one-sided modulus `κ`.
//! * [`semimetric`]: the concave distance function `f` built from `κ` and `σ`.
//! * [`transport`]: exact L¹-Wasserstein distances between empirical measures.
//! * [`simulate`]: Euler–Maruyama stepping of the particle system, of its
//!   nonlinear limit and of the reflection/synchronous coupling of both.
//! * [`analysis`]: decay fits and log-log slopes used by experiment sweeps.
//!
//! Enable the `parallel` feature to step particles on the rayon pool. Results
//! are bit-identical for any thread count.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod graph;
pub mod models;
pub mod rng;
pub mod semimetric;
pub mod simulate;
pub mod transport;

pub use error::{Error, Result};
pub use graph::{FamilyTag, GraphStats, InteractionGraph};
pub use models::{BuiltinModel, ModelSpec};
pub use semimetric::SemimetricTable;
pub use simulate::{CoupledEnsemble, CouplingMode, EnsembleMode, StepPlan};
pub use transport::{CostMetric, EmpiricalMeasure};
