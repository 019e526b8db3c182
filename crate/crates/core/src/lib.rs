//! Large-deviations rate functions for the workload of a multi-queue,
//! single-server system under max-weight scheduling.
//!
//! The crate is organised bottom-up:
//!
//! * [`region`]: rate regions (simplex or vertex polytope), membership,
//!   Euclidean projection and max-weight maximiser enumeration.
//! * [`policy`]: deterministic scheduler selections (max-weight, its
//!   work-conserving variant, GPS and strict priority) and the set of
//!   branch selections a rate-function computation must explore.
//! * [`dynamics`]: the workload recursion and the finite-horizon maps.
//! * [`source`]: arrival models, their convex conjugates and samplers for
//!   the many-sources (L-averaged) process.
//! * [`ratefn`]: finite-horizon rate functions `I_t`, the infinite-horizon
//!   rate function `J`, the two-slot decomposition and the K = 2 bounds.
//! * [`oracle`]: brute-force ground truth on a discretised path space.
//! * [`mc`]: Monte Carlo overflow estimates under many-sources scaling.
//!
//! Rates, workloads and arrivals are in work units per slot; slot index
//! `s` of an [`ArrivalPath`] is physical time `-s`.

pub mod dynamics;
pub mod error;
pub mod mc;
pub mod oracle;
pub mod policy;
pub mod ratefn;
pub mod region;
pub mod solver;
pub mod source;

mod numeric;

pub use dynamics::{ArrivalPath, Workload};
pub use error::{Error, Result};
pub use mc::{OverflowEstimate, TrendTest};
pub use policy::{Policy, PolicyKind, TieBreak};
pub use ratefn::{BoundPair, Method, RateFnOutcome};
pub use region::{RateRegion, RegionKind};
pub use source::{QueueSource, SeedStream, SourceModel};

/// A vector of per-queue service rates.
pub type RateVector = Vec<f64>;

/// Absolute tolerance used for membership and tie detection in normalised
/// coordinates.
pub const TOL: f64 = 1e-9;
