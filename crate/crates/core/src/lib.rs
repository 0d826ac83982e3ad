//! Microscopic traffic simulation with fuel-optimal speed advisories for
//! connected vehicles approaching signalized intersections.
//!
//! The library has three layers:
//!
//! * physics and infrastructure: [`fuel`] (power-based fuel-rate model),
//!   [`signal`] (fixed-time signal plans), [`network`] (corridor/grid
//!   geometry) and [`queue`] (kinematic-wave queue prediction);
//! * control: [`profile`] (piecewise constant-acceleration speed profiles
//!   solved from arrival constraints) and [`controller`] (per-vehicle
//!   advisory logic with one- and two-intersection lookahead);
//! * evaluation: [`sim`] (discrete-time car-following simulation) and
//!   [`experiment`] (scenario configs, paired baseline/treatment sweeps,
//!   plot-data emission).

pub mod controller;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod fuel;
pub mod network;
pub mod profile;
pub mod queue;
pub mod search;
pub mod signal;
pub mod sim;
pub mod units;

pub use controller::{AlgorithmVariant, ControllerMode, Lookahead};
pub use error::Error;
pub use fuel::{FuelParams, KinematicSample, SampledTrajectory};
pub use network::{ControlSegment, Link, Network, Route};
pub use profile::{ControlContext, SpeedProfile, Trajectory};
pub use queue::QueueEstimate;
pub use signal::{Indication, SignalColor, SpatPlan};
