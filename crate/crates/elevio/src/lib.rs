//! LiDAR-inertial odometry that stays consistent through elevator rides.
//!
//! The estimator decouples the robot state relative to the elevator cabin
//! from the elevator's own vertical transport motion and fuses both in a
//! mode-dependent iterated error-state Kalman filter. Outside elevators it
//! behaves as a conventional LIO pipeline; inside, the transport states
//! (vertical displacement, velocity, acceleration) are propagated and
//! constrained by a zero-state update at the end of each ride.
//!
//! The crate also ships a deterministic multi-floor elevator simulator and
//! the evaluation tooling used by the `elevio` command-line interface.

pub mod error;
pub mod eval;
pub mod exit;
pub mod frontend;
pub mod io;
pub mod manifold;
pub mod mapping;
pub mod mode;
pub mod pipeline;
pub mod propagation;
pub mod scan_update;
pub mod sim;
pub mod state;

pub use error::Error;
pub use manifold::{Mat3, Rotation, Vec3};
pub use state::{Covariance, ErrorState, FilterState, Mode};
