//! Geometric unified force-impedance control (GUFIC) on SE(3), with a
//! 6-DOF serial-arm simulator, penalty contact, energy-tank passivity
//! machinery, and a numerical passivity audit.
//!
//! The crate is organized around the closed control loop:
//!
//! - [`geometry`]: SE(3)/SO(3) types, adjoints, the error function and its
//!   gradient (GCEV), and the elastic wrench.
//! - [`robot`]: product-of-exponentials kinematics, Jacobians, joint-space
//!   and operational-space dynamics, forward dynamics, and damped
//!   least-squares inverse kinematics.
//! - [`environment`]: plane/sphere penalty contact and the filtered
//!   force/torque sensor.
//! - [`fields`]: reference trajectories, the time-varying velocity field
//!   with its analytic total time derivative, and the force field.
//! - [`control`]: the GIC baseline, the naive force+impedance law, and the
//!   tank-guarded GUFIC with its modified setpoint integration.
//! - [`audit`]: storage functions and the integrated passivity inequality.
//! - [`sim`]: the 1 kHz closed loop, scenario configuration, CSV logs.
//! - [`plot`]: self-contained SVG line plots of a finished log.
//!
//! Runnable demonstrations live in `examples/`; the `gufic` binary exposes
//! `run`, `compare`, `audit`, and `validate` subcommands over the same API.

pub mod audit;
pub mod config;
pub mod control;
pub mod environment;
pub mod fields;
pub mod geometry;
pub mod plot;
pub mod robot;
pub mod sim;
pub mod simlog;

pub use geometry::{Pose, Rotation, StiffnessGains, Twist, Wrench};
pub use robot::{JointState, RobotDescription};
