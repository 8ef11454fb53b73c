//! Planar snake-robot simulation with time-stepping Coulomb contact and
//! minimum-effort torque allocation.

pub mod config;
pub mod contact;
pub mod error;
pub mod gait;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod stepper;
pub mod trajectory;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{RobotModel, State};
