//! Zonotope-based social navigation for a walking robot: learned
//! reachable sets, footstep MPC through the network, and a crowd benchmark.

pub mod data;
pub mod error;
pub mod lip;
pub mod nn;
pub mod planner;
pub mod refine;
pub mod selftest;
pub mod sim;
pub mod stl;
pub mod zono;

pub use error::{Error, Result};
