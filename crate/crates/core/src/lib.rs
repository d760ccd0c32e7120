//! Grid-world simulation and learning core for self-supervised visual
//! traversability estimation.
//!
//! The robot drives a synthetic terrain, scores its own footprints from the
//! gap between commanded and achieved velocity, projects those scores onto
//! camera segments it saw earlier, and trains a small network online. The
//! navigation stack turns the network's predictions into a costmap and a
//! velocity command.

pub mod error;
pub mod geometry;
pub mod graphs;
pub mod learner;
pub mod navstack;
pub mod robot;
pub mod supervision;
pub mod world;

pub use error::{Error, Result};
