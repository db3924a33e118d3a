//! Draping-plan refinement for robotic composite sheet layup.
//!
//! The pipeline has four stages, each in its own module:
//!
//! - [`sheet_state`] turns height-field captures into a per-sector pair of
//!   Gaussians describing the uncompacted regions still on the sheet.
//! - [`effectiveness`] learns, from before/after state pairs recorded in
//!   experiment logs, how each action moves those Gaussians.
//! - [`search`] builds a refined plan by a bounded tree search over the
//!   action space, honoring the ordering and count constraints of [`plan`].
//! - [`simulator`] is a seeded stand-in for the robot cell: it executes
//!   plans, renders captures and runs the correction controller whose path
//!   count is the efficiency metric summarized by [`report`].

pub mod cli;
pub mod effectiveness;
pub mod error;
pub mod geometry;
pub mod io;
pub mod plan;
pub mod report;
pub mod search;
pub mod sheet_state;
pub mod simulator;

pub use error::{Error, Result};
