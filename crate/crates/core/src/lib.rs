//! Model predictive contouring control for obstacle avoidance near the
//! handling limits of a passenger car.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod mpcc;
pub mod nlp_solver;
pub mod path_geometry;
pub mod scalar;
pub mod scenarios;
pub mod sim;
pub mod tyre;
pub mod vehicle_model;

pub use error::{Error, Result};
