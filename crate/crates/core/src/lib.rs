//! Statistics on Kendall shape spaces and their reflection and
//! reverse-labeling quotients, with two-sample tests built on optimal lifts
//! to the pre-shape sphere.

pub mod error;
pub mod filaments;
pub mod frechet;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod rng;
pub mod shape_spaces;
pub mod simulation;

pub use error::{Result, ShapeError};
pub use frechet::{frechet_function, frechet_mean, pooled_mean, MeanOptions, MeanResult};
pub use geometry::{Configuration, PreShape, TangentVector};
pub use shape_spaces::{
    optimal_align, optimal_lift, shape_distance, AlignmentResult, GroupElement, ShapeSpaceKind,
};
