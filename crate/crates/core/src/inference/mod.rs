//! Two-sample tests for quotient-space data: horizontal tangent
//! coordinates, Hotelling's `T^2`, the four lifting strategies, and their
//! bootstrap calibration.

mod basis;
mod hotelling;
mod two_sample;

pub use basis::{horizontal_basis, lift_to_coords, HorizontalBasis, TangentCoordinates};
pub use hotelling::{covariance_about, hotelling_t2, mahalanobis, t2_cdf, t2_quantile, MAX_CONDITION};
pub use two_sample::{
    bootstrap_test, bootstrap_tests, quantile_test, test_individual_asymmetric,
    test_individual_lifting, test_pooled_intrinsic, test_pooled_lifting, BootstrapOptions,
    Calibration, TestOptions, TestOutcome, TestVariant, DEFAULT_RESAMPLE_TOL, MIN_RESAMPLES,
};
