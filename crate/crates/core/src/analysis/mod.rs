//! Flatness and generalization diagnostics.

mod bound;
mod landscape;
mod smoothness;
mod stats;

pub use bound::{
    bound_terms, generalization_gap, sampled_sharpness, BoundConfig, BoundReport, BoundTerms, GapReport,
    SharpnessConfig, SharpnessRadius,
};
pub use landscape::{landscape_slice, landscape_slice_with, random_direction, LandscapeProbe, LandscapeResult};
pub use smoothness::{input_gradient_smoothness, smoothness_csv, SmoothnessConfig, SmoothnessResult, SmoothnessRow, SmoothnessTarget};
pub use stats::{mean, mean_std, welch_t_test, WelchResult};
