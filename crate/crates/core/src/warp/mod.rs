//! Differentiable TPS and affine warping of feature maps.

pub mod affine;
pub mod field;
pub mod predictor;
pub mod sample;
pub mod smoothness;
pub mod tps;

pub use affine::{affine_warp, affine_warp_theta, theta_from_raw, AffineParams};
pub use field::{
    interpolate_field, make_identity_field, make_identity_field_like, tps_warp, WarpField,
    DEFAULT_GRID_SIZE,
};
pub use predictor::{
    predict_field, predictor_specs, PredictorKind, PredictorShape, StnOutput, StnPredictor,
    DEFAULT_CONV_CHANNELS, DEFAULT_HIDDEN,
};
pub use sample::{apply_affine, canonical_grid, grid_sample};
pub use smoothness::{smoothness_per_sample, smoothness_regularizer, smoothness_value};
pub use tps::{TpsSolver, KERNEL_REGULARIZER};
