//! Persistence and user-facing operations: bundles, stylization, α sweeps,
//! evaluation reports and feature visualization.

pub mod bundle;
pub mod evaluate;
pub mod stylize;
pub mod visualize;

pub use bundle::{Bundle, Manifest, BUNDLE_VERSION};
pub use evaluate::{direction_cosine, evaluate, pair_metrics, parse_seeds, EvalReport, EvalRow};
pub use stylize::{alpha_grid, alpha_sweep, resolve_latent, stylize, ImageEncoder, InversionEncoder, StylizeInput, SweepFrame};
pub use visualize::{pca_file_name, visualize_features, PCA_COMPONENTS};
