//! Style-based generator with deformation plug-ins and latent utilities.

pub mod config;
pub mod invert;
pub mod latent;
pub mod layers;
pub mod model;
pub mod reference;
pub mod transform;

pub use config::{GeneratorConfig, LATENT_DIM, LATENT_ROWS};
pub use invert::{invert_reference, InversionConfig, InversionResult};
pub use latent::{style_mix, style_mix_batch, LatentCode};
pub use model::{load_checkpoint, Generator, SynthesisOutput};
pub use reference::ReferencePair;
pub use transform::{transform_prefix, transform_specs, Deform, Transform, TransformOutput};
