//! Pretrained feature networks behind traits, each with a deterministic stub.

pub mod identity;
pub mod perceptual;
pub mod registry;

pub use identity::{ArcFace, IResNetConfig, IdentityNet, StubIdentity};
pub use perceptual::{mean_distance, PerceptualNet, StubPerceptual, VggLpips};
pub use registry::{
    cache_dir, resolve_checkpoint, BackboneConfig, IdentityConfig, PerceptualConfig, SemanticsConfig, CACHE_ENV,
};
