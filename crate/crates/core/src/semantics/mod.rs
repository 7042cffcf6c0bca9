//! Self-supervised ViT tokens and the structure descriptors built on them.

pub mod backbone;
pub mod descriptors;
pub mod encoder;
pub mod pca;

pub use backbone::{patchify, StubBackbone, TokenBackbone, VitBackbone, VitConfig};
pub use descriptors::{
    deformation_direction, direction_from_tokens, self_similarity, self_similarity_batch, DirectionalVector,
    StructureDescriptor, DIRECTION_LEVELS, MIN_TOKEN_NORM,
};
pub use encoder::{Encoder, ImageNorm, Level, TokenMatrix};
pub use pca::{pca_visualize, tensor_to_matrix, Pca, PcaVisualization};
