//! Training objectives.

pub mod adversarial;
pub mod consistency;
pub mod directional;
pub mod log;
pub mod total;

pub use adversarial::{adversarial_losses, discriminator_loss, generator_loss};
pub use consistency::{
    build_similarity_distribution, consistency_loss, mse, pair_count, pair_slots, similarity_distribution, Domain,
    SimilarityDistribution,
};
pub use directional::{directional_loss, directional_loss_vectors, MIN_DIRECTION_NORM};
pub use log::{read_loss_csv, write_loss_csv, LossRecord, LOSS_COLUMNS};
pub use total::{total_loss, LossParts, LossWeights};
pub use crate::warp::smoothness_regularizer;
