//! Few-shot adaptation of the source generator to a single reference pair.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod references;
pub mod train;

pub use checkpoint::{checkpoint_name, latest, CheckpointMeta, CheckpointState};
pub use config::TrainConfig;
pub use discriminator::{receptive_fields, select_readoff, Discriminator, DiscriminatorConfig, TARGET_PATCH};
pub use references::{color_align, prepare_references, PreparedReferences, ReferenceFeatures};
pub use train::{param_group, run_adaptation, GeneratorObjective, ParamGroup, Trainer};
