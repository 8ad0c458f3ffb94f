//! Architecture configs, the three network families, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod zoo;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ArchitectureConfig, DatasetKind, Family, FcSpec, LayerSpec, Topology, TrainingConfig, WeightInit};
pub use network::{Gradients, Model, StackLayer, Tape};
