//! Synthetic autoencoders, image generators and exact discrete worlds.

mod ae;
mod experiments;
mod images;
mod world;

pub use ae::{make_blur_family, make_permutation_ae, SyntheticAE, SyntheticKind};
pub use experiments::{blur_sweep, prop1_case, theorem1_trials, BlurSweep, Prop1Case, TheoremReport};
pub use images::{blob_image, shapes_dataset, step_edge_image};
pub use world::{random_world, DiscreteWorld, Scalar};
