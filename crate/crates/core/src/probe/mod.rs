//! Latent condition-recoverability probe: a small decoder trained to
//! predict condition maps from latent codes.

mod decoder;
mod gradcheck;
mod loss;
pub mod nn;
mod toy;
mod train;

pub use decoder::{Checkpoint, OutputActivation, ProbeDecoder, DEFAULT_WIDTHS};
pub use gradcheck::{gradient_check, GradCheck};
pub use loss::{
    depth_loss_and_grad, edge_loss_and_grad, probe_loss_depth, probe_loss_edges, DEPTH_GRAD_WEIGHT, DICE_EPS,
};
pub use toy::{probe_samples, space_to_depth, toy_edge_samples, toy_latent};
pub use train::{
    best_constant_dice, pooled_dice, split_by_hash, train_probe, write_training_log, EarlyStopper, EpochLog,
    ProbeOutcome, ProbeSample, ProbeTask, ProbeTrainConfig,
};
