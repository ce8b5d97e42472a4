//! Measuring how much a latent-diffusion autoencoder disturbs the control
//! signals (edges, depth, segmentation, identity, global embeddings) that a
//! conditional generator is asked to honour.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] – canonical image tensors, dataset ingestion and pairing.
//! * [`autoencoder`] – the encode/decode adapter contract and dataset round-trips.
//! * [`projectors`] – condition projectors: native Canny, block-average,
//!   gradient-magnitude and intensity-level maps, plus subprocess extractors.
//! * [`metrics`] – PSNR, SSIM, perceptual distance, Fréchet distance,
//!   condition drift, identity similarity and the spatial aggregate.
//! * [`analysis`] – Spearman rank correlation, metric matrices and reports.
//! * [`probe`] – latent condition-recoverability decoder and its trainer.
//! * [`synthetic`] – synthetic autoencoders, image generators and the exact
//!   discrete-world simulator.
//! * [`cache`] – content-addressed feature store.

pub mod analysis;
pub mod autoencoder;
pub mod cache;
pub mod data;
pub mod error;
pub mod imgproc;
pub mod metrics;
pub mod probe;
pub mod projectors;
pub mod synthetic;

pub use autoencoder::{roundtrip_dataset, Autoencoder, LatentCode, RoundtripOutcome};
pub use data::{load_dataset, make_pairs, ImagePair, ImageTensor, Preprocessing};
pub use error::{Error, Result};
pub use metrics::{FeatureStats, MetricValue, MetricVector, ModelRecord};
pub use projectors::{Comparison, ConditionMap, Projector, ProjectorKind};

/// Tool version stamped into reports and manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
