use num_rational::BigRational;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ae::{make_blur_family, make_permutation_ae, SyntheticAE};
use super::images::shapes_dataset;
use super::world::{random_world, DiscreteWorld, Scalar};
use crate::autoencoder::roundtrip_dataset;
use crate::data::ImageTensor;
use crate::error::Result;
use crate::analysis::spearman_dense;
use crate::metrics::{feature_stats, frechet_distance, psnr, spatial_aggregate, DriftRecord, PooledPixels};
use crate::projectors::{CannyParams, CannyProjector, GradientMagnitude, IntensityLevels, Projector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub master_seed: u64,
    /// Largest `|alignment − drift|` in float arithmetic.
    pub max_abs_gap: f64,
    /// Worlds where the two sides differ in exact rational arithmetic.
    pub exact_mismatches: usize,
    /// Largest `|Σ_z p(c,z) − p(c)|` in float arithmetic.
    pub max_marginalization_gap: f64,
}

fn trial_rng(master_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws `trials` random worlds and compares both sides of the
/// alignment/drift identity, exactly and in floating point.
pub fn theorem1_trials(master_seed: u64, trials: usize) -> TheoremReport {
    let per_trial: Vec<(f64, bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let exact: DiscreteWorld<BigRational> = random_world(&mut trial_rng(master_seed, t));
            let mismatch = !(exact.alignment_error_exact() - exact.expected_drift_exact()).is_zero();
            let float = exact.convert(|p| p.to_f64());
            let gap = (float.alignment_error_exact() - float.expected_drift_exact()).abs();
            (gap, mismatch, float.marginalization_gap())
        })
        .collect();
    TheoremReport {
        trials,
        master_seed,
        max_abs_gap: per_trial.iter().map(|r| r.0).fold(0.0, f64::max),
        exact_mismatches: per_trial.iter().filter(|r| r.1).count(),
        max_marginalization_gap: per_trial.iter().map(|r| r.2).fold(0.0, f64::max),
    }
}

/// Marginal-preserving permutation AE on a shapes set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Case {
    pub n: usize,
    pub seed: u64,
    /// Fréchet distance between pooled-pixel statistics of references and
    /// reconstructions.
    pub frechet: f64,
    /// Spatial aggregate drift of the permutation AE.
    pub mean_drift: f64,
    /// Same aggregate for the identity AE.
    pub identity_drift: f64,
    /// Smallest spatial distance between two distinct images of the set.
    pub min_pairwise: f64,
}

fn spatial_projectors() -> Result<[Box<dyn Projector>; 3]> {
    Ok([
        Box::new(CannyProjector::new(CannyParams::default())?),
        Box::new(GradientMagnitude::default()),
        Box::new(IntensityLevels::default()),
    ])
}

fn spatial_drift(pairs: &[crate::data::ImagePair], projectors: &[Box<dyn Projector>; 3]) -> f64 {
    let recs: Vec<DriftRecord> = projectors.iter().map(|p| DriftRecord::compute(pairs, p.as_ref())).collect();
    spatial_aggregate(Some(&recs[0]), Some(&recs[1]), Some(&recs[2])).unwrap_or(f64::NAN)
}

fn min_pairwise_spatial(images: &[ImageTensor], projectors: &[Box<dyn Projector>; 3]) -> Result<f64> {
    let maps: Vec<Vec<_>> = projectors
        .iter()
        .map(|p| images.par_iter().map(|img| p.apply(img)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n = images.len();
    let pair_ids: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pair_ids
        .par_iter()
        .map(|&(i, j)| {
            let mut sum = 0.0;
            for (k, p) in projectors.iter().enumerate() {
                sum += maps[k][i].compare(&maps[k][j], p.comparison())?;
            }
            Ok(sum / 3.0)
        })
        .collect::<Result<_>>()?;
    Ok(dists.into_iter().fold(f64::INFINITY, f64::min))
}

/// Runs the permutation AE over `n` seeded shape images of the given side.
pub fn prop1_case(n: usize, side: usize, seed: u64) -> Result<Prop1Case> {
    let images = shapes_dataset(n, side, seed);
    let projectors = spatial_projectors()?;
    let ae = make_permutation_ae(&images, seed)?;
    let permuted = roundtrip_dataset(&ae, &images, None)?.pairs;
    let identity = roundtrip_dataset(&SyntheticAE::identity(), &images, None)?.pairs;
    let extractor = PooledPixels { grid: 4 };
    let refs = feature_stats(&images, &extractor)?;
    let recons: Vec<ImageTensor> = permuted.iter().map(|p| p.reconstruction().clone()).collect();
    let frechet = frechet_distance(&refs, &feature_stats(&recons, &extractor)?)?;
    Ok(Prop1Case {
        n,
        seed,
        frechet,
        mean_drift: spatial_drift(&permuted, &projectors),
        identity_drift: spatial_drift(&identity, &projectors),
        min_pairwise: min_pairwise_spatial(&images, &projectors)?,
    })
}

/// Mean PSNR and mean Canny drift of a Gaussian-blur family on a fixed
/// shapes set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurSweep {
    pub sigmas: Vec<f64>,
    pub psnr: Vec<f64>,
    pub canny_drift: Vec<f64>,
    /// Spearman correlation of `psnr` against `canny_drift`.
    pub rho: Option<f64>,
}

impl BlurSweep {
    pub fn psnr_strictly_decreasing(&self) -> bool {
        self.psnr.windows(2).all(|w| w[0] > w[1])
    }

    pub fn drift_nondecreasing(&self) -> bool {
        self.canny_drift.windows(2).all(|w| w[0] <= w[1])
    }
}

pub fn blur_sweep(sigmas: &[f64], n: usize, side: usize, seed: u64) -> Result<BlurSweep> {
    let images = shapes_dataset(n, side, seed);
    let canny = CannyProjector::new(CannyParams::default())?;
    let mut out = BlurSweep {
        sigmas: sigmas.to_vec(),
        psnr: Vec::new(),
        canny_drift: Vec::new(),
        rho: None,
    };
    for ae in make_blur_family(sigmas)? {
        let pairs = roundtrip_dataset(&ae, &images, None)?.pairs;
        // mean PSNR over pairs; identical pairs make it +inf
        out.psnr.push(pairs.iter().map(psnr).sum::<f64>() / pairs.len() as f64);
        out.canny_drift.push(DriftRecord::compute(&pairs, &canny).mean.unwrap_or(f64::NAN));
    }
    out.rho = spearman_dense(&out.psnr, &out.canny_drift).ok();
    Ok(out)
}
