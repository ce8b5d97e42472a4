use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use crate::data::ImageTensor;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-8;
const PRODUCT_NEG_REL_TOL: f64 = 1e-10;
const CLAMP_TOL: f64 = 1e-6;

/// Mean, unbiased covariance and sample count of a feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
    pub n: usize,
    /// Extractor that produced the features, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<String>,
}

impl FeatureStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        let s = Self {
            mean,
            cov,
            n,
            extractor: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_at(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.dim() + j]
    }

    /// Shape, count, symmetry and finiteness checks (PSD is checked by
    /// [`frechet_distance`], which needs the eigenvalues anyway).
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "covariance has {} entries for dimension {d}",
                self.cov.len()
            )));
        }
        if self.n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: self.n });
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature statistics".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.cov_at(i, j) - self.cov_at(j, i)).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, &self.cov);
        (&m + m.transpose()) * 0.5
    }
}

/// Streaming mean/covariance (Welford) with an associative merge, so
/// sharded accumulation agrees with a single pass.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    n: usize,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!("feature of length {} for dimension {d}", x.len())));
        }
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for (row, di) in self.comoment.chunks_exact_mut(d).zip(&delta) {
            for ((r, xj), mj) in row.iter_mut().zip(x).zip(&self.mean) {
                *r += di * (xj - mj);
            }
        }
        Ok(())
    }

    /// Pairwise (Chan et al.) combination of two partial accumulations.
    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        let d = self.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch("merging accumulators of different dimension".into()));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += other.comoment[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> Result<FeatureStats> {
        if self.n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: self.n });
        }
        let denom = (self.n - 1) as f64;
        let d = self.dim();
        let mut cov: Vec<f64> = self.comoment.iter().map(|v| v / denom).collect();
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = s;
                cov[j * d + i] = s;
            }
        }
        FeatureStats::new(self.mean.clone(), cov, self.n)
    }
}

const SHARD: usize = 64;

/// Feature statistics of an image set. Features are extracted in parallel
/// and reduced over fixed-size shards in order, so results are
/// bit-reproducible.
pub fn feature_stats(images: &[ImageTensor], extractor: &dyn FeatureExtractor) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: images.len() });
    }
    let dim = extractor.dim();
    let shards: Vec<Result<StatsAccumulator>> = images
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut acc = StatsAccumulator::new(dim);
            for img in chunk {
                acc.push(&extractor.extract(img)?)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = StatsAccumulator::new(dim);
    for shard in shards {
        total.merge(&shard?)?;
    }
    let mut stats = total.finish()?;
    stats.extractor = Some(extractor.id());
    Ok(stats)
}

fn check_psd(eigenvalues: &DVector<f64>) -> Result<()> {
    let max = eigenvalues.max();
    let min = eigenvalues.min();
    if min < -PSD_TOL * max.abs().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`.
///
/// The trace of the matrix square root is computed as the sum of square
/// roots of the eigenvalues of the symmetric matrix `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());

    let eig_a = SymmetricEigen::new(sa.clone());
    check_psd(&eig_a.eigenvalues)?;
    check_psd(&SymmetricEigen::new(sb.clone()).eigenvalues)?;
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }

    let sqrt_vals = eig_a.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_a = &eig_a.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig_a.eigenvectors.transpose();
    let m = &sqrt_a * &sb * &sqrt_a;
    let m = (&m + m.transpose()) * 0.5;
    let eig_m = SymmetricEigen::new(m).eigenvalues;
    let lmax = eig_m.max().max(0.0);
    let floor = -(PRODUCT_NEG_REL_TOL * lmax).max(1e-14);
    if eig_m.min() < floor {
        return Err(Error::NotPsd {
            min_eigenvalue: eig_m.min(),
            max_eigenvalue: lmax,
        });
    }
    let tr_sqrt: f64 = eig_m.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if d < 0.0 {
        if d >= -CLAMP_TOL {
            return Ok(0.0);
        }
        return Err(Error::InvalidParameter(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[f64], cov: &[f64]) -> FeatureStats {
        FeatureStats::new(mean.to_vec(), cov.to_vec(), 10).unwrap()
    }

    #[test]
    fn hand_covariance_of_two_points() {
        let mut acc = StatsAccumulator::new(2);
        acc.push(&[0.0, 0.0]).unwrap();
        acc.push(&[2.0, 2.0]).unwrap();
        let s = acc.finish().unwrap();
        assert_eq!(s.mean, vec![1.0, 1.0]);
        assert_eq!(s.cov, vec![2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn copies_have_zero_covariance() {
        let mut acc = StatsAccumulator::new(3);
        for _ in 0..5 {
            acc.push(&[0.3, -1.0, 2.0]).unwrap();
        }
        assert!(acc.finish().unwrap().cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_sample_is_rejected() {
        let mut acc = StatsAccumulator::new(1);
        acc.push(&[1.0]).unwrap();
        assert!(matches!(acc.finish(), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn closed_forms() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[3.0], &[4.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        let a = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let b = stats(&[1.0, 0.0], &[4.0, 0.0, 0.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn rejects_dimension_mismatch_and_non_psd() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::DimensionMismatch(_))));
        let bad = stats(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(frechet_distance(&bad, &bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        assert!(FeatureStats::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.0, 1.0], 3).is_err());
    }
}
