use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::average_pool;

/// Image-level feature extractor for distributional statistics.
pub trait FeatureExtractor: Send + Sync {
    /// Stable identifier including every parameter that affects output.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// `grid x grid` average-pooled RGB, flattened channel-major.
#[derive(Clone, Debug)]
pub struct PooledPixels {
    pub grid: usize,
}

impl FeatureExtractor for PooledPixels {
    fn id(&self) -> String {
        format!("pooled_pixels(grid={})", self.grid)
    }

    fn dim(&self) -> usize {
        3 * self.grid * self.grid
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let (h, w) = (image.height(), image.width());
        if self.grid == 0 || h % self.grid != 0 || w % self.grid != 0 {
            return Err(Error::InvalidParameter(format!(
                "pooling grid {} does not divide {h}x{w}",
                self.grid
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for c in 0..3 {
            out.extend(average_pool(image.plane(c), h, w, h / self.grid)?);
        }
        Ok(out)
    }
}

/// Principal components of pooled pixels, fitted on a reference set.
#[derive(Clone, Debug)]
pub struct PixelPca {
    pooled: PooledPixels,
    mean: Vec<f64>,
    // k rows of length dim
    components: Vec<Vec<f64>>,
    fingerprint: String,
}

impl PixelPca {
    /// Fits the top `k` components on `images`. Component signs are fixed so
    /// the largest-magnitude entry is positive.
    pub fn fit(images: &[ImageTensor], grid: usize, k: usize) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: images.len() });
        }
        let pooled = PooledPixels { grid };
        let d = pooled.dim();
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!("PCA needs 1 <= k <= {d}, got {k}")));
        }
        let rows: Vec<Vec<f64>> = images.iter().map(|i| pooled.extract(i)).collect::<Result<_>>()?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for r in &rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..d {
                    cov[(i, j)] += di * (r[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let components: Vec<Vec<f64>> = order[..k]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let pivot = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
                if pivot < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        let mut hasher = Sha256::new();
        for v in mean.iter().chain(components.iter().flatten()) {
            hasher.update(v.to_le_bytes());
        }
        let fingerprint = hex::encode(&hasher.finalize()[..6]);
        Ok(Self {
            pooled,
            mean,
            components,
            fingerprint,
        })
    }
}

impl FeatureExtractor for PixelPca {
    fn id(&self) -> String {
        format!(
            "pixel_pca(grid={},k={},fit={})",
            self.pooled.grid,
            self.components.len(),
            self.fingerprint
        )
    }

    fn dim(&self) -> usize {
        self.components.len()
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let x = self.pooled.extract(image)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&x).zip(&self.mean).map(|((w, v), m)| w * (v - m)).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_dimensions() {
        let img = ImageTensor::filled("a", 32, 0.5).unwrap();
        let f = PooledPixels { grid: 4 }.extract(&img).unwrap();
        assert_eq!(f.len(), 48);
        assert!(f.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(PooledPixels { grid: 5 }.extract(&img).is_err());
    }

    #[test]
    fn pca_projects_centered_data() {
        let imgs: Vec<_> = (0..6)
            .map(|i| ImageTensor::filled(format!("i{i}"), 8, i as f64 / 6.0).unwrap())
            .collect();
        let pca = PixelPca::fit(&imgs, 2, 1).unwrap();
        // constant images vary along the all-ones direction only
        let feats: Vec<f64> = imgs.iter().map(|i| pca.extract(i).unwrap()[0]).collect();
        let mean: f64 = feats.iter().sum::<f64>() / feats.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!(feats.windows(2).all(|w| w[1] > w[0]));
    }
}
