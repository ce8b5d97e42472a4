use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::external::{output_kind, ExtractorOutput, ExtractorProcess};
use super::{Comparison, ConditionMap, Projector, ProjectorKind};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::average_pool;

/// A global image-embedding model.
pub trait EmbeddingExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn stamp(&self) -> String {
        self.name().to_string()
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// Embeds an image; a zero vector is an error for that image.
pub fn global_embedding(image: &ImageTensor, extractor: &dyn EmbeddingExtractor) -> Result<ConditionMap> {
    let v = extractor.embed(image)?;
    if v.is_empty() || v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroEmbedding(extractor.name().to_string()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("embedding from `{}`", extractor.name())));
    }
    Ok(ConditionMap::vector(extractor.name(), v))
}

/// Deterministic toy embedding: `grid x grid` average-pooled RGB followed by
/// a fixed-seed Gaussian random projection.
#[derive(Clone, Debug)]
pub struct ToyLinearEmbedding {
    name: String,
    seed: u64,
    grid: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl ToyLinearEmbedding {
    pub fn new(name: impl Into<String>, seed: u64, grid: usize, dim: usize) -> Self {
        let inputs = 3 * grid * grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..inputs * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            name: name.into(),
            seed,
            grid,
            dim,
            weights,
        }
    }
}

impl EmbeddingExtractor for ToyLinearEmbedding {
    fn name(&self) -> &str {
        &self.name
    }

    fn stamp(&self) -> String {
        format!("toy_linear(seed={},grid={},dim={})", self.seed, self.grid, self.dim)
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let (h, w) = (image.height(), image.width());
        if h % self.grid != 0 || w % self.grid != 0 {
            return Err(Error::InvalidParameter(format!(
                "toy embedding grid {} does not divide {h}x{w}",
                self.grid
            )));
        }
        let block = h / self.grid;
        let mut pooled = Vec::with_capacity(3 * self.grid * self.grid);
        for c in 0..3 {
            pooled.extend(average_pool(image.plane(c), h, w, block)?);
        }
        let inputs = pooled.len();
        Ok((0..self.dim)
            .map(|d| {
                self.weights[d * inputs..(d + 1) * inputs]
                    .iter()
                    .zip(&pooled)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect())
    }
}

/// Embedding extractor behind the subprocess protocol (`kind: vector`).
#[derive(Clone, Debug)]
pub struct ExternalEmbedding {
    pub process: ExtractorProcess,
}

impl EmbeddingExtractor for ExternalEmbedding {
    fn name(&self) -> &str {
        &self.process.name
    }

    fn stamp(&self) -> String {
        format!("external({} {})", self.process.program, self.process.args.join(" "))
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        match self.process.run(image)? {
            ExtractorOutput::Vector(v) => Ok(v),
            other => Err(Error::MalformedOutput {
                name: self.process.name.clone(),
                message: format!("expected vector, got {}", output_kind(&other)),
            }),
        }
    }
}

/// Adapts an [`EmbeddingExtractor`] to the projector interface (cosine
/// comparison).
pub struct EmbeddingProjector {
    name: String,
    extractor: Box<dyn EmbeddingExtractor>,
}

impl EmbeddingProjector {
    pub fn new(name: impl Into<String>, extractor: Box<dyn EmbeddingExtractor>) -> Self {
        Self {
            name: name.into(),
            extractor,
        }
    }
}

impl Projector for EmbeddingProjector {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::Embedding
    }

    fn comparison(&self) -> Comparison {
        Comparison::Cosine
    }

    fn stamp(&self) -> String {
        self.extractor.stamp()
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        let mut map = global_embedding(image, self.extractor.as_ref())?;
        map.projector_name = self.name.clone();
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projectors::cosine_similarity;

    fn ramp() -> ImageTensor {
        let side = 16;
        let plane: Vec<f64> = (0..side * side).map(|i| (i % side) as f64 / 15.0).collect();
        ImageTensor::from_gray("r", side, side, &plane).unwrap()
    }

    #[test]
    fn toy_embedding_is_deterministic() {
        let e = ToyLinearEmbedding::new("toy", 7, 4, 16);
        let a = global_embedding(&ramp(), &e).unwrap();
        let b = global_embedding(&ramp(), &ToyLinearEmbedding::new("toy", 7, 4, 16)).unwrap();
        assert_eq!(a, b);
        assert_eq!(cosine_similarity(a.values(), b.values()), Some(1.0));
    }

    #[test]
    fn negation_gives_finite_cosine() {
        let e = ToyLinearEmbedding::new("toy", 7, 4, 16);
        let x = ramp();
        let neg = x.map_clamped(|v| 1.0 - v).unwrap();
        let (a, b) = (e.embed(&x).unwrap(), e.embed(&neg).unwrap());
        // direct evaluation of the same linear map on the pooled inputs
        let c = cosine_similarity(&a, &b).unwrap();
        assert!(c.is_finite() && (-1.0..=1.0).contains(&c));
    }

    struct Zero;
    impl EmbeddingExtractor for Zero {
        fn name(&self) -> &str {
            "zero"
        }
        fn embed(&self, _: &ImageTensor) -> Result<Vec<f64>> {
            Ok(vec![0.0; 4])
        }
    }

    #[test]
    fn zero_embedding_is_rejected() {
        assert!(matches!(global_embedding(&ramp(), &Zero), Err(Error::ZeroEmbedding(_))));
    }
}
