//! Progress report → bandit context.
//!
//! The report text is embedded, multiplied by a fixed Gaussian projection
//! matrix down to the bandit dimension, and L2-normalized. The matrix is drawn
//! once from `projection_seed` the first time the native embedding dimension
//! is seen.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::{BackendError, EmbeddingBackend, EmbeddingResponse};
use crate::bandit::ContextVector;
use crate::linalg::{dot, l2_norm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("report text is empty")]
    EmptyReport,
    #[error("projected context vector is zero")]
    Degenerate,
}

/// Row-major `output_dim × input_dim` Gaussian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    input_dim: usize,
    output_dim: usize,
    weights: Vec<f64>,
}

impl RandomProjection {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / libm::sqrt(output_dim as f64);
        let weights = (0..input_dim * output_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self {
            input_dim,
            output_dim,
            weights,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn project(&self, input: &[f64]) -> Result<Vec<f64>, BackendError> {
        if input.len() != self.input_dim {
            return Err(BackendError::Dimension {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.input_dim)
            .map(|row| dot(row, input))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    dim: usize,
    seed: u64,
    projection: Option<RandomProjection>,
}

impl FeatureExtractor {
    pub fn new(dim: usize, projection_seed: u64) -> Self {
        Self {
            dim,
            seed: projection_seed,
            projection: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection(&self) -> Option<&RandomProjection> {
        self.projection.as_ref()
    }

    /// Projects and normalizes an already computed embedding.
    pub fn from_embedding(&mut self, embedding: &[f64]) -> Result<ContextVector, FeatureError> {
        let (dim, seed) = (self.dim, self.seed);
        let projection = self
            .projection
            .get_or_insert_with(|| RandomProjection::new(embedding.len(), dim, seed));
        let mut v = projection.project(embedding)?;
        let norm = l2_norm(&v);
        if !norm.is_finite() || norm <= 0.0 {
            return Err(FeatureError::Degenerate);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        ContextVector::new(v).map_err(|_| FeatureError::Degenerate)
    }

    /// Embeds `report_text` and maps it to a unit context vector.
    pub fn extract(
        &mut self,
        report_text: &str,
        embedder: &dyn EmbeddingBackend,
    ) -> Result<(ContextVector, EmbeddingResponse), FeatureError> {
        if report_text.trim().is_empty() {
            return Err(FeatureError::EmptyReport);
        }
        let response = embedder.embed(report_text)?;
        let x = self.from_embedding(&response.vector)?;
        Ok((x, response))
    }
}
