use rand_distr::{Distribution, StandardNormal};

use super::tokens::{Token, TokenKind};
use crate::error::{Error, Result};
use crate::rng::indexed_rng;
use crate::rng::hash_str;
use crate::tensor::Tensor;

/// Source of text-side token embeddings.
pub trait TextEmbedder {
    fn dim(&self) -> usize;

    /// `ordinal` counts non-pause tokens in sequence order, which lets
    /// precomputed per-token matrices be indexed directly.
    fn embed(&self, token: &Token, ordinal: usize) -> Result<Vec<f32>>;
}

/// Deterministic pseudo-random embedding per token string: a standard
/// normal vector seeded by `(seed, text)`.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub scale: f32,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder {
            dim,
            seed,
            scale: 1.0,
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut rng = indexed_rng(self.seed, "text-embedding", hash_str(text));
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32 * self.scale
            })
            .collect()
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, token: &Token, _ordinal: usize) -> Result<Vec<f32>> {
        Ok(self.vector(&token.text))
    }
}

/// Rows of an externally computed token-embedding matrix, one per non-pause
/// token. Pause marks, which the external encoder never saw, come from
/// `pause_embedder`.
#[derive(Clone, Debug)]
pub struct PrecomputedEmbedder {
    pub matrix: Tensor<f32>,
    pub pause_embedder: HashEmbedder,
}

impl PrecomputedEmbedder {
    pub fn new(matrix: Tensor<f32>, pause_seed: u64) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(Error::contract("token embeddings must be a matrix"));
        }
        let dim = matrix.cols();
        Ok(PrecomputedEmbedder {
            matrix,
            pause_embedder: HashEmbedder::new(dim, pause_seed),
        })
    }
}

impl TextEmbedder for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.matrix.cols()
    }

    fn embed(&self, token: &Token, ordinal: usize) -> Result<Vec<f32>> {
        if token.kind == TokenKind::Pause {
            return Ok(self.pause_embedder.vector(&token.text));
        }
        if ordinal >= self.matrix.shape()[0] {
            return Err(Error::contract(format!(
                "token {ordinal} ({:?}) has no row in a {}-row embedding matrix",
                token.text,
                self.matrix.shape()[0]
            )));
        }
        Ok(self.matrix.row(ordinal).to_vec())
    }
}
