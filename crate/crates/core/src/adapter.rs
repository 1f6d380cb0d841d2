//! Square linear adapter over frozen provider embeddings: the trainable part
//! of both the collaborative retriever and the self-assessing reranker.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::artifact::{read_file, write_atomic, Decoder, Encoder};
use crate::contrastive::check_temperature;
use crate::error::{Error, Result};
use crate::linalg::{narrow, norm, Matrix};
use crate::providers::EmbeddingVector;

/// Standard deviation of the Gaussian noise added to the identity at
/// initialisation.
pub const INIT_NOISE_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    Retriever,
    Reranker,
}

impl AdapterKind {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            AdapterKind::Retriever => b"ADP1",
            AdapterKind::Reranker => b"ADP2",
        }
    }

    fn temperature_field(self) -> &'static str {
        match self {
            AdapterKind::Retriever => "tau_car",
            AdapterKind::Reranker => "tau_sare",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    kind: AdapterKind,
    dim: usize,
    weights: Vec<f32>,
    temperature: f64,
    seed: u64,
}

impl Adapter {
    pub fn identity(kind: AdapterKind, dim: usize, temperature: f64) -> Result<Self> {
        Self::from_matrix(kind, &Matrix::identity(dim), temperature, 0)
    }

    /// `I + N(0, 0.01²)` noise from the seeded generator.
    pub fn initial_matrix(dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, INIT_NOISE_STD).expect("valid normal");
        let mut m = Matrix::identity(dim);
        for x in m.data.iter_mut() {
            *x += noise.sample(&mut rng);
        }
        // round through the storage precision so that an untrained adapter
        // equals its initialisation exactly
        for x in m.data.iter_mut() {
            *x = *x as f32 as f64;
        }
        m
    }

    pub fn from_matrix(kind: AdapterKind, w: &Matrix, temperature: f64, seed: u64) -> Result<Self> {
        check_temperature(temperature, kind.temperature_field())?;
        if w.rows != w.cols || w.rows == 0 {
            return Err(Error::config("adapter", "projection must be a non-empty square matrix"));
        }
        if !w.is_finite() {
            return Err(Error::config("adapter", "projection entries must be finite"));
        }
        Ok(Adapter {
            kind,
            dim: w.rows,
            weights: narrow(&w.data),
            temperature,
            seed,
        })
    }

    pub fn kind(&self) -> AdapterKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_f32(self.dim, self.dim, &self.weights)
    }

    /// `normalize(W·base)`.
    pub fn project(&self, base: &EmbeddingVector) -> Result<EmbeddingVector> {
        if base.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: base.dim(),
            });
        }
        if base.is_zero() {
            return Err(Error::ZeroVector);
        }
        let x = base.to_f64();
        let y: Vec<f64> = self
            .weights
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&x).map(|(&w, &v)| w as f64 * v).sum())
            .collect();
        if norm(&y) == 0.0 {
            return Err(Error::DegenerateProjection);
        }
        Ok(EmbeddingVector::from_raw(&y))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(self.kind.magic());
        e.u32(self.dim as u32).f64(self.temperature).f32s(&self.weights);
        e.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, kind: AdapterKind) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let mut d = Decoder::new(&bytes, kind.magic(), path)?;
        let dim = d.u32()? as usize;
        let temperature = d.f64()?;
        let weights = d.f32s(dim.saturating_mul(dim))?;
        d.finish()?;
        Self::from_matrix(kind, &Matrix::from_f32(dim, dim, &weights), temperature, 0)
            .map_err(|e| Error::artifact(path, e.to_string()))
    }
}
