//! Text embedding and LLM providers.
//!
//! Every provider has a deterministic offline implementation so the whole
//! pipeline can run without a network, and a remote HTTP implementation for
//! real models.

mod hashing;
pub mod remote;
mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

pub use hashing::{fnv1a64, hash_embed, tokenize, HashEmbedder, DEFAULT_HASH_DIM};
pub use remote::{RemoteEmbedder, RemoteLlm, RemoteLlmConfig};
pub use stub::{StubLlm, STUB_YES_GAIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormFlag {
    Unit,
    Zero,
}

/// An L2-normalised embedding, or an explicitly flagged zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    flag: NormFlag,
}

impl EmbeddingVector {
    /// Normalises `raw`; an all-zero (or non-finite norm) input becomes the
    /// flagged zero vector.
    pub fn from_raw(raw: &[f64]) -> Self {
        let n = norm(raw);
        if n == 0.0 || !n.is_finite() {
            return Self::zero(raw.len());
        }
        EmbeddingVector {
            values: raw.iter().map(|&x| (x / n) as f32).collect(),
            flag: NormFlag::Unit,
        }
    }

    pub fn zero(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
            flag: NormFlag::Zero,
        }
    }

    /// Wraps stored values that are already unit length (index rows).
    pub fn from_unit(values: Vec<f32>) -> Self {
        let flag = if values.iter().all(|&x| x == 0.0) {
            NormFlag::Zero
        } else {
            NormFlag::Unit
        };
        EmbeddingVector { values, flag }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        crate::linalg::widen(&self.values)
    }

    pub fn flag(&self) -> NormFlag {
        self.flag
    }

    pub fn is_zero(&self) -> bool {
        self.flag == NormFlag::Zero
    }
}

/// Cosine similarity, the `⊗` of both contrastive objectives.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_slices(a.values(), b.values(), a.is_zero() || b.is_zero())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32], zero: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if zero {
        return Err(Error::ZeroVector);
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine of two raw `f64` vectors.
pub fn cosine_f64(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Next-token logits of "Yes" and "No".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub logit_yes: f64,
    pub logit_no: f64,
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| Error::Protocol("embedder returned no vector".into()))
    }
}

pub trait LanguageModel: Send + Sync {
    /// Free-form completion of `prompt`.
    fn complete(&self, prompt: &str) -> Result<String>;

    /// Logits of "Yes"/"No" as the next token after `prompt`.
    fn judge(&self, prompt: &str) -> Result<JudgeResult>;
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
    fn judge(&self, prompt: &str) -> Result<JudgeResult> {
        (**self).judge(prompt)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
    fn judge(&self, prompt: &str) -> Result<JudgeResult> {
        (**self).judge(prompt)
    }
}

/// Counts calls into a wrapped model; used to check which LLM operations a
/// code path performs.
#[derive(Debug, Default)]
pub struct CallCounter<M> {
    pub inner: M,
    complete_calls: AtomicUsize,
    judge_calls: AtomicUsize,
}

impl<M> CallCounter<M> {
    pub fn new(inner: M) -> Self {
        CallCounter {
            inner,
            complete_calls: AtomicUsize::new(0),
            judge_calls: AtomicUsize::new(0),
        }
    }

    pub fn complete_calls(&self) -> usize {
        self.complete_calls.load(Ordering::SeqCst)
    }

    pub fn judge_calls(&self) -> usize {
        self.judge_calls.load(Ordering::SeqCst)
    }
}

impl<M: LanguageModel> LanguageModel for CallCounter<M> {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.complete_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }

    fn judge(&self, prompt: &str) -> Result<JudgeResult> {
        self.judge_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.judge(prompt)
    }
}

/// Applies `f` to every input with at most `limit` calls in flight. Results
/// are returned in input order regardless of completion order.
pub fn bounded_map<T, R, F>(inputs: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let limit = limit.max(1).min(inputs.len().max(1));
    if limit == 1 {
        return inputs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..inputs.len()).map(|_| None).collect();
    let chunks: Vec<Vec<(usize, R)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..limit)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= inputs.len() {
                            break;
                        }
                        done.push((i, f(&inputs[i])));
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    for (i, r) in chunks.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_raw(v)
    }

    #[test]
    fn cosine_known_values() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[0.0, 1.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        let c = unit(&[1.0, 1.0]);
        assert!((cosine(&c, &a).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        let z = EmbeddingVector::zero(2);
        assert!(z.is_zero());
        assert!(matches!(cosine(&z, &unit(&[1.0, 0.0])), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine(&unit(&[1.0]), &unit(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bounded_map_preserves_order() {
        let inputs: Vec<u64> = (0..97).collect();
        let out = bounded_map(&inputs, 5, |&x| {
            std::thread::sleep(std::time::Duration::from_micros((97 - x) * 10));
            x * 2
        });
        assert_eq!(out, inputs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(bounded_map(&Vec::<u8>::new(), 4, |&x| x).is_empty());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let (a, b) = (unit(&a), unit(&b));
            prop_assume!(!a.is_zero() && !b.is_zero());
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
