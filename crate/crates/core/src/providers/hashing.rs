use super::{EmbeddingVector, TextEmbedder};
use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing: each token adds ±1 to bucket `fnv1a64 mod dim`,
/// the sign taken from the top hash bit; the result is L2-normalised.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 2, "hash embedding dimension must be at least 2");
    let mut acc = vec![0.0f64; dim];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    EmbeddingVector::from_raw(&acc)
}

/// Deterministic offline embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("embedding_dim", "must be at least 2"));
        }
        Ok(HashEmbedder { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dim)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_flagged_zero() {
        let v = hash_embed("", 16);
        assert!(v.is_zero());
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert!(hash_embed(" ,;- ", 16).is_zero());
    }

    #[test]
    fn deterministic() {
        assert_eq!(hash_embed("Fight Club (1999)", 64), hash_embed("Fight Club (1999)", 64));
    }

    #[test]
    fn matches_reference_hashing() {
        // Reference values from an independent FNV-1a implementation:
        // "matrix" -> 0x6931f45bd1aabcac (bucket 172, +1), "the" -> 0x56f5c9194461d57c (bucket 124, +1).
        assert_eq!(fnv1a64(b"matrix"), 0x6931_f45b_d1aa_bcac);
        assert_eq!(fnv1a64(b"the"), 0x56f5_c919_4461_d57c);
        let v = hash_embed("Matrix the matrix", 256);
        for (i, &x) in v.values().iter().enumerate() {
            let expected = match i {
                172 => 2.0 / 5f64.sqrt(),
                124 => 1.0 / 5f64.sqrt(),
                _ => 0.0,
            };
            assert!((x as f64 - expected).abs() < 1e-7, "bucket {i}: {x}");
        }
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        let tokens: Vec<_> = tokenize("'Se7en (1995)', Café-Noir").collect();
        assert_eq!(tokens, vec!["se7en", "1995", "café", "noir"]);
    }

    proptest! {
        #[test]
        fn unit_norm_and_case_whitespace_invariant(text in "[A-Za-z0-9 ,.'()]{1,60}", pad in " {0,4}") {
            let v = hash_embed(&text, 64);
            prop_assume!(!v.is_zero());
            let n: f64 = v.values().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
            let padded = format!("{pad}{}{pad}", text.to_uppercase());
            prop_assert_eq!(hash_embed(&padded, 64), v);
        }
    }
}
