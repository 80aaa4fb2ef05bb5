use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// FNV-1a, 64-bit, over the given bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic unit-norm stand-in for a word vector: a Gaussian vector
/// drawn from ChaCha8 seeded with `fnv1a64(token) ^ seed`.
pub fn pseudo_embedding(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    let mut r = rng::seeded(fnv1a64(token.as_bytes()) ^ seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v[0] = 1.0;
    }
    v
}

/// Lemma of a WordNet-style synset token (`frying_pan.n.01` → `frying_pan`).
/// Other tokens are returned unchanged.
pub fn lemma(token: &str) -> &str {
    let parts: Vec<&str> = token.rsplitn(3, '.').collect();
    match parts.as_slice() {
        [sense, pos, lemma]
            if !lemma.is_empty()
                && pos.len() == 1
                && !sense.is_empty()
                && sense.bytes().all(|b| b.is_ascii_digit()) =>
        {
            lemma
        }
        _ => token,
    }
}

/// Token to D-dimensional vector table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Covers `vocab`, preferring vectors from `source` (keyed by word) and
    /// falling back to [`pseudo_embedding`]. Synsets are looked up by lemma
    /// first, then by the full token.
    pub fn build<'a, I>(vocab: I, dim: usize, seed: u64, source: &BTreeMap<String, Vec<f64>>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be at least 1"));
        }
        let mut vectors = BTreeMap::new();
        for token in vocab {
            let found = source.get(lemma(token)).or_else(|| source.get(token));
            let v = match found {
                Some(v) if v.len() == dim => v.clone(),
                Some(v) => {
                    return Err(Error::arg(format!(
                        "embedding for {token} has {} values, expected {dim}",
                        v.len()
                    )))
                }
                None => pseudo_embedding(token, dim, seed),
            };
            vectors.insert(String::from(token), v);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn pseudo<'a, I>(vocab: I, dim: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::build(vocab, dim, seed, &BTreeMap::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Result<&[f64]> {
        self.vectors
            .get(token)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownToken(String::from(token)))
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pseudo_embedding_is_stable_and_unit() {
        let a = pseudo_embedding("mug", 300, 7);
        assert_eq!(a, pseudo_embedding("mug", 300, 7));
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((libm::sqrt(n) - 1.0).abs() < 1e-12);
        let b = pseudo_embedding("pour", 300, 7);
        assert_ne!(a, b);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos > -1.0 && cos < 1.0);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn lemma_extraction() {
        assert_eq!(lemma("frying_pan.n.01"), "frying_pan");
        assert_eq!(lemma("pour"), "pour");
        assert_eq!(lemma("a.b"), "a.b");
        assert_eq!(lemma("pick.up.v.x"), "pick.up.v.x");
    }

    #[test]
    fn lookup_prefers_source_then_falls_back() {
        let source = BTreeMap::from([
            (String::from("pour"), vec![0.1; 4]),
            (String::from("frying_pan"), vec![0.2; 4]),
        ]);
        let t = EmbeddingTable::build(["pour", "frying_pan.n.01", "mug"], 4, 3, &source).unwrap();
        assert_eq!(t.get("pour").unwrap(), &[0.1; 4]);
        assert_eq!(t.get("frying_pan.n.01").unwrap(), &[0.2; 4]);
        assert_eq!(t.get("mug").unwrap(), pseudo_embedding("mug", 4, 3).as_slice());
        assert!(t.get("flip").is_err());
    }
}
