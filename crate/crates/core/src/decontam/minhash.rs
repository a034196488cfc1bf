//! MinHash fingerprints over word shingles and the banded LSH index used to
//! retrieve lexical near-duplicate candidate pairs.

use std::collections::{BTreeSet, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MinHashError {
    #[error("cannot fingerprint an empty shingle set")]
    EmptyShingleSet,
    #[error("signatures come from different hash families ({0} vs {1})")]
    FamilyMismatch(u64, u64),
    #[error("signature lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("band layout {bands}x{rows} does not cover {hashes} hash functions")]
    BandLayout {
        bands: usize,
        rows: usize,
        hashes: usize,
    },
}

/// Word-level k-shingles with set semantics. Texts shorter than `k` words
/// yield the single whole-text shingle.
pub fn shingle(norm_text: &str, k: usize) -> BTreeSet<String> {
    let words: Vec<&str> = norm_text.split_whitespace().collect();
    let mut out = BTreeSet::new();
    if words.is_empty() {
        return out;
    }
    if words.len() < k {
        out.insert(words.join(" "));
        return out;
    }
    for window in words.windows(k) {
        out.insert(window.join(" "));
    }
    out
}

/// A family of independent 64-bit seeded hash functions, derived from a
/// single run seed so signatures are deterministic per run.
#[derive(Debug, Clone)]
pub struct HashFamily {
    seeds: Vec<u64>,
    family_id: u64,
}

impl HashFamily {
    pub fn new(run_seed: u64, num_hashes: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(run_seed);
        let seeds = (0..num_hashes).map(|_| rng.next_u64()).collect();
        HashFamily {
            seeds,
            family_id: run_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// splitmix64 finalizer; cheap with full avalanche.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// MinHash fingerprint: one minimum per hash function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub shingle_k: usize,
    pub family_id: u64,
    pub values: Vec<u64>,
}

/// `values[h] = min over shingles of hash_h(shingle)`.
pub fn minhash_signature(
    family: &HashFamily,
    shingles: &BTreeSet<String>,
    shingle_k: usize,
    doc_id: &str,
) -> Result<MinHashSignature, MinHashError> {
    if shingles.is_empty() {
        return Err(MinHashError::EmptyShingleSet);
    }
    let mut values = vec![u64::MAX; family.seeds.len()];
    for shingle in shingles {
        let base = fnv1a(shingle.as_bytes());
        for (slot, &seed) in values.iter_mut().zip(family.seeds.iter()) {
            let h = mix(base ^ seed);
            if h < *slot {
                *slot = h;
            }
        }
    }
    Ok(MinHashSignature {
        doc_id: doc_id.to_string(),
        shingle_k,
        family_id: family.family_id,
        values,
    })
}

/// Fraction of agreeing positions; an unbiased estimator of the Jaccard
/// similarity of the underlying shingle sets.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, MinHashError> {
    if a.family_id != b.family_id {
        return Err(MinHashError::FamilyMismatch(a.family_id, b.family_id));
    }
    if a.values.len() != b.values.len() {
        return Err(MinHashError::LengthMismatch(a.values.len(), b.values.len()));
    }
    let agree = a
        .values
        .iter()
        .zip(b.values.iter())
        .filter(|(x, y)| x == y)
        .count();
    Ok(agree as f64 / a.values.len() as f64)
}

/// Exact Jaccard similarity of two shingle sets (the brute-force oracle the
/// estimator is checked against).
pub fn exact_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Banded LSH index: `bands` tables keyed by the digest of `rows`
/// consecutive signature positions. A document appears in exactly `bands`
/// band tables.
#[derive(Debug)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    tables: Vec<HashMap<u64, Vec<usize>>>,
    num_hashes: usize,
}

impl LshIndex {
    pub fn build(
        signatures: &[MinHashSignature],
        bands: usize,
        rows: usize,
    ) -> Result<Self, MinHashError> {
        let num_hashes = signatures.first().map_or(bands * rows, |s| s.values.len());
        if bands * rows != num_hashes {
            return Err(MinHashError::BandLayout {
                bands,
                rows,
                hashes: num_hashes,
            });
        }
        let mut tables: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); bands];
        for (idx, sig) in signatures.iter().enumerate() {
            if sig.values.len() != num_hashes {
                return Err(MinHashError::LengthMismatch(sig.values.len(), num_hashes));
            }
            for (band, table) in tables.iter_mut().enumerate() {
                let digest = band_digest(&sig.values[band * rows..(band + 1) * rows], band);
                table.entry(digest).or_default().push(idx);
            }
        }
        Ok(LshIndex {
            bands,
            rows,
            tables,
            num_hashes,
        })
    }

    /// Indices of indexed documents sharing at least one band with `sig`,
    /// deduplicated, in ascending order.
    pub fn candidates(&self, sig: &MinHashSignature) -> Result<Vec<usize>, MinHashError> {
        if sig.values.len() != self.num_hashes {
            return Err(MinHashError::LengthMismatch(sig.values.len(), self.num_hashes));
        }
        let mut hits = BTreeSet::new();
        for (band, table) in self.tables.iter().enumerate() {
            let digest = band_digest(&sig.values[band * self.rows..(band + 1) * self.rows], band);
            if let Some(indices) = table.get(&digest) {
                hits.extend(indices.iter().copied());
            }
        }
        Ok(hits.into_iter().collect())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn band_digest(rows: &[u64], band: usize) -> u64 {
    let mut acc = mix(band as u64 ^ 0x9e37_79b9_7f4a_7c15);
    for &v in rows {
        acc = mix(acc ^ v);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(words: &str, k: usize) -> BTreeSet<String> {
        shingle(words, k)
    }

    #[test]
    fn shingle_counts_match_window_arithmetic() {
        assert_eq!(set("one two three four five", 5).len(), 1);
        assert_eq!(set("a b c d e f g", 5).len(), 3);
        assert_eq!(set("short text", 5).len(), 1);
        assert!(set("", 5).is_empty());
        // duplicates collapse
        assert_eq!(set("x y x y x y", 2).len(), 2);
    }

    #[test]
    fn identical_texts_identical_signatures() {
        let family = HashFamily::new(42, 128);
        let a = minhash_signature(&family, &set("the quick brown fox jumps over", 5), 5, "a")
            .unwrap();
        let b = minhash_signature(&family, &set("the quick brown fox jumps over", 5), 5, "b")
            .unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(estimate_jaccard(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn empty_shingle_set_is_an_error() {
        let family = HashFamily::new(42, 128);
        assert_eq!(
            minhash_signature(&family, &BTreeSet::new(), 5, "x").unwrap_err(),
            MinHashError::EmptyShingleSet
        );
    }

    #[test]
    fn family_mismatch_is_an_error() {
        let f1 = HashFamily::new(1, 16);
        let f2 = HashFamily::new(2, 16);
        let s = set("a b c d e f", 3);
        let a = minhash_signature(&f1, &s, 3, "a").unwrap();
        let b = minhash_signature(&f2, &s, 3, "b").unwrap();
        assert!(matches!(
            estimate_jaccard(&a, &b),
            Err(MinHashError::FamilyMismatch(1, 2))
        ));
    }

    #[test]
    fn disjoint_docs_estimate_near_zero() {
        let family = HashFamily::new(7, 128);
        let a = minhash_signature(&family, &set("alpha beta gamma delta epsilon zeta", 3), 3, "a")
            .unwrap();
        let b = minhash_signature(&family, &set("one two three four five six seven", 3), 3, "b")
            .unwrap();
        assert!(estimate_jaccard(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn band_layout_must_cover_hashes() {
        let family = HashFamily::new(3, 128);
        let sig = minhash_signature(&family, &set("a b c d e f g h", 3), 3, "a").unwrap();
        assert!(matches!(
            LshIndex::build(&[sig], 3, 4),
            Err(MinHashError::BandLayout { .. })
        ));
    }

    #[test]
    fn verbatim_copy_is_retrieved() {
        let family = HashFamily::new(11, 128);
        let bench = minhash_signature(
            &family,
            &set("compute the link budget for a 5 km hop at 2 ghz", 5),
            5,
            "bench",
        )
        .unwrap();
        let index = LshIndex::build(std::slice::from_ref(&bench), 32, 4).unwrap();
        let copy = minhash_signature(
            &family,
            &set("compute the link budget for a 5 km hop at 2 ghz", 5),
            5,
            "copy",
        )
        .unwrap();
        assert_eq!(index.candidates(&copy).unwrap(), vec![0]);
        let unrelated = minhash_signature(
            &family,
            &set("a completely different question about queueing theory", 5),
            5,
            "other",
        )
        .unwrap();
        assert!(index.candidates(&unrelated).unwrap().is_empty());
    }
}
