use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::BenchError;

/// Code points the subject string draws from: two- and three-byte UTF-8,
/// below the surrogate range.
const POOL: std::ops::Range<u32> = 0x100..0xD800;

pub const MAX_ALPHABET: usize = (POOL.end - POOL.start) as usize;

/// Every contiguous substring of a string of `n` distinct characters,
/// the empty string included.
///
/// Substrings borrow from the encoded subject, so a large alphabet costs
/// one string plus an offset table rather than a quadratic number of
/// allocations.
#[derive(Clone, Debug)]
pub struct SubstringWorkload {
    subject: String,
    /// Byte offset of each character, plus the total length.
    offsets: Vec<usize>,
}

impl SubstringWorkload {
    pub fn new(n: usize, seed: u64) -> Result<Self, BenchError> {
        if n == 0 || n > MAX_ALPHABET {
            return Err(BenchError::Config(format!(
                "alphabet size must be in 1..={MAX_ALPHABET}, got {n}"
            )));
        }
        let mut pool: Vec<char> = POOL.filter_map(char::from_u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        let subject: String = pool[..n].iter().collect();
        let mut offsets: Vec<usize> = subject.char_indices().map(|(i, _)| i).collect();
        offsets.push(subject.len());
        Ok(Self { subject, offsets })
    }

    pub fn alphabet(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    /// Number of strings, which is also the number of distinct strings.
    pub fn len(&self) -> usize {
        expected_unique(self.alphabet())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The empty string first, then substrings by start and length.
    pub fn iter(&self) -> impl Iterator<Item = &[u8]> + '_ {
        let n = self.alphabet();
        let bytes = self.subject.as_bytes();
        std::iter::once(&bytes[..0]).chain((0..n).flat_map(move |i| {
            (i + 1..=n).map(move |j| &bytes[self.offsets[i]..self.offsets[j]])
        }))
    }

    /// The `k`-th string in [`iter`](Self::iter) order.
    pub fn get(&self, k: usize) -> Option<&[u8]> {
        let n = self.alphabet();
        if k >= self.len() {
            return None;
        }
        if k == 0 {
            return Some(&self.subject.as_bytes()[..0]);
        }
        // row i holds n - i strings
        let mut rest = k - 1;
        let mut i = 0;
        while rest >= n - i {
            rest -= n - i;
            i += 1;
        }
        let j = i + 1 + rest;
        Some(&self.subject.as_bytes()[self.offsets[i]..self.offsets[j]])
    }
}

/// `n(n+1)/2 + 1`: the non-empty substrings of `n` distinct characters plus
/// the empty string.
pub fn expected_unique(n: usize) -> usize {
    n * (n + 1) / 2 + 1
}

/// Owned copy of the workload for alphabet `n` and `seed`.
pub fn substring_workload(n: usize, seed: u64) -> Result<Vec<Vec<u8>>, BenchError> {
    Ok(SubstringWorkload::new(n, seed)?.iter().map(<[u8]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Brute force over every (start, end) pair of a char vector.
    fn brute_unique(n: usize, seed: u64) -> HashSet<String> {
        let w = SubstringWorkload::new(n, seed).unwrap();
        let chars: Vec<char> = w.subject().chars().collect();
        let mut out = HashSet::new();
        for i in 0..=chars.len() {
            for j in i..=chars.len() {
                out.insert(chars[i..j].iter().collect());
            }
        }
        out
    }

    #[test]
    fn three_characters() {
        let w = substring_workload(3, 0).unwrap();
        assert_eq!(w.len(), 7);
        let subject = SubstringWorkload::new(3, 0).unwrap().subject().to_owned();
        let c: Vec<String> = subject.chars().map(String::from).collect();
        let expected: HashSet<Vec<u8>> = [
            String::new(),
            c[0].clone(),
            c[1].clone(),
            c[2].clone(),
            format!("{}{}", c[0], c[1]),
            format!("{}{}", c[1], c[2]),
            subject.clone(),
        ]
        .into_iter()
        .map(String::into_bytes)
        .collect();
        assert_eq!(w.into_iter().collect::<HashSet<_>>(), expected);
    }

    #[test]
    fn formula_matches_brute_force() {
        for n in 1..=50 {
            let w = substring_workload(n, n as u64).unwrap();
            let brute = brute_unique(n, n as u64);
            assert_eq!(brute.len(), expected_unique(n), "n={n}");
            assert_eq!(w.len(), brute.len());
            let ours: HashSet<Vec<u8>> = w.into_iter().collect();
            let brute: HashSet<Vec<u8>> = brute.into_iter().map(String::into_bytes).collect();
            assert_eq!(ours, brute);
        }
    }

    #[test]
    fn thousand_characters() {
        let w = SubstringWorkload::new(1000, 42).unwrap();
        assert_eq!(w.len(), 500_501);
        assert_eq!(w.iter().count(), 500_501);
    }

    #[test]
    fn characters_are_distinct() {
        let w = SubstringWorkload::new(5000, 9).unwrap();
        let set: HashSet<char> = w.subject().chars().collect();
        assert_eq!(set.len(), 5000);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(substring_workload(40, 42).unwrap(), substring_workload(40, 42).unwrap());
        assert_ne!(substring_workload(40, 42).unwrap(), substring_workload(40, 43).unwrap());
    }

    #[test]
    fn get_matches_iter() {
        let w = SubstringWorkload::new(17, 3).unwrap();
        for (k, s) in w.iter().enumerate() {
            assert_eq!(w.get(k), Some(s));
        }
        assert_eq!(w.get(w.len()), None);
    }

    #[test]
    fn rejects_bad_alphabet() {
        assert!(matches!(SubstringWorkload::new(0, 1), Err(BenchError::Config(_))));
        assert!(SubstringWorkload::new(MAX_ALPHABET, 1).is_ok());
        assert!(SubstringWorkload::new(MAX_ALPHABET + 1, 1).is_err());
    }
}
