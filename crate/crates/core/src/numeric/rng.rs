//! Labelled, splittable deterministic random streams.
//!
//! A stream is identified by `(seed, label)`. Its key is the SHA-256 of the
//! little-endian seed followed by the UTF-8 label, which seeds a ChaCha8
//! generator. Child streams hash the parent's label with a `/`-separated
//! suffix, so drawing from one stream never shifts another.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            seed,
            label,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent stream named `<label>/<child>`.
    pub fn child(&self, child: impl AsRef<str>) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, child.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::Domain(format!("uniform range [{lo}, {hi}) is empty")));
        }
        Ok(self.inner.random_range(lo..hi))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in the inclusive range.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // p outside [0, 1] is clamped; exact endpoints never misfire.
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.unit() < p
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut self.inner);
        p
    }

    /// `m` distinct indices from `0..n` minus `exclude`, uniform without
    /// replacement, in draw order.
    pub fn choice(&mut self, n: usize, m: usize, exclude: &[usize]) -> Result<Vec<usize>> {
        let allowed: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
        if m > allowed.len() {
            return Err(Error::Domain(format!(
                "cannot choose {m} distinct indices from {} available",
                allowed.len()
            )));
        }
        Ok(index::sample(&mut self.inner, allowed.len(), m)
            .into_iter()
            .map(|i| allowed[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn same_seed_and_label_reproduce() {
        let mut a = SeededRng::new(7, "mask");
        let mut b = SeededRng::new(7, "mask");
        let xs: Vec<f64> = (0..16).map(|_| a.unit()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.unit()).collect();
        assert_eq!(xs, ys);
        let mut c = SeededRng::new(7, "noise");
        assert_ne!(xs[0], c.unit());
    }

    #[test]
    fn child_streams_ignore_sibling_draws() {
        let root = SeededRng::new(3, "root");
        let mut a1 = root.child("a");
        let first: Vec<f64> = (0..4).map(|_| a1.unit()).collect();

        let mut b = root.child("b");
        for _ in 0..100 {
            b.unit();
        }
        let mut a2 = root.child("a");
        let again: Vec<f64> = (0..4).map(|_| a2.unit()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let mut r = SeededRng::new(0, "u");
        assert!(r.uniform(1.0, 1.0).is_err());
        let x = r.uniform(-2.0, 3.0).unwrap();
        assert!((-2.0..3.0).contains(&x));
    }

    #[test]
    fn permutation_of_one() {
        let mut r = SeededRng::new(11, "p");
        assert_eq!(r.permutation(1), vec![0]);
    }

    #[test]
    fn exhaustive_choice() {
        let mut r = SeededRng::new(5, "c");
        let mut got = r.choice(5, 5, &[]).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
        assert!(r.choice(5, 5, &[2]).is_err());
        let some = r.choice(5, 4, &[2]).unwrap();
        assert!(!some.contains(&2));
    }

    #[test]
    fn permutations_of_three_are_uniform() {
        let mut r = SeededRng::new(2024, "perm3");
        let draws = 60_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(r.permutation(3)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (perm, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.05 / 6.0,
                "permutation {perm:?} frequency {freq}"
            );
        }
    }
}
