use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::text::TokenSeq;

/// Exponent applied to raw counts for the negative-sampling noise
/// distribution.
pub const NOISE_POWER: f64 = 0.75;

/// Pruned vocabulary with exact counts and a noise distribution for
/// negative sampling.
///
/// Entries are ordered by descending count, ties broken lexicographically,
/// so indices are stable for a given corpus.
#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    min_count: u64,
    total: u64,
    cumulative: Vec<f64>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.counts == other.counts && self.min_count == other.min_count
    }
}

impl Vocab {
    pub fn build<'a, I>(docs: I, min_count: u64) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a TokenSeq>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            for tok in doc.iter() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Config("cannot build a vocabulary from zero documents".into()));
        }
        let entries = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        Self::from_counts(entries, min_count)
    }

    /// Rebuild from `(token, count)` pairs, e.g. when loading a model.
    pub fn from_counts(mut entries: Vec<(String, u64)>, min_count: u64) -> Result<Vocab> {
        if entries.is_empty() {
            return Err(Error::Config(format!(
                "vocabulary is empty after pruning at min_count={min_count}"
            )));
        }
        if let Some((w, c)) = entries.iter().find(|(_, c)| *c < min_count) {
            return Err(Error::Config(format!(
                "token {w:?} has count {c} below min_count {min_count}"
            )));
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut cumulative = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for (_, c) in &entries {
            acc += (*c as f64).powf(NOISE_POWER);
            cumulative.push(acc);
        }
        let (words, counts): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let total = counts.iter().sum();
        Ok(Vocab {
            words,
            counts,
            index,
            min_count,
            total,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(String::as_str).zip(self.counts.iter().copied())
    }

    /// In-vocabulary indices of `tokens`, in order.
    pub fn lookup(&self, tokens: &TokenSeq) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.get(t)).collect()
    }

    /// Probability of drawing `idx` as a negative sample.
    pub fn noise_prob(&self, idx: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        (self.counts[idx] as f64).powf(NOISE_POWER) / total
    }

    pub fn sample_negative<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let r = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.words.len() - 1)
    }

    /// Probability of keeping one occurrence of `idx` under frequent-word
    /// subsampling with threshold `sample` (0 disables subsampling).
    pub fn keep_prob(&self, idx: usize, sample: f64) -> f64 {
        if sample <= 0.0 {
            return 1.0;
        }
        let threshold = sample * self.total as f64;
        let c = self.counts[idx] as f64;
        ((c / threshold).sqrt() + 1.0) * threshold / c
    }
}
