//! Synthetic two-group corpora and reply trees.
//!
//! Each group draws content words from its own Zipf-ranked vocabulary. The
//! `overlap` fraction ρ of each vocabulary is shared (the shared words take
//! the top ranks in both groups), so ρ=0 gives disjoint vocabularies and ρ=1
//! identical word distributions. A fraction of every document is shared
//! stop words, and some tweets carry mentions, hashtags or URLs so the
//! normalizer has something to strip.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convo::{NodeRecord, TreeRecord};
use crate::corpus::{derive_seed, Group, Tweet};
use crate::error::{Error, Result};
use crate::text::StopList;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub per_class: usize,
    /// Shared fraction ρ of each group's vocabulary.
    pub overlap: f64,
    pub vocab_per_group: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a shared stop word.
    pub stop_rate: f64,
    pub authors_per_group: usize,
    /// Probability of decorating a tweet with a mention, hashtag or URL.
    pub noise_rate: f64,
    pub start: DateTime<Utc>,
    pub days: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 5000,
            overlap: 0.0,
            vocab_per_group: 400,
            zipf_exponent: 1.0,
            min_len: 6,
            max_len: 18,
            stop_rate: 0.25,
            authors_per_group: 100,
            noise_rate: 0.2,
            start: Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            days: 365,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.overlap) {
            return err(format!("overlap must lie in [0, 1], got {}", self.overlap));
        }
        if !(0.0..=1.0).contains(&self.stop_rate) || !(0.0..=1.0).contains(&self.noise_rate) {
            return err("stop_rate and noise_rate must lie in [0, 1]".into());
        }
        if self.vocab_per_group == 0 || self.authors_per_group == 0 {
            return err("vocab_per_group and authors_per_group must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return err(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return err(format!("zipf exponent must be finite and >= 0, got {}", self.zipf_exponent));
        }
        if self.days == 0 {
            return err("days must be positive".into());
        }
        Ok(())
    }
}

/// Word pools and samplers derived from a [`SynthConfig`].
pub struct Generator {
    config: SynthConfig,
    hate_words: Vec<String>,
    counter_words: Vec<String>,
    zipf: WeightedIndex<f64>,
    stop_words: Vec<String>,
}

/// Pronounceable, punctuation-free pseudo-word for index `i`.
fn word(i: usize) -> String {
    const ON: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const NU: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut s = String::new();
    let mut n = i;
    loop {
        s.push_str(ON[n % ON.len()]);
        n /= ON.len();
        s.push_str(NU[n % NU.len()]);
        n /= NU.len();
        if n == 0 {
            break;
        }
    }
    s + "x"
}

impl Generator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let v = config.vocab_per_group;
        let shared = (config.overlap * v as f64).round() as usize;
        let hate_words: Vec<String> = (0..v).map(word).collect();
        let counter_words: Vec<String> = (0..shared).chain(v..2 * v - shared).map(word).collect();
        let weights = (1..=v).map(|r| (r as f64).powf(-config.zipf_exponent));
        let zipf = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Generator {
            config,
            hate_words,
            counter_words,
            zipf,
            stop_words: StopList::light().words.into_iter().collect(),
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Content vocabulary of one group, in rank order.
    pub fn vocabulary(&self, group: Group) -> &[String] {
        match group {
            Group::Counter => &self.counter_words,
            _ => &self.hate_words,
        }
    }

    /// Text of one document. `Unlabeled` mixes both vocabularies evenly.
    pub fn text(&self, group: Group, rng: &mut impl Rng) -> String {
        let len = rng.gen_range(self.config.min_len..=self.config.max_len);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(self.config.stop_rate) {
                    return self.stop_words.choose(rng).unwrap().clone();
                }
                let pool = match group {
                    Group::Unlabeled if rng.gen_bool(0.5) => &self.counter_words,
                    Group::Unlabeled => &self.hate_words,
                    g => self.vocabulary(g),
                };
                pool[self.zipf.sample(rng)].clone()
            })
            .collect();
        if rng.gen_bool(self.config.noise_rate) {
            match rng.gen_range(0..3) {
                0 => tokens.insert(0, format!("@user{}", rng.gen_range(0..1000))),
                1 => tokens.push(format!("#{}", tokens[0])),
                _ => tokens.push(format!("https://t.co/{:08x}", rng.gen::<u32>())),
            }
        }
        if rng.gen_bool(0.3) {
            if tokens[0].starts_with(|c: char| c.is_ascii_lowercase()) {
                tokens[0][..1].make_ascii_uppercase();
            }
            let last = tokens.len() - 1;
            tokens[last].push_str(["!", ".", "?", ","][rng.gen_range(0..4)]);
        }
        tokens.join(" ")
    }

    fn timestamp(&self, rng: &mut impl Rng) -> DateTime<Utc> {
        let secs = rng.gen_range(0..i64::from(self.config.days) * 86_400);
        self.config.start + Duration::seconds(secs)
    }

    /// `per_class` hate tweets followed by `per_class` counter tweets.
    pub fn corpus(&self) -> Vec<Tweet> {
        let mut out = Vec::with_capacity(2 * self.config.per_class);
        for (stream, group) in [(0, Group::Hate), (1, Group::Counter)] {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, stream, 0x5EED));
            let prefix = if group == Group::Hate { 'h' } else { 'c' };
            for i in 0..self.config.per_class {
                out.push(Tweet {
                    id: format!("{prefix}{i:07}"),
                    author_id: format!("{prefix}a{}", rng.gen_range(0..self.config.authors_per_group)),
                    group,
                    timestamp: self.timestamp(&mut rng),
                    text: self.text(group, &mut rng),
                });
            }
        }
        out
    }

    /// Reply trees whose nodes are hate-like, counter-like or mixed with the
    /// given probabilities (mixed takes the remainder).
    pub fn trees(&self, cfg: &TreeSynthConfig) -> Result<Vec<TreeRecord>> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, 2, cfg.seed));
        let kinds = WeightedIndex::new([cfg.p_hate, cfg.p_counter, 1.0 - cfg.p_hate - cfg.p_counter])
            .map_err(|e| Error::Config(e.to_string()))?;
        let groups = [Group::Hate, Group::Counter, Group::Unlabeled];
        Ok((0..cfg.n_trees)
            .map(|t| {
                let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
                let root_ts = self.timestamp(&mut rng);
                let mut nodes: Vec<NodeRecord> = Vec::with_capacity(n);
                for i in 0..n {
                    let parent = (i > 0).then(|| rng.gen_range(0..i));
                    let ts = match parent {
                        None => root_ts,
                        Some(p) => nodes[p].timestamp + Duration::minutes(rng.gen_range(1..600)),
                    };
                    let group = groups[kinds.sample(&mut rng)];
                    nodes.push(NodeRecord {
                        id: format!("t{t}n{i}"),
                        author_id: format!("ta{}", rng.gen_range(0..cfg.authors)),
                        timestamp: ts,
                        text: self.text(group, &mut rng),
                        parent_id: parent.map(|p| format!("t{t}n{p}")),
                    });
                }
                TreeRecord {
                    tree_id: format!("tree{t}"),
                    nodes,
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSynthConfig {
    pub n_trees: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub p_hate: f64,
    pub p_counter: f64,
    pub authors: usize,
    pub seed: u64,
}

impl Default for TreeSynthConfig {
    fn default() -> Self {
        TreeSynthConfig {
            n_trees: 50,
            min_nodes: 20,
            max_nodes: 80,
            p_hate: 0.4,
            p_counter: 0.4,
            authors: 200,
            seed: 0,
        }
    }
}

impl TreeSynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes || self.authors == 0 {
            return Err(Error::Config("invalid tree size or author count".into()));
        }
        if self.p_hate < 0.0 || self.p_counter < 0.0 || self.p_hate + self.p_counter > 1.0 {
            return Err(Error::Config("p_hate and p_counter must be >= 0 and sum to <= 1".into()));
        }
        Ok(())
    }
}

pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<Tweet>> {
    Ok(Generator::new(config.clone())?.corpus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convo::ReplyTree;
    use crate::text::{normalize, preprocess};
    use std::collections::BTreeSet;

    fn small(overlap: f64) -> SynthConfig {
        SynthConfig {
            per_class: 200,
            overlap,
            vocab_per_group: 100,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    fn content(tweets: &[Tweet], group: Group) -> BTreeSet<String> {
        let stop = StopList::light();
        tweets
            .iter()
            .filter(|t| t.group == group)
            .flat_map(|t| preprocess(&t.text, &stop).0)
            .collect()
    }

    #[test]
    fn overlap_controls_shared_vocabulary() {
        let disjoint = synth_corpus(&small(0.0)).unwrap();
        assert!(content(&disjoint, Group::Hate).is_disjoint(&content(&disjoint, Group::Counter)));

        let g = Generator::new(small(0.5)).unwrap();
        let a: BTreeSet<_> = g.vocabulary(Group::Hate).iter().collect();
        let b: BTreeSet<_> = g.vocabulary(Group::Counter).iter().collect();
        assert_eq!(a.intersection(&b).count(), 50);

        let g = Generator::new(small(1.0)).unwrap();
        assert_eq!(g.vocabulary(Group::Hate), g.vocabulary(Group::Counter));
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_corpus(&small(0.3)).unwrap();
        assert_eq!(a, synth_corpus(&small(0.3)).unwrap());
        assert_ne!(a, synth_corpus(&SynthConfig { seed: 6, ..small(0.3) }).unwrap());
        assert_eq!(a.iter().filter(|t| t.group == Group::Hate).count(), 200);
        assert_eq!(a.iter().filter(|t| t.group == Group::Counter).count(), 200);
    }

    #[test]
    fn words_survive_normalization() {
        for i in [0, 7, 59, 60, 61, 3999] {
            let w = word(i);
            assert_eq!(normalize(&w).0, vec![w.clone()]);
        }
        let distinct: BTreeSet<String> = (0..5000).map(word).collect();
        assert_eq!(distinct.len(), 5000);
    }

    #[test]
    fn invalid_overlap_rejected() {
        for rho in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(Generator::new(small(rho)), Err(Error::Config(_))));
        }
    }

    #[test]
    fn trees_are_valid_and_deterministic() {
        let g = Generator::new(small(0.0)).unwrap();
        let cfg = TreeSynthConfig {
            n_trees: 10,
            ..TreeSynthConfig::default()
        };
        let trees = g.trees(&cfg).unwrap();
        assert_eq!(trees, g.trees(&cfg).unwrap());
        for t in trees {
            let tree = ReplyTree::from_record(t).unwrap();
            for n in tree.nodes() {
                if let Some(p) = tree.parent_of(&n.id) {
                    assert!(p.timestamp < n.timestamp);
                }
            }
        }
        assert!(g
            .trees(&TreeSynthConfig {
                p_hate: 0.8,
                p_counter: 0.4,
                ..cfg
            })
            .is_err());
    }
}
