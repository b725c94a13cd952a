//! Tweet records, corpus ingestion and the balanced set samplers.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Provenance group of a tweet's author account.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Hate,
    Counter,
    Unlabeled,
}

impl Group {
    pub fn tag(self) -> &'static str {
        match self {
            Group::Hate => "Hate",
            Group::Counter => "Counter",
            Group::Unlabeled => "Unlabeled",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tweet {
    pub id: String,
    pub author_id: String,
    pub group: Group,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

impl Tweet {
    /// Free-standing tweet for scoring: no author, unlabeled, epoch timestamp.
    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>) -> Self {
        Tweet {
            id: id.into(),
            author_id: String::new(),
            group: Group::Unlabeled,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            text: text.into(),
        }
    }
}

/// Immutable id-indexed tweet collection.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    tweets: Vec<Tweet>,
    by_id: HashMap<String, usize>,
    hate: Vec<usize>,
    counter: Vec<usize>,
}

impl Corpus {
    pub fn from_tweets(tweets: impl IntoIterator<Item = Tweet>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for tweet in tweets {
            corpus.push(tweet)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, tweet: Tweet) -> Result<()> {
        if self.by_id.contains_key(&tweet.id) {
            return Err(Error::Duplicate(tweet.id));
        }
        let idx = self.tweets.len();
        match tweet.group {
            Group::Hate => self.hate.push(idx),
            Group::Counter => self.counter.push(idx),
            Group::Unlabeled => {}
        }
        self.by_id.insert(tweet.id.clone(), idx);
        self.tweets.push(tweet);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.by_id.get(id).map(|&i| &self.tweets[i])
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    /// Tweets of one labeled group in ingestion order.
    pub fn group(&self, group: Group) -> impl Iterator<Item = &Tweet> {
        let idx: &[usize] = match group {
            Group::Hate => &self.hate,
            Group::Counter => &self.counter,
            Group::Unlabeled => &[],
        };
        idx.iter().map(|&i| &self.tweets[i])
    }

    pub fn group_len(&self, group: Group) -> usize {
        match group {
            Group::Hate => self.hate.len(),
            Group::Counter => self.counter.len(),
            Group::Unlabeled => self.tweets.len() - self.hate.len() - self.counter.len(),
        }
    }
}

/// Parse line-delimited JSON tweet records. Blank lines are skipped.
pub fn ingest_tweets(reader: impl BufRead) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let tweet: Tweet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        corpus.push(tweet)?;
    }
    Ok(corpus)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_tweets(BufReader::new(file))
}

pub fn write_tweets<'a>(path: impl AsRef<Path>, tweets: impl IntoIterator<Item = &'a Tweet>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for tweet in tweets {
        serde_json::to_writer(&mut out, tweet).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Balanced sample of tweet ids: `per_class` Hate and `per_class` Counter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSet {
    pub index: usize,
    pub per_class: usize,
    pub hate: BTreeSet<String>,
    pub counter: BTreeSet<String>,
}

/// One training set 𝒯_in of an expert.
pub type TrainingSet = BalancedSet;
/// Out-of-sample evaluation set 𝒯_out, disjoint from its training set.
pub type TestSet = BalancedSet;

impl BalancedSet {
    pub fn len(&self) -> usize {
        self.hate.len() + self.counter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.hate.contains(id) || self.counter.contains(id)
    }

    /// Ids in a fixed order: all Hate ids, then all Counter ids.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hate.iter().chain(self.counter.iter()).map(String::as_str)
    }

    pub fn is_balanced(&self) -> bool {
        self.hate.len() == self.per_class && self.counter.len() == self.per_class
    }

    pub fn is_disjoint(&self, other: &BalancedSet) -> bool {
        self.ids().all(|id| !other.contains(id))
    }

    /// Content hash over the class-tagged ids.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        for (tag, ids) in [(b'h', &self.hate), (b'c', &self.counter)] {
            for id in ids {
                h.update([tag]);
                h.update(id.as_bytes());
                h.update([0]);
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Stable per-stream seed from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64, salt: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_SALT: u64 = 0x0074_7261_696e;
const TEST_SALT: u64 = 0x7465_7374;

fn sample_group(
    corpus: &Corpus,
    group: Group,
    exclude: &dyn Fn(&str) -> bool,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<String>> {
    let pool: Vec<&str> = corpus
        .group(group)
        .map(|t| t.id.as_str())
        .filter(|id| !exclude(id))
        .collect();
    if pool.len() < n {
        return Err(Error::Capacity {
            what: format!("{} pool", group.tag()),
            required: n,
            available: pool.len(),
        });
    }
    Ok(sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].to_string())
        .collect())
}

/// `k` balanced training sets drawn independently; overlap between sets is
/// whatever the pool size implies.
pub fn build_training_sets(
    corpus: &Corpus,
    k: usize,
    per_class: usize,
    seed: u64,
) -> Result<Vec<TrainingSet>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, TRAIN_SALT));
            let none = |_: &str| false;
            let hate = sample_group(corpus, Group::Hate, &none, per_class, &mut rng)?;
            let counter = sample_group(corpus, Group::Counter, &none, per_class, &mut rng)?;
            Ok(BalancedSet {
                index: i,
                per_class,
                hate,
                counter,
            })
        })
        .collect()
}

/// Balanced test set disjoint from `train`.
pub fn build_test_set(
    corpus: &Corpus,
    train: &TrainingSet,
    per_class: usize,
    seed: u64,
) -> Result<TestSet> {
    build_test_set_excluding(corpus, train.index, &[train], per_class, seed)
}

/// Balanced test set disjoint from every set in `exclude`. Used for a shared
/// hold-out set that no expert has trained on.
pub fn build_test_set_excluding(
    corpus: &Corpus,
    index: usize,
    exclude: &[&BalancedSet],
    per_class: usize,
    seed: u64,
) -> Result<TestSet> {
    let excluded: HashSet<&str> = exclude.iter().flat_map(|s| s.ids()).collect();
    let skip = |id: &str| excluded.contains(id);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64, TEST_SALT));
    let hate = sample_group(corpus, Group::Hate, &skip, per_class, &mut rng)?;
    let counter = sample_group(corpus, Group::Counter, &skip, per_class, &mut rng)?;
    Ok(BalancedSet {
        index,
        per_class,
        hate,
        counter,
    })
}

/// How each training document is tagged for the paragraph-vector model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocLabelScheme {
    Unique,
    Author,
    Group,
    AuthorGroup,
    UniqueGroup,
}

impl DocLabelScheme {
    pub const ALL: [DocLabelScheme; 5] = [
        DocLabelScheme::Unique,
        DocLabelScheme::Author,
        DocLabelScheme::Group,
        DocLabelScheme::AuthorGroup,
        DocLabelScheme::UniqueGroup,
    ];

    pub fn uses_group(self) -> bool {
        matches!(
            self,
            DocLabelScheme::Group | DocLabelScheme::AuthorGroup | DocLabelScheme::UniqueGroup
        )
    }

    pub fn tags_per_doc(self) -> usize {
        match self {
            DocLabelScheme::AuthorGroup | DocLabelScheme::UniqueGroup => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocLabelScheme::Unique => "unique",
            DocLabelScheme::Author => "author",
            DocLabelScheme::Group => "group",
            DocLabelScheme::AuthorGroup => "author_group",
            DocLabelScheme::UniqueGroup => "unique_group",
        }
    }
}

impl FromStr for DocLabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown document label scheme {s:?}")))
    }
}

pub fn doc_tags(tweet: &Tweet, scheme: DocLabelScheme) -> Result<Vec<String>> {
    if scheme.uses_group() && tweet.group == Group::Unlabeled {
        return Err(Error::Label(format!(
            "tweet {} is unlabeled but scheme {} needs a group",
            tweet.id,
            scheme.as_str()
        )));
    }
    let group = tweet.group.tag().to_string();
    Ok(match scheme {
        DocLabelScheme::Unique => vec![tweet.id.clone()],
        DocLabelScheme::Author => vec![tweet.author_id.clone()],
        DocLabelScheme::Group => vec![group],
        DocLabelScheme::AuthorGroup => vec![tweet.author_id.clone(), group],
        DocLabelScheme::UniqueGroup => vec![tweet.id.clone(), group],
    })
}
