//! Experts and the panel that averages them.
//!
//! A panel scores a tweet as the mean of its experts' p(Hate), skipping any
//! expert whose training set contains the tweet, and labels it only when the
//! averaged score clears the confidence threshold γ.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{BinReader, BinWriter};
use crate::corpus::{doc_tags, BalancedSet, Corpus, Group, Tweet};
use crate::embed::{read_model, write_model, EmbedConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::eval;
use crate::linear::{fit, Class, FitOptions, HypothesisFunction, LabeledMatrix};
use crate::text::{preprocess, StopLevel, StopList, TokenSeq};

pub const EXPERT_MAGIC: &[u8; 8] = b"SPPVEXPT";
pub const EXPERT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// Hate/counter label assigned by the panel; `Neutral` means abstention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeechLabel {
    Hate,
    Counter,
    Neutral,
}

/// Averaged panel score of one tweet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub s_hate: f64,
    pub s_counter: f64,
    pub voters: usize,
}

impl Score {
    pub fn from_hate(s_hate: f64, voters: usize) -> Self {
        Score {
            s_hate,
            s_counter: 1.0 - s_hate,
            voters,
        }
    }

    /// Strict-threshold decision: a side wins only when its score exceeds γ.
    pub fn label(&self, gamma: f64) -> SpeechLabel {
        if self.s_hate > gamma {
            SpeechLabel::Hate
        } else if self.s_counter > gamma {
            SpeechLabel::Counter
        } else {
            SpeechLabel::Neutral
        }
    }
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if (0.5..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in [0.5, 1], got {gamma}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertProb {
    pub p_hate: f64,
    /// None of the tweet's tokens were known to the embedding.
    pub low_confidence: bool,
}

/// Anything that can vote on a tweet.
pub trait Voter: Send + Sync {
    fn prob_hate(&self, tweet: &Tweet) -> Result<ExpertProb>;
    fn trained_on(&self, tweet_id: &str) -> bool;
    /// Individual F1 used for ranking.
    fn rank_score(&self) -> f64;
    /// Deterministic tie-breaker for ranking.
    fn fingerprint(&self) -> &str;
}

/// One (embedding, hypothesis) pair together with the ids it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Expert {
    pub id: String,
    pub embedding: EmbeddingModel,
    pub hypothesis: HypothesisFunction,
    pub stoplist: StopList,
    pub train_ids: BTreeSet<String>,
    pub f1: f64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ExpertHeader {
    id: String,
    f1: f64,
    fingerprint: String,
    stop_level: StopLevel,
    stop_words: Vec<String>,
    lambda: f64,
    intercept: f64,
}

impl Expert {
    pub fn new(
        id: impl Into<String>,
        embedding: EmbeddingModel,
        hypothesis: HypothesisFunction,
        stoplist: StopList,
        train_ids: BTreeSet<String>,
    ) -> Result<Self> {
        if embedding.dim() != hypothesis.dim() {
            return Err(Error::Shape {
                expected: embedding.dim(),
                got: hypothesis.dim(),
            });
        }
        if train_ids.is_empty() {
            return Err(Error::Config("expert needs a non-empty training set".into()));
        }
        Ok(Expert {
            id: id.into(),
            embedding,
            hypothesis,
            stoplist,
            train_ids,
            f1: 0.0,
            fingerprint: String::new(),
        })
    }

    pub fn tokens(&self, tweet: &Tweet) -> TokenSeq {
        preprocess(&tweet.text, &self.stoplist)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.write(Vec::new()).expect("writing to a Vec cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read(bytes)
    }

    /// Binary container: magic, version, JSON header, θ, training ids, then
    /// the embedded model.
    pub fn write<W: Write>(&self, out: W) -> Result<W> {
        let header = ExpertHeader {
            id: self.id.clone(),
            f1: self.f1,
            fingerprint: self.fingerprint.clone(),
            stop_level: self.stoplist.level,
            stop_words: self.stoplist.words.iter().cloned().collect(),
            lambda: self.hypothesis.lambda,
            intercept: self.hypothesis.intercept,
        };
        let mut w = BinWriter::new(out);
        w.bytes(EXPERT_MAGIC)?;
        w.u32(EXPERT_VERSION)?;
        w.str(&serde_json::to_string(&header).map_err(|e| Error::Serialization(e.to_string()))?)?;
        w.f64s(&self.hypothesis.theta)?;
        w.u64(self.train_ids.len() as u64)?;
        for id in &self.train_ids {
            w.str(id)?;
        }
        write_model(&self.embedding, w.into_inner())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = BinReader::new(input);
        r.magic(EXPERT_MAGIC)?;
        let version = r.u32()?;
        if version != EXPERT_VERSION {
            return Err(Error::Serialization(format!("unsupported expert version {version}")));
        }
        let header: ExpertHeader =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Serialization(e.to_string()))?;
        let theta = r.f64s()?;
        let n_ids = r.u64()? as usize;
        let mut train_ids = BTreeSet::new();
        for _ in 0..n_ids {
            train_ids.insert(r.str()?);
        }
        let embedding = read_model(r.into_inner())?;
        let stoplist = StopList {
            level: header.stop_level,
            words: header.stop_words.into_iter().collect(),
            source_path: None,
        };
        let hypothesis = HypothesisFunction {
            theta,
            intercept: header.intercept,
            lambda: header.lambda,
        };
        let mut expert = Expert::new(header.id, embedding, hypothesis, stoplist, train_ids)?;
        expert.f1 = header.f1;
        expert.fingerprint = header.fingerprint;
        Ok(expert)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = self.write(std::io::BufWriter::new(file))?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

impl Voter for Expert {
    fn prob_hate(&self, tweet: &Tweet) -> Result<ExpertProb> {
        let inferred = self.embedding.infer(&self.tokens(tweet));
        Ok(ExpertProb {
            p_hate: self.hypothesis.predict_proba_f32(&inferred.vector)?,
            low_confidence: inferred.low_confidence,
        })
    }

    fn trained_on(&self, tweet_id: &str) -> bool {
        self.train_ids.contains(tweet_id)
    }

    fn rank_score(&self) -> f64 {
        self.f1
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// p(Hate) that one expert assigns to a tweet.
pub fn expert_prob<V: Voter + ?Sized>(expert: &V, tweet: &Tweet) -> Result<ExpertProb> {
    expert.prob_hate(tweet)
}

/// Vote-accounting counters for the leakage guard.
#[derive(Debug, Default)]
pub struct VoteCounters {
    pub cast: AtomicU64,
    pub withheld: AtomicU64,
    /// Votes that entered a score although the expert trained on the tweet.
    /// Must stay zero.
    pub violations: AtomicU64,
}

impl VoteCounters {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.cast.load(Ordering::Relaxed),
            self.withheld.load(Ordering::Relaxed),
            self.violations.load(Ordering::Relaxed),
        )
    }
}

/// Ordered ensemble of experts with threshold γ.
pub struct Panel<V: Voter = Expert> {
    experts: Vec<Arc<V>>,
    gamma: f64,
    counters: VoteCounters,
}

impl<V: Voter> Panel<V> {
    pub fn new(experts: Vec<Arc<V>>, gamma: f64) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Config("a panel needs at least one expert".into()));
        }
        validate_gamma(gamma)?;
        Ok(Panel {
            experts,
            gamma,
            counters: VoteCounters::default(),
        })
    }

    pub fn experts(&self) -> &[Arc<V>] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        validate_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn counters(&self) -> &VoteCounters {
        &self.counters
    }

    fn reduce(&self, tweet: &Tweet, probs: Vec<Option<f64>>) -> Result<Score> {
        let mut sum = 0.0;
        let mut voters = 0;
        for (expert, p) in self.experts.iter().zip(probs) {
            match p {
                Some(p) => {
                    if expert.trained_on(&tweet.id) {
                        self.counters.violations.fetch_add(1, Ordering::Relaxed);
                    }
                    self.counters.cast.fetch_add(1, Ordering::Relaxed);
                    sum += p;
                    voters += 1;
                }
                None => {
                    self.counters.withheld.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        if voters == 0 {
            return Err(Error::Unscorable(tweet.id.clone()));
        }
        Ok(Score::from_hate(sum / voters as f64, voters))
    }

    fn vote(expert: &V, tweet: &Tweet) -> Result<Option<f64>> {
        if expert.trained_on(&tweet.id) {
            Ok(None)
        } else {
            expert.prob_hate(tweet).map(|p| Some(p.p_hate))
        }
    }

    /// Score one tweet, querying experts in parallel and reducing in panel
    /// order.
    pub fn score(&self, tweet: &Tweet) -> Result<Score> {
        let probs = self
            .experts
            .par_iter()
            .map(|e| Self::vote(e, tweet))
            .collect::<Result<Vec<_>>>()?;
        self.reduce(tweet, probs)
    }

    /// Score many tweets in parallel; results keep input order.
    pub fn score_many(&self, tweets: &[&Tweet]) -> Vec<Result<Score>> {
        tweets
            .par_iter()
            .map(|t| {
                let probs = self
                    .experts
                    .iter()
                    .map(|e| Self::vote(e, t))
                    .collect::<Result<Vec<_>>>()?;
                self.reduce(t, probs)
            })
            .collect()
    }

    pub fn classify(&self, tweet: &Tweet, gamma: f64) -> Result<SpeechLabel> {
        validate_gamma(gamma)?;
        Ok(self.score(tweet)?.label(gamma))
    }
}

/// Keep the `top_k` experts by individual F1 (ties broken by fingerprint).
pub fn build_panel<V: Voter>(experts: Vec<Arc<V>>, top_k: usize, gamma: f64) -> Result<Panel<V>> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if top_k > experts.len() {
        return Err(Error::Capacity {
            what: "experts".into(),
            required: top_k,
            available: experts.len(),
        });
    }
    let mut ranked = experts;
    rank_experts(&mut ranked);
    ranked.truncate(top_k);
    Panel::new(ranked, gamma)
}

pub fn rank_experts<V: Voter>(experts: &mut [Arc<V>]) {
    experts.sort_by(|a, b| {
        b.rank_score()
            .total_cmp(&a.rank_score())
            .then_with(|| a.fingerprint().cmp(b.fingerprint()))
    });
}

/// Everything needed to train one expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub embed: EmbedConfig,
    pub fit: FitOptions,
    pub stop_level: StopLevel,
}

impl ExpertSpec {
    /// Stable hash of the spec plus the training set index and seed.
    pub fn fingerprint(&self, set_index: usize, set_seed: u64) -> String {
        let json = serde_json::to_string(&(self, set_index, set_seed)).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn lookup<'c>(corpus: &'c Corpus, id: &str) -> Result<&'c Tweet> {
    corpus
        .get(id)
        .ok_or_else(|| Error::Config(format!("tweet {id} is not in the corpus")))
}

pub fn class_of(tweet: &Tweet) -> Result<Class> {
    match tweet.group {
        Group::Hate => Ok(Class::Hate),
        Group::Counter => Ok(Class::Counter),
        Group::Unlabeled => Err(Error::Label(format!("tweet {} has no group label", tweet.id))),
    }
}

/// Embedding trained on one training set together with the inferred
/// features of those same tweets, ready for fitting any number of λ values.
pub struct TrainedEmbedding {
    pub embedding: EmbeddingModel,
    pub stoplist: StopList,
    pub features: LabeledMatrix,
    pub train_ids: BTreeSet<String>,
}

/// Inferred feature vectors for labeled tweets, computed in parallel.
pub fn infer_features(
    embedding: &EmbeddingModel,
    stoplist: &StopList,
    tweets: &[&Tweet],
) -> Result<LabeledMatrix> {
    let tokens: Vec<TokenSeq> = tweets.par_iter().map(|t| preprocess(&t.text, stoplist)).collect();
    let features: Vec<Vec<f64>> = embedding
        .infer_many(&tokens)
        .into_iter()
        .map(|inf| inf.vector.iter().map(|&v| v as f64).collect())
        .collect();
    let labels = tweets.iter().map(|t| class_of(t)).collect::<Result<Vec<_>>>()?;
    LabeledMatrix::from_rows(&features, labels)
}

pub fn train_embedding(
    corpus: &Corpus,
    train: &BalancedSet,
    embed: &EmbedConfig,
    stoplist: &StopList,
) -> Result<TrainedEmbedding> {
    let tweets: Vec<&Tweet> = train.ids().map(|id| lookup(corpus, id)).collect::<Result<_>>()?;
    let docs: Vec<(Vec<String>, TokenSeq)> = tweets
        .par_iter()
        .map(|t| Ok((doc_tags(t, embed.scheme)?, preprocess(&t.text, stoplist))))
        .collect::<Result<_>>()?;
    let (embedding, stats) = EmbeddingModel::train(&docs, embed)?;
    log::debug!("embedding trained: {} updates, {} skipped", stats.updates, stats.skipped_docs);
    // Training features come from inference too, so train and test vectors
    // share one map.
    let features = infer_features(&embedding, stoplist, &tweets)?;
    Ok(TrainedEmbedding {
        embedding,
        stoplist: stoplist.clone(),
        features,
        train_ids: train.ids().map(str::to_string).collect(),
    })
}

pub fn fit_expert(
    trained: &TrainedEmbedding,
    fit_opts: &FitOptions,
    id: impl Into<String>,
    fingerprint: impl Into<String>,
) -> Result<Expert> {
    let (hypothesis, report) = fit(&trained.features, fit_opts)?;
    if !report.converged {
        log::warn!("expert hypothesis did not converge (|g|={:.2e})", report.grad_norm);
    }
    let mut expert = Expert::new(
        id,
        trained.embedding.clone(),
        hypothesis,
        trained.stoplist.clone(),
        trained.train_ids.clone(),
    )?;
    expert.fingerprint = fingerprint.into();
    Ok(expert)
}

/// Macro F1 at γ=½ of a hypothesis on precomputed features.
pub fn f1_on_features(hypothesis: &HypothesisFunction, data: &LabeledMatrix) -> Result<f64> {
    let truth: Vec<Class> = (0..data.n()).map(|i| data.label(i)).collect();
    let preds = (0..data.n())
        .map(|i| Ok(Score::from_hate(hypothesis.predict_proba(data.row(i))?, 1).label(0.5)))
        .collect::<Result<Vec<_>>>()?;
    let conf = eval::confusion(&truth, &preds)?;
    Ok(eval::macro_metrics(&conf).map(|m| m.f1).unwrap_or(0.0))
}

pub fn test_tweets<'c>(corpus: &'c Corpus, test: &BalancedSet) -> Result<Vec<&'c Tweet>> {
    test.ids().map(|id| lookup(corpus, id)).collect()
}

/// Train the embedding on `train`, fit the hypothesis on inferred vectors of
/// the same tweets, then record macro F1 at γ=½ on `test`.
pub fn train_expert(
    corpus: &Corpus,
    train: &BalancedSet,
    test: &BalancedSet,
    spec: &ExpertSpec,
    stoplist: &StopList,
    id: impl Into<String>,
    fingerprint: impl Into<String>,
) -> Result<Expert> {
    let trained = train_embedding(corpus, train, &spec.embed, stoplist)?;
    let mut expert = fit_expert(&trained, &spec.fit, id, fingerprint)?;
    let test_data = infer_features(&expert.embedding, stoplist, &test_tweets(corpus, test)?)?;
    expert.f1 = f1_on_features(&expert.hypothesis, &test_data)?;
    Ok(expert)
}

/// Panel manifest entry; `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub f1: f64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelManifest {
    pub version: u32,
    pub gamma: f64,
    pub experts: Vec<ManifestEntry>,
}

impl PanelManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: PanelManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Serialization(format!("unsupported manifest version {}", m.version)));
        }
        validate_gamma(m.gamma)?;
        Ok(m)
    }

    /// Load every referenced expert and build the panel in manifest order.
    pub fn load_panel(&self, manifest_path: impl AsRef<Path>, gamma: Option<f64>) -> Result<Panel> {
        let base = manifest_path.as_ref().parent().unwrap_or(Path::new("."));
        let experts = self
            .experts
            .iter()
            .map(|e| Expert::load(base.join(&e.path)).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Panel::new(experts, gamma.unwrap_or(self.gamma))
    }
}
