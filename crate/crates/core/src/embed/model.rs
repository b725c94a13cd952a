use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{axpy, ns_step, ns_step_frozen};
use super::vocab::Vocab;
use crate::corpus::{derive_seed, DocLabelScheme};
use crate::error::{Error, Result};
use crate::text::TokenSeq;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Distributed bag of words: tag vectors predict the document's words.
    PvDbow,
    /// Distributed memory: mean of context words and tags predicts the
    /// center word.
    PvDm,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::PvDbow => "pv-dbow",
            Algorithm::PvDm => "pv-dm",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pv-dbow" | "dbow" => Ok(Algorithm::PvDbow),
            "pv-dm" | "dm" => Ok(Algorithm::PvDm),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub lr_initial: f32,
    pub lr_min: f32,
    pub negative: usize,
    pub scheme: DocLabelScheme,
    pub seed: u64,
    /// Also train word vectors skip-gram style while running PV-DBOW.
    pub dbow_words: bool,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub sample: f64,
    pub infer_steps: usize,
    /// Training threads. Anything above 1 runs lock-free shared updates and
    /// gives up bitwise reproducibility.
    pub workers: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 300,
            window: 5,
            min_count: 10,
            algorithm: Algorithm::PvDbow,
            epochs: 20,
            lr_initial: 0.025,
            lr_min: 0.00025,
            negative: 5,
            scheme: DocLabelScheme::AuthorGroup,
            seed: 1,
            dbow_words: false,
            sample: 0.0,
            infer_steps: 50,
            workers: 1,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.negative == 0 {
            return fail("negative must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_initial) {
            return fail("learning rates must satisfy 0 < lr_min <= lr_initial");
        }
        if self.sample < 0.0 {
            return fail("sample threshold must be non-negative");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        Ok(())
    }
}

/// Linear learning-rate decay from `initial` to `min` over `total` updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f32,
    pub min: f32,
    pub total: usize,
}

impl LrSchedule {
    pub fn at(&self, update: usize) -> f32 {
        if self.total == 0 {
            return self.initial;
        }
        let frac = update as f64 / self.total as f64;
        let lr = self.initial as f64 - (self.initial as f64 - self.min as f64) * frac;
        (lr as f32).max(self.min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferParams {
    pub steps: usize,
    pub lr_initial: f32,
    pub lr_min: f32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inferred {
    pub vector: Vec<f32>,
    /// Set when no token was in vocabulary; `vector` is then the untrained
    /// initialization.
    pub low_confidence: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub skipped_docs: usize,
    pub updates: usize,
    pub epoch_loss: Vec<f64>,
}

/// Trained paragraph-vector model: vocabulary, word input/output matrices and
/// one vector per document tag.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub(crate) config: EmbedConfig,
    pub(crate) vocab: Vocab,
    pub(crate) word_in: Vec<f32>,
    pub(crate) word_out: Vec<f32>,
    pub(crate) tags: Vec<String>,
    pub(crate) tag_index: HashMap<String, usize>,
    pub(crate) doc_vecs: Vec<f32>,
}

struct PreparedDoc {
    words: Vec<usize>,
    tags: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Slot {
    Word(usize),
    Tag(usize),
}

/// Mutable views of the three parameter matrices.
struct Params<'a> {
    word_in: &'a mut [f32],
    word_out: &'a mut [f32],
    docs: &'a mut [f32],
}

struct Scratch {
    rng: ChaCha8Rng,
    h: Vec<f32>,
    neu1e: Vec<f32>,
    negs: Vec<usize>,
    slots: Vec<Slot>,
    words: Vec<usize>,
}

impl Scratch {
    fn new(dim: usize, seed: u64) -> Self {
        Scratch {
            rng: ChaCha8Rng::seed_from_u64(seed),
            h: vec![0.0; dim],
            neu1e: vec![0.0; dim],
            negs: Vec::new(),
            slots: Vec::new(),
            words: Vec::new(),
        }
    }
}

fn init_uniform(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    let bound = 0.5 / dim as f32;
    (0..n * dim).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn draw_negatives(vocab: &Vocab, rng: &mut ChaCha8Rng, k: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..k).map(|_| vocab.sample_negative(rng)));
}

fn row(m: &[f32], i: usize, dim: usize) -> &[f32] {
    &m[i * dim..(i + 1) * dim]
}

fn row_mut(m: &mut [f32], i: usize, dim: usize) -> &mut [f32] {
    &mut m[i * dim..(i + 1) * dim]
}

/// Train on one document; returns (loss, positions processed).
fn train_doc(
    cfg: &EmbedConfig,
    vocab: &Vocab,
    p: &mut Params<'_>,
    doc: &PreparedDoc,
    s: &mut Scratch,
    mut next_lr: impl FnMut() -> f32,
) -> (f64, usize) {
    let dim = cfg.dim;
    s.words.clear();
    for &w in &doc.words {
        if cfg.sample <= 0.0 || s.rng.gen::<f64>() < vocab.keep_prob(w, cfg.sample) {
            s.words.push(w);
        }
    }
    let words = std::mem::take(&mut s.words);
    let mut loss = 0.0f64;
    for (pos, &target) in words.iter().enumerate() {
        let lr = next_lr();
        match cfg.algorithm {
            Algorithm::PvDbow => {
                for &t in &doc.tags {
                    draw_negatives(vocab, &mut s.rng, cfg.negative, &mut s.negs);
                    let h = row_mut(p.docs, t, dim);
                    loss += ns_step(&*h, p.word_out, dim, target, &s.negs, lr, &mut s.neu1e)
                        as f64;
                    axpy(1.0, &s.neu1e, h);
                }
                if cfg.dbow_words {
                    let lo = pos.saturating_sub(cfg.window);
                    let hi = (pos + cfg.window + 1).min(words.len());
                    for (c, &ctx) in words.iter().enumerate().take(hi).skip(lo) {
                        if c == pos {
                            continue;
                        }
                        draw_negatives(vocab, &mut s.rng, cfg.negative, &mut s.negs);
                        let h = row_mut(p.word_in, ctx, dim);
                        loss += ns_step(&*h, p.word_out, dim, target, &s.negs, lr, &mut s.neu1e)
                            as f64;
                        axpy(1.0, &s.neu1e, h);
                    }
                }
            }
            Algorithm::PvDm => {
                s.slots.clear();
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(words.len());
                s.slots.extend(
                    (lo..hi)
                        .filter(|&c| c != pos)
                        .map(|c| Slot::Word(words[c])),
                );
                s.slots.extend(doc.tags.iter().map(|&t| Slot::Tag(t)));
                let inv = 1.0 / s.slots.len() as f32;
                s.h.iter_mut().for_each(|v| *v = 0.0);
                for slot in &s.slots {
                    let src = match *slot {
                        Slot::Word(w) => row(p.word_in, w, dim),
                        Slot::Tag(t) => row(p.docs, t, dim),
                    };
                    axpy(inv, src, &mut s.h);
                }
                draw_negatives(vocab, &mut s.rng, cfg.negative, &mut s.negs);
                loss += ns_step(&s.h, p.word_out, dim, target, &s.negs, lr, &mut s.neu1e)
                    as f64;
                for slot in &s.slots {
                    let dst = match *slot {
                        Slot::Word(w) => row_mut(p.word_in, w, dim),
                        Slot::Tag(t) => row_mut(p.docs, t, dim),
                    };
                    axpy(inv, &s.neu1e, dst);
                }
            }
        }
    }
    let n = words.len();
    s.words = words;
    (loss, n)
}

/// Raw view of a parameter matrix shared by lock-free training workers.
#[derive(Clone, Copy)]
struct SharedSlice {
    ptr: *mut f32,
    len: usize,
}

// Workers write through these pointers concurrently without locks; lost
// updates are accepted in exchange for parallel throughput.
unsafe impl Send for SharedSlice {}
unsafe impl Sync for SharedSlice {}

impl SharedSlice {
    fn new(v: &mut [f32]) -> Self {
        SharedSlice {
            ptr: v.as_mut_ptr(),
            len: v.len(),
        }
    }

    /// # Safety
    /// The backing vector must outlive the returned slice and must not be
    /// reallocated while it is in use.
    #[allow(clippy::mut_from_ref)]
    unsafe fn get(&self) -> &mut [f32] {
        std::slice::from_raw_parts_mut(self.ptr, self.len)
    }
}

fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl EmbeddingModel {
    /// Train on `(tags, tokens)` documents.
    pub fn train(docs: &[(Vec<String>, TokenSeq)], config: &EmbedConfig) -> Result<(Self, TrainStats)> {
        config.validate()?;
        let vocab = Vocab::build(docs.iter().map(|(_, t)| t), config.min_count)?;
        let dim = config.dim;

        let mut tags = Vec::new();
        let mut tag_index: HashMap<String, usize> = HashMap::new();
        let mut prepared = Vec::with_capacity(docs.len());
        let mut stats = TrainStats::default();
        for (doc_tags, tokens) in docs {
            let words = vocab.lookup(tokens);
            if words.is_empty() {
                stats.skipped_docs += 1;
                continue;
            }
            let tags_idx = doc_tags
                .iter()
                .map(|t| {
                    *tag_index.entry(t.clone()).or_insert_with(|| {
                        tags.push(t.clone());
                        tags.len() - 1
                    })
                })
                .collect();
            prepared.push(PreparedDoc {
                words,
                tags: tags_idx,
            });
        }
        if stats.skipped_docs > 0 {
            log::warn!("skipped {} documents without in-vocabulary tokens", stats.skipped_docs);
        }
        if prepared.is_empty() {
            return Err(Error::Config("no document has an in-vocabulary token".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let word_in = init_uniform(&mut rng, vocab.len(), dim);
        let doc_vecs = init_uniform(&mut rng, tags.len(), dim);
        let word_out = vec![0.0; vocab.len() * dim];
        let mut model = EmbeddingModel {
            config: config.clone(),
            vocab,
            word_in,
            word_out,
            tags,
            tag_index,
            doc_vecs,
        };

        let positions: usize = prepared.iter().map(|d| d.words.len()).sum();
        let schedule = LrSchedule {
            initial: config.lr_initial,
            min: config.lr_min,
            total: positions * config.epochs,
        };
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let counter = AtomicUsize::new(0);

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let loss = if config.workers <= 1 {
                model.epoch_serial(&prepared, &order, &schedule, &counter, epoch)
            } else {
                model.epoch_hogwild(&prepared, &order, &schedule, &counter, epoch)
            };
            stats.epoch_loss.push(loss);
            for (name, m) in [
                ("word_in", &model.word_in),
                ("word_out", &model.word_out),
                ("doc_vecs", &model.doc_vecs),
            ] {
                if !all_finite(m) {
                    return Err(Error::Numeric {
                        row: epoch,
                        msg: format!("{name} diverged during epoch {epoch}"),
                    });
                }
            }
            log::debug!("epoch {epoch}: mean loss {:.4}", loss / positions.max(1) as f64);
        }
        stats.updates = counter.load(Ordering::Relaxed);
        Ok((model, stats))
    }

    fn epoch_serial(
        &mut self,
        prepared: &[PreparedDoc],
        order: &[usize],
        schedule: &LrSchedule,
        counter: &AtomicUsize,
        epoch: usize,
    ) -> f64 {
        let mut scratch = Scratch::new(self.config.dim, derive_seed(self.config.seed, epoch as u64, 0));
        let mut params = Params {
            word_in: &mut self.word_in,
            word_out: &mut self.word_out,
            docs: &mut self.doc_vecs,
        };
        let mut loss = 0.0;
        for &d in order {
            let (l, _) = train_doc(&self.config, &self.vocab, &mut params, &prepared[d], &mut scratch, || {
                schedule.at(counter.fetch_add(1, Ordering::Relaxed))
            });
            loss += l;
        }
        loss
    }

    fn epoch_hogwild(
        &mut self,
        prepared: &[PreparedDoc],
        order: &[usize],
        schedule: &LrSchedule,
        counter: &AtomicUsize,
        epoch: usize,
    ) -> f64 {
        let workers = self.config.workers;
        let shared = [
            SharedSlice::new(&mut self.word_in),
            SharedSlice::new(&mut self.word_out),
            SharedSlice::new(&mut self.doc_vecs),
        ];
        let cfg = &self.config;
        let vocab = &self.vocab;
        let chunk = order.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = order
                .chunks(chunk)
                .enumerate()
                .map(|(w, docs)| {
                    scope.spawn(move || {
                        // SAFETY: the matrices are neither resized nor freed
                        // until every worker has been joined below.
                        let mut params = unsafe {
                            Params {
                                word_in: shared[0].get(),
                                word_out: shared[1].get(),
                                docs: shared[2].get(),
                            }
                        };
                        let seed = derive_seed(cfg.seed, epoch as u64, 1 + w as u64);
                        let mut scratch = Scratch::new(cfg.dim, seed);
                        let mut loss = 0.0;
                        for &d in docs {
                            loss += train_doc(cfg, vocab, &mut params, &prepared[d], &mut scratch, || {
                                schedule.at(counter.fetch_add(1, Ordering::Relaxed))
                            })
                            .0;
                        }
                        loss
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).sum()
        })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn doc_vector(&self, tag: &str) -> Option<&[f32]> {
        self.tag_index
            .get(tag)
            .map(|&i| row(&self.doc_vecs, i, self.config.dim))
    }

    pub fn word_vector(&self, token: &str) -> Option<&[f32]> {
        self.vocab
            .get(token)
            .map(|i| row(&self.word_in, i, self.config.dim))
    }

    pub fn output_vector(&self, token: &str) -> Option<&[f32]> {
        self.vocab
            .get(token)
            .map(|i| row(&self.word_out, i, self.config.dim))
    }

    pub fn default_infer_params(&self) -> InferParams {
        InferParams {
            steps: self.config.infer_steps,
            lr_initial: self.config.lr_initial,
            lr_min: self.config.lr_min,
            seed: self.config.seed,
        }
    }

    /// Infer with the model's default schedule.
    pub fn infer(&self, tokens: &TokenSeq) -> Inferred {
        self.infer_vector(tokens, &self.default_infer_params())
    }

    /// Optimize a fresh document vector for `tokens` with all word matrices
    /// frozen.
    pub fn infer_vector(&self, tokens: &TokenSeq, params: &InferParams) -> Inferred {
        let dim = self.config.dim;
        let doc_seed = fnv1a(tokens.iter().flat_map(|t| t.bytes().chain(std::iter::once(0))));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, doc_seed, 2));
        let mut vector = init_uniform(&mut rng, 1, dim);
        let words = self.vocab.lookup(tokens);
        if words.is_empty() {
            return Inferred {
                vector,
                low_confidence: true,
            };
        }

        let schedule = LrSchedule {
            initial: params.lr_initial,
            min: params.lr_min,
            total: params.steps * words.len(),
        };
        let mut neu1e = vec![0.0f32; dim];
        let mut h = vec![0.0f32; dim];
        let mut negs = Vec::with_capacity(self.config.negative);
        let mut update = 0;
        for _ in 0..params.steps {
            for (pos, &target) in words.iter().enumerate() {
                let lr = schedule.at(update);
                update += 1;
                draw_negatives(&self.vocab, &mut rng, self.config.negative, &mut negs);
                match self.config.algorithm {
                    Algorithm::PvDbow => {
                        ns_step_frozen(&vector, &self.word_out, dim, target, &negs, lr, &mut neu1e);
                        axpy(1.0, &neu1e, &mut vector);
                    }
                    Algorithm::PvDm => {
                        let lo = pos.saturating_sub(self.config.window);
                        let hi = (pos + self.config.window + 1).min(words.len());
                        let n_slots = (hi - lo) as f32; // context words plus the doc slot
                        let inv = 1.0 / n_slots;
                        h.iter_mut().for_each(|v| *v = 0.0);
                        for c in (lo..hi).filter(|&c| c != pos) {
                            axpy(inv, row(&self.word_in, words[c], dim), &mut h);
                        }
                        axpy(inv, &vector, &mut h);
                        ns_step_frozen(&h, &self.word_out, dim, target, &negs, lr, &mut neu1e);
                        axpy(inv, &neu1e, &mut vector);
                    }
                }
            }
        }
        Inferred {
            vector,
            low_confidence: false,
        }
    }

    /// Inferred vectors for many documents, computed in parallel. Each
    /// document is seeded independently so the result does not depend on
    /// scheduling.
    pub fn infer_many(&self, docs: &[TokenSeq]) -> Vec<Inferred> {
        let params = self.default_infer_params();
        docs.par_iter().map(|d| self.infer_vector(d, &params)).collect()
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}
