//! Metrics, threshold sweeps, the resumable expert sweep and the
//! score-versus-human-judgment correlation.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BalancedSet, Corpus, Tweet};
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::linear::{Class, FitOptions};
use crate::panel::{
    class_of, f1_on_features, fit_expert, infer_features, test_tweets, train_embedding, Expert, ExpertSpec,
    Panel, Score, SpeechLabel, Voter,
};
use crate::text::{StopLevel, StopList};

/// Counts over the labeled (non-neutral) predictions, Hate as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub neutral: usize,
}

impl Confusion {
    pub fn labeled(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn total(&self) -> usize {
        self.labeled() + self.neutral
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.labeled() as f64 / self.total() as f64
        }
    }
}

pub fn confusion(truth: &[Class], predicted: &[SpeechLabel]) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let mut c = Confusion::default();
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (_, SpeechLabel::Neutral) => c.neutral += 1,
            (Class::Hate, SpeechLabel::Hate) => c.tp += 1,
            (Class::Hate, SpeechLabel::Counter) => c.fn_ += 1,
            (Class::Counter, SpeechLabel::Hate) => c.fp += 1,
            (Class::Counter, SpeechLabel::Counter) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro-averaged precision, recall and F1 over the two classes. A class
/// that is never predicted contributes precision 0.
pub fn macro_metrics(c: &Confusion) -> Result<Metrics> {
    if c.labeled() == 0 {
        return Err(Error::UndefinedMetrics("no labeled predictions".into()));
    }
    let (p_h, r_h) = (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_));
    let (p_c, r_c) = (ratio(c.tn, c.tn + c.fn_), ratio(c.tn, c.tn + c.fp));
    Ok(Metrics {
        precision: 0.5 * (p_h + p_c),
        recall: 0.5 * (r_h + r_c),
        f1: 0.5 * (f1(p_h, r_h) + f1(p_c, r_c)),
    })
}

/// Micro F1 (equal to accuracy over labeled predictions).
pub fn micro_f1(c: &Confusion) -> Result<f64> {
    if c.labeled() == 0 {
        return Err(Error::UndefinedMetrics("no labeled predictions".into()));
    }
    Ok(ratio(c.tp + c.tn, c.labeled()))
}

/// One row of a threshold sweep. Metric fields are `None` when nothing was
/// labeled at that γ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub gamma: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub labeled_fraction: f64,
    pub labeled: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<MetricsRow>,
    /// Test tweets no expert was allowed to score.
    pub excluded: Vec<String>,
    /// Scored tweets with S_h exactly ½.
    pub ties: usize,
}

/// Sweep rows from already-computed `(truth, score)` pairs.
pub fn sweep_from_scores(scored: &[(Class, Score)], gammas: &[f64]) -> Result<Vec<MetricsRow>> {
    let truth: Vec<Class> = scored.iter().map(|(c, _)| *c).collect();
    gammas
        .iter()
        .map(|&gamma| {
            crate::panel::validate_gamma(gamma)?;
            let preds: Vec<SpeechLabel> = scored.iter().map(|(_, s)| s.label(gamma)).collect();
            let c = confusion(&truth, &preds)?;
            let m = macro_metrics(&c).ok();
            Ok(MetricsRow {
                gamma,
                precision: m.map(|m| m.precision),
                recall: m.map(|m| m.recall),
                macro_f1: m.map(|m| m.f1),
                labeled_fraction: c.labeled_fraction(),
                labeled: c.labeled(),
                total: c.total(),
            })
        })
        .collect()
}

/// Score every test tweet once, then evaluate each γ from the cached scores.
pub fn threshold_sweep<V: Voter>(
    panel: &Panel<V>,
    tweets: &[&Tweet],
    gammas: &[f64],
) -> Result<SweepReport> {
    let scores = panel.score_many(tweets);
    let mut scored = Vec::with_capacity(tweets.len());
    let mut excluded = Vec::new();
    for (t, s) in tweets.iter().zip(scores) {
        match s {
            Ok(s) => scored.push((class_of(t)?, s)),
            Err(Error::Unscorable(id)) => excluded.push(id),
            Err(e) => return Err(e),
        }
    }
    if !excluded.is_empty() {
        log::info!("{} test tweets excluded as unscorable", excluded.len());
    }
    let ties = scored.iter().filter(|(_, s)| s.s_hate == 0.5).count();
    Ok(SweepReport {
        rows: sweep_from_scores(&scored, gammas)?,
        excluded,
        ties,
    })
}

pub fn threshold_sweep_set<V: Voter>(
    panel: &Panel<V>,
    corpus: &Corpus,
    test: &BalancedSet,
    gammas: &[f64],
) -> Result<SweepReport> {
    threshold_sweep(panel, &test_tweets(corpus, test)?, gammas)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

/// Tab-separated table with a header row.
pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("gamma\tprecision\trecall\tmacro_f1\tlabeled_fraction\tlabeled\ttotal\n");
    for r in rows {
        out.push_str(&format!(
            "{:.2}\t{}\t{}\t{}\t{:.4}\t{}\t{}\n",
            r.gamma,
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            fmt_opt(r.macro_f1),
            r.labeled_fraction,
            r.labeled,
            r.total
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Results ledger and expert sweep

/// Append-only line-delimited record of sweep and evaluation results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerRecord {
    Expert(ExpertRecord),
    Failure {
        fingerprint: String,
        stage: String,
        code: String,
        message: String,
    },
    Metrics {
        panel: String,
        row: MetricsRow,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub fingerprint: String,
    pub id: String,
    pub set_index: usize,
    pub lambda: f64,
    pub stop_level: StopLevel,
    pub embed: EmbedConfig,
    pub f1: f64,
    /// Artifact path relative to the sweep output directory.
    pub artifact: PathBuf,
}

pub struct ResultsLedger {
    path: PathBuf,
    writer: Mutex<File>,
}

impl ResultsLedger {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(ResultsLedger {
            path,
            writer: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record as a single line; concurrent callers are serialized.
    pub fn append(&self, record: &LedgerRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::Serialization(e.to_string()))?;
        line.push('\n');
        let mut file = self.writer.lock().expect("ledger lock poisoned");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Read all complete records. A malformed final line (an interrupted
    /// write) is skipped; malformed lines elsewhere are errors.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<LedgerRecord>> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => records.push(r),
                Err(_) if i == last => log::warn!("ignoring truncated ledger line {}", i + 1),
                Err(e) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })
                }
            }
        }
        Ok(records)
    }
}

/// Configuration space of an expert sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub embeds: Vec<EmbedConfig>,
    pub lambdas: Vec<f64>,
    pub stop_levels: Vec<StopLevel>,
    pub fit: FitOptions,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.embeds.is_empty() || self.lambdas.is_empty() || self.stop_levels.is_empty() {
            return Err(Error::Config("sweep grid must be nonempty in every axis".into()));
        }
        for e in &self.embeds {
            e.validate()?;
        }
        for &l in &self.lambdas {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be positive, got {l}")));
            }
        }
        if self.stop_levels.contains(&StopLevel::Custom) {
            return Err(Error::Config("custom stop lists are not supported in sweeps".into()));
        }
        Ok(())
    }

    pub fn cells(&self, n_sets: usize) -> usize {
        self.embeds.len() * self.lambdas.len() * self.stop_levels.len() * n_sets
    }
}

/// Training and test set of one sweep column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetPair {
    pub train: BalancedSet,
    pub test: BalancedSet,
}

impl SetPair {
    /// Changes whenever either set's membership changes.
    pub fn digest(&self) -> u64 {
        self.train.digest() ^ self.test.digest().rotate_left(17)
    }
}

/// Ranked sweep result; `expert` is loaded lazily from `artifact`.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub record: ExpertRecord,
    pub artifact: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub ranked: Vec<SweepEntry>,
    pub trained: usize,
    pub reused: usize,
    pub failed: usize,
}

/// Train one expert per (embedding config × stop level × λ × training set)
/// cell, persisting each artifact and ledger record as soon as it is done.
/// Cells whose fingerprint already has a ledger record and an artifact on
/// disk are reused, so an interrupted sweep resumes where it stopped.
///
/// Embeddings are shared across the λ axis: one embedding is trained per
/// (config, stop level, set) and every missing λ is fitted on it.
pub fn expert_sweep(
    corpus: &Corpus,
    grid: &SweepGrid,
    sets: &[SetPair],
    out_dir: impl AsRef<Path>,
    ledger: &ResultsLedger,
) -> Result<SweepOutcome> {
    grid.validate()?;
    let out_dir = out_dir.as_ref();
    let experts_dir = out_dir.join("experts");
    fs::create_dir_all(&experts_dir).map_err(|e| Error::io(&experts_dir, e))?;

    let done: HashMap<String, ExpertRecord> = ResultsLedger::read(ledger.path())?
        .into_iter()
        .filter_map(|r| match r {
            LedgerRecord::Expert(e) if out_dir.join(&e.artifact).exists() => Some((e.fingerprint.clone(), e)),
            _ => None,
        })
        .collect();

    struct Column<'a> {
        embed: &'a EmbedConfig,
        stop: StopLevel,
        set: &'a SetPair,
    }
    let mut columns = Vec::new();
    for embed in &grid.embeds {
        for &stop in &grid.stop_levels {
            for set in sets {
                columns.push(Column { embed, stop, set });
            }
        }
    }

    let spec_for = |c: &Column, lambda: f64| ExpertSpec {
        embed: c.embed.clone(),
        fit: FitOptions { lambda, ..grid.fit },
        stop_level: c.stop,
    };

    let results: Vec<(Vec<ExpertRecord>, usize, usize, usize)> = columns
        .par_iter()
        .map(|col| {
            let mut records = Vec::new();
            let (mut trained, mut reused, mut failed) = (0, 0, 0);
            let mut missing = Vec::new();
            for &lambda in &grid.lambdas {
                let fp = spec_for(col, lambda).fingerprint(col.set.train.index, col.set.digest());
                match done.get(&fp) {
                    Some(rec) => {
                        records.push(rec.clone());
                        reused += 1;
                    }
                    None => missing.push((lambda, fp)),
                }
            }
            if missing.is_empty() {
                return (records, trained, reused, failed);
            }

            let stage = || -> Result<_> {
                let stoplist = StopList::builtin(col.stop)?;
                let emb = train_embedding(corpus, &col.set.train, col.embed, &stoplist)?;
                let test = infer_features(&emb.embedding, &stoplist, &test_tweets(corpus, &col.set.test)?)?;
                Ok((emb, test))
            };
            let (emb, test) = match stage() {
                Ok(v) => v,
                Err(e) => {
                    for (_, fp) in &missing {
                        log_failure(ledger, fp, "embedding", &e);
                    }
                    failed += missing.len();
                    return (records, trained, reused, failed);
                }
            };
            for (lambda, fp) in missing {
                let spec = spec_for(col, lambda);
                let cell = || -> Result<ExpertRecord> {
                    let id = format!("expert-{fp}");
                    let mut expert = fit_expert(&emb, &spec.fit, &id, &fp)?;
                    expert.f1 = f1_on_features(&expert.hypothesis, &test)?;
                    let artifact = PathBuf::from("experts").join(format!("{fp}.expert"));
                    expert.save(out_dir.join(&artifact))?;
                    let rec = ExpertRecord {
                        fingerprint: fp.clone(),
                        id,
                        set_index: col.set.train.index,
                        lambda,
                        stop_level: col.stop,
                        embed: col.embed.clone(),
                        f1: expert.f1,
                        artifact,
                    };
                    ledger.append(&LedgerRecord::Expert(rec.clone()))?;
                    Ok(rec)
                };
                match cell() {
                    Ok(rec) => {
                        log::info!("expert {} set {} λ={} F1={:.4}", rec.fingerprint, rec.set_index, lambda, rec.f1);
                        records.push(rec);
                        trained += 1;
                    }
                    Err(e) => {
                        log_failure(ledger, &fp, "fit", &e);
                        failed += 1;
                    }
                }
            }
            (records, trained, reused, failed)
        })
        .collect();

    let mut outcome = SweepOutcome::default();
    for (records, t, r, f) in results {
        outcome.trained += t;
        outcome.reused += r;
        outcome.failed += f;
        outcome.ranked.extend(records.into_iter().map(|record| SweepEntry {
            artifact: out_dir.join(&record.artifact),
            record,
        }));
    }
    outcome.ranked.sort_by(|a, b| {
        b.record
            .f1
            .total_cmp(&a.record.f1)
            .then_with(|| a.record.fingerprint.cmp(&b.record.fingerprint))
    });
    Ok(outcome)
}

fn log_failure(ledger: &ResultsLedger, fingerprint: &str, stage: &str, err: &Error) {
    log::error!("sweep cell {fingerprint} failed at {stage}: {err}");
    let rec = LedgerRecord::Failure {
        fingerprint: fingerprint.to_string(),
        stage: stage.to_string(),
        code: err.code().to_string(),
        message: err.to_string(),
    };
    if let Err(e) = ledger.append(&rec) {
        log::error!("could not record failure: {e}");
    }
}

impl SweepEntry {
    pub fn load(&self) -> Result<Arc<Expert>> {
        Expert::load(&self.artifact).map(Arc::new)
    }
}

// ---------------------------------------------------------------------------
// Human judgments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub tweet_id: String,
    pub score: f64,
    pub ratings: Vec<u8>,
}

impl JudgmentRecord {
    pub fn validate(&self) -> Result<()> {
        if self.ratings.is_empty() {
            return Err(Error::Config(format!("record {} has no ratings", self.tweet_id)));
        }
        if let Some(r) = self.ratings.iter().find(|r| !(1..=5).contains(*r)) {
            return Err(Error::Config(format!("record {}: rating {r} outside 1..5", self.tweet_id)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Config(format!("record {}: score {} outside [0,1]", self.tweet_id, self.score)));
        }
        Ok(())
    }

    /// Mean rating mapped linearly from 1..5 onto [0,1].
    pub fn human_score(&self) -> f64 {
        let mean = self.ratings.iter().map(|&r| r as f64).sum::<f64>() / self.ratings.len() as f64;
        (mean - 1.0) / 4.0
    }
}

pub fn read_judgments(reader: impl BufRead) -> Result<Vec<JudgmentRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JudgmentRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_score: f64,
    pub mean_human: f64,
    /// Sample standard deviation over √n; `None` for single-record bins.
    pub std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub bins: Vec<ScoreBin>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Pearson r between classifier score and mean human judgment, plus
/// per-bin means and standard errors over a `bin_width` grid on [0,1].
pub fn judgment_correlation(records: &[JudgmentRecord], bin_width: f64) -> Result<Correlation> {
    if !(bin_width > 0.0 && bin_width < 1.0) {
        return Err(Error::Config(format!("bin width must be in (0,1), got {bin_width}")));
    }
    for r in records {
        r.validate()?;
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let human: Vec<f64> = records.iter().map(JudgmentRecord::human_score).collect();
    let mut distinct = scores.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two distinct scores".into()));
    }
    let r = pearson(&scores, &human)?;

    let n_bins = (1.0 / bin_width).ceil() as usize;
    let mut grouped: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (&s, &h) in scores.iter().zip(&human) {
        let idx = ((s / bin_width).floor() as usize).min(n_bins - 1);
        grouped.entry(idx).or_default().push((s, h));
    }
    let bins = grouped
        .into_iter()
        .map(|(idx, members)| {
            let n = members.len();
            let mean_score = members.iter().map(|m| m.0).sum::<f64>() / n as f64;
            let mean_human = members.iter().map(|m| m.1).sum::<f64>() / n as f64;
            let std_error = (n > 1).then(|| {
                let var = members.iter().map(|m| (m.1 - mean_human).powi(2)).sum::<f64>() / (n - 1) as f64;
                var.sqrt() / (n as f64).sqrt()
            });
            ScoreBin {
                lo: idx as f64 * bin_width,
                hi: ((idx + 1) as f64 * bin_width).min(1.0),
                n,
                mean_score,
                mean_human,
                std_error,
            }
        })
        .collect();
    Ok(Correlation { r, bins })
}

pub fn bins_tsv(bins: &[ScoreBin]) -> String {
    let mut out = String::from("lo\thi\tn\tmean_score\tmean_human\tstd_error\n");
    for b in bins {
        out.push_str(&format!(
            "{:.4}\t{:.4}\t{}\t{:.6}\t{:.6}\t{}\n",
            b.lo,
            b.hi,
            b.n,
            b.mean_score,
            b.mean_human,
            b.std_error.map(|s| format!("{s:.6}")).unwrap_or_else(|| "NA".into())
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::FixedVoter;
    use crate::corpus::{tests::tweet, Group};
    use Class::{Counter as C, Hate as H};
    use SpeechLabel::{Counter as PC, Hate as PH, Neutral as PN};

    #[test]
    fn confusion_examples() {
        let c = confusion(&[H, H, C, C], &[PH, PH, PC, PC]).unwrap();
        assert_eq!((c.fn_, c.fp), (0, 0));

        let c = confusion(&[H, H, C, C], &[PH, PN, PC, PH]).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn, c.neutral), (1, 0, 1, 1, 1));
        assert_eq!(c.labeled_fraction(), 0.75);

        let c = confusion(&[H, C], &[PN, PN]).unwrap();
        assert_eq!(c.labeled(), 0);
        assert_eq!(c.labeled_fraction(), 0.0);
        assert!(matches!(macro_metrics(&c), Err(Error::UndefinedMetrics(_))));

        assert!(matches!(confusion(&[H], &[PH, PC]), Err(Error::Shape { .. })));
    }

    #[test]
    fn macro_metrics_examples() {
        let perfect = Confusion { tp: 5, tn: 5, ..Default::default() };
        let m = macro_metrics(&perfect).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let sym = Confusion { tp: 40, fn_: 10, fp: 10, tn: 40, neutral: 0 };
        let m = macro_metrics(&sym).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 0.8).abs() < 1e-12);
        }
        assert!((micro_f1(&sym).unwrap() - m.f1).abs() < 1e-12);

        // Counter never predicted: its precision counts as 0.
        let lopsided = Confusion { tp: 5, fp: 5, ..Default::default() };
        let m = macro_metrics(&lopsided).unwrap();
        assert!((m.precision - 0.25).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert!((m.f1 - (2.0 * 0.5 / 1.5) / 2.0).abs() < 1e-12);
    }

    fn scored(pairs: &[(Class, f64)]) -> Vec<(Class, Score)> {
        pairs.iter().map(|&(c, s)| (c, Score::from_hate(s, 1))).collect()
    }

    #[test]
    fn sweep_rows_from_scores() {
        let data = scored(&[(H, 0.9), (H, 0.7), (H, 0.4), (C, 0.2), (C, 0.6), (C, 0.03)]);
        let gammas = [0.5, 0.65, 0.75, 0.85, 0.95];
        let rows = sweep_from_scores(&data, &gammas).unwrap();
        assert_eq!(rows[0].labeled_fraction, 1.0);
        assert!(rows.windows(2).all(|w| w[1].labeled_fraction <= w[0].labeled_fraction));
        // γ=0.75: labeled {0.9→H, 0.2→C, 0.03→C}, all correct
        assert_eq!(rows[2].labeled, 3);
        assert_eq!(rows[2].macro_f1, Some(1.0));
        assert_eq!(rows[4].labeled, 1);
        assert!(sweep_from_scores(&data, &[0.3]).is_err());
    }

    #[test]
    fn tie_at_half_is_unlabeled() {
        let rows = sweep_from_scores(&scored(&[(H, 0.5), (C, 0.2)]), &[0.5]).unwrap();
        assert_eq!(rows[0].labeled_fraction, 0.5);
    }

    #[test]
    fn cached_sweep_matches_recomputation() {
        let voters: Vec<Arc<FixedVoter>> = [0.9, 0.55, 0.8].iter().map(|&p| Arc::new(FixedVoter::new(p))).collect();
        let panel = Panel::new(voters, 0.5).unwrap();
        let tweets: Vec<Tweet> = (0..6)
            .map(|i| tweet(&i.to_string(), "a", if i % 2 == 0 { Group::Hate } else { Group::Counter }))
            .collect();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let gammas = [0.5, 0.7, 0.75];
        let report = threshold_sweep(&panel, &refs, &gammas).unwrap();
        for (row, &g) in report.rows.iter().zip(&gammas) {
            let truth: Vec<Class> = tweets.iter().map(|t| class_of(t).unwrap()).collect();
            let preds: Vec<SpeechLabel> = tweets.iter().map(|t| panel.classify(t, g).unwrap()).collect();
            let c = confusion(&truth, &preds).unwrap();
            assert_eq!(row.labeled, c.labeled());
            assert_eq!(row.macro_f1, macro_metrics(&c).ok().map(|m| m.f1));
        }
        let tsv = metrics_tsv(&report.rows);
        assert_eq!(tsv.lines().count(), 4);
    }

    #[test]
    fn unscorable_tweets_are_reported() {
        let mut v = FixedVoter::new(0.9);
        v.trained.insert("0".into());
        let panel = Panel::new(vec![Arc::new(v)], 0.5).unwrap();
        let tweets = [tweet("0", "a", Group::Hate), tweet("1", "a", Group::Hate)];
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let report = threshold_sweep(&panel, &refs, &[0.5]).unwrap();
        assert_eq!(report.excluded, ["0"]);
        assert_eq!(report.rows[0].total, 1);
    }

    fn rec(score: f64, ratings: &[u8]) -> JudgmentRecord {
        JudgmentRecord { tweet_id: format!("{score}"), score, ratings: ratings.to_vec() }
    }

    #[test]
    fn correlation_extremes() {
        let linear: Vec<_> = (0..5).map(|i| rec(i as f64 / 4.0, &[i as u8 + 1])).collect();
        assert!((judgment_correlation(&linear, 0.02).unwrap().r - 1.0).abs() < 1e-12);
        let anti: Vec<_> = (0..5).map(|i| rec(i as f64 / 4.0, &[5 - i as u8])).collect();
        assert!((judgment_correlation(&anti, 0.02).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        let same = vec![rec(0.3, &[1]), rec(0.3, &[5])];
        assert!(matches!(judgment_correlation(&same, 0.1), Err(Error::UndefinedCorrelation(_))));
        let flat = vec![rec(0.3, &[2]), rec(0.6, &[2])];
        assert!(matches!(judgment_correlation(&flat, 0.1), Err(Error::UndefinedCorrelation(_))));
        assert!(judgment_correlation(&[rec(0.1, &[1]), rec(0.2, &[2])], 1.0).is_err());
        assert!(rec(0.1, &[6]).validate().is_err());
        assert!(rec(0.1, &[]).validate().is_err());
    }

    #[test]
    fn judgment_ingest() {
        let data = "{\"tweet_id\":\"a\",\"score\":0.4,\"ratings\":[1,3]}\n\n{\"tweet_id\":\"b\",\"score\":0.9,\"ratings\":[5]}\n";
        let recs = read_judgments(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].human_score(), 0.25);
        assert!(read_judgments("{\"tweet_id\":\"a\",\"score\":0.4,\"ratings\":[0]}".as_bytes()).is_err());
    }

    #[test]
    fn ledger_skips_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let ledger = ResultsLedger::open(&path).unwrap();
        let rec = LedgerRecord::Failure {
            fingerprint: "ab".into(),
            stage: "fit".into(),
            code: "numeric".into(),
            message: "x".into(),
        };
        ledger.append(&rec).unwrap();
        ledger.append(&rec).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"exp").unwrap();
        assert_eq!(ResultsLedger::read(&path).unwrap(), vec![rec.clone(), rec]);
    }
}
