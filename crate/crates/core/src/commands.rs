//! Pipeline stages behind the command-line tool. Each stage reads its inputs
//! from the run directory, writes its outputs there and can be rerun on its
//! own; nothing already on disk is recomputed.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::convo::{
    extremity_tsv, interaction_profile, label_trees, monthly_extremity, monthly_proportions, profile_tsv,
    proportions_tsv, read_trees, write_trees, ExtremityRow, InteractionProfile, NodeOutcome, ProportionRow,
};
use crate::corpus::{
    build_test_set_excluding, build_training_sets, read_corpus, write_tweets, BalancedSet, Corpus,
};
use crate::error::{Error, Result};
use crate::eval::{
    judgment_correlation, metrics_tsv, bins_tsv, expert_sweep, threshold_sweep_set, Correlation, ExpertRecord,
    JudgmentRecord, LedgerRecord, MetricsRow, ResultsLedger, SetPair, SweepOutcome,
};
use crate::panel::{ExpertSpec, ManifestEntry, Panel, PanelManifest, MANIFEST_VERSION};
use crate::synth::Generator;
use crate::text::{preprocess, StopList};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub tweets: usize,
    pub trees: usize,
}

/// Write a synthetic corpus, and optionally synthetic reply trees.
pub fn cmd_synth(cfg: &RunConfig, with_trees: bool) -> Result<SynthReport> {
    cfg.validate()?;
    let generator = Generator::new(cfg.synth.clone())?;
    let tweets = generator.corpus();
    if let Some(dir) = cfg.paths.corpus.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_tweets(&cfg.paths.corpus, &tweets)?;
    let mut trees = 0;
    if with_trees {
        let records = generator.trees(&cfg.tree_synth)?;
        write_trees(&cfg.paths.trees, &records)?;
        trees = records.len();
    }
    Ok(SynthReport {
        tweets: tweets.len(),
        trees,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub stop_level: String,
    pub docs: usize,
    pub empty_docs: usize,
    pub tokens: usize,
    pub types: usize,
}

#[derive(Serialize)]
struct PreparedDoc<'a> {
    id: &'a str,
    tokens: &'a [String],
}

/// Tokenize the corpus once per configured stop list and write the token
/// streams for inspection.
pub fn cmd_prep(cfg: &RunConfig) -> Result<Vec<PrepReport>> {
    cfg.validate()?;
    RunConfig::require_file(&cfg.paths.corpus)?;
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let mut reports = Vec::new();
    for &level in &cfg.stop_levels {
        let list = StopList::builtin(level)?;
        let mut out = String::new();
        let mut types = HashSet::new();
        let (mut tokens, mut empty) = (0, 0);
        for t in corpus.tweets() {
            let seq = preprocess(&t.text, &list);
            tokens += seq.len();
            empty += usize::from(seq.is_empty());
            types.extend(seq.0.iter().cloned());
            let doc = PreparedDoc { id: &t.id, tokens: &seq.0 };
            out.push_str(&serde_json::to_string(&doc).map_err(|e| Error::Serialization(e.to_string()))?);
            out.push('\n');
        }
        write_file(&cfg.paths.out_dir.join(format!("prepared-{level}.jsonl")), &out)?;
        reports.push(PrepReport {
            stop_level: level.to_string(),
            docs: corpus.len(),
            empty_docs: empty,
            tokens,
            types: types.len(),
        });
    }
    Ok(reports)
}

/// Training sets plus one shared hold-out set disjoint from all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetsFile {
    pub seed: u64,
    pub k: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub train: Vec<BalancedSet>,
    pub test: BalancedSet,
}

impl SetsFile {
    pub fn build(corpus: &Corpus, cfg: &RunConfig) -> Result<Self> {
        let train = build_training_sets(corpus, cfg.k, cfg.per_class, cfg.seed)?;
        let refs: Vec<&BalancedSet> = train.iter().collect();
        let test = build_test_set_excluding(corpus, cfg.k, &refs, cfg.test_per_class, cfg.seed)?;
        Ok(SetsFile {
            seed: cfg.seed,
            k: cfg.k,
            per_class: cfg.per_class,
            test_per_class: cfg.test_per_class,
            train,
            test,
        })
    }

    pub fn pairs(&self) -> Vec<SetPair> {
        self.train
            .iter()
            .map(|t| SetPair {
                train: t.clone(),
                test: self.test.clone(),
            })
            .collect()
    }

    fn matches(&self, cfg: &RunConfig) -> bool {
        (self.seed, self.k, self.per_class, self.test_per_class)
            == (cfg.seed, cfg.k, cfg.per_class, cfg.test_per_class)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Build (or reuse) the sets file.
pub fn cmd_sets(cfg: &RunConfig) -> Result<SetsFile> {
    cfg.validate()?;
    RunConfig::require_file(&cfg.paths.corpus)?;
    let path = cfg.paths.sets();
    if path.exists() {
        if let Ok(existing) = SetsFile::load(&path) {
            if existing.matches(cfg) {
                return Ok(existing);
            }
        }
    }
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let sets = SetsFile::build(&corpus, cfg)?;
    write_file(&path, &to_json(&sets)?)?;
    Ok(sets)
}

fn load_sets(cfg: &RunConfig) -> Result<SetsFile> {
    let path = cfg.paths.sets();
    RunConfig::require_file(&path)?;
    let sets = SetsFile::load(&path)?;
    if !sets.matches(cfg) {
        return Err(Error::Config(format!(
            "{} was built with different sampling settings; rerun `sets`",
            path.display()
        )));
    }
    Ok(sets)
}

/// Fingerprints of every cell the current grid and sets define.
fn expected_fingerprints(cfg: &RunConfig, sets: &SetsFile) -> HashSet<String> {
    let mut out = HashSet::new();
    for pair in sets.pairs() {
        for embed in &cfg.embeds {
            for &stop_level in &cfg.stop_levels {
                for &lambda in &cfg.lambdas {
                    let spec = ExpertSpec {
                        embed: embed.clone(),
                        fit: crate::linear::FitOptions { lambda, ..cfg.fit },
                        stop_level,
                    };
                    out.insert(spec.fingerprint(pair.train.index, pair.digest()));
                }
            }
        }
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    RunConfig::require_file(&cfg.paths.corpus)?;
    let sets = load_sets(cfg)?;
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let ledger = ResultsLedger::open(cfg.paths.ledger())?;
    expert_sweep(&corpus, &cfg.grid(), &sets.pairs(), &cfg.paths.out_dir, &ledger)
}

/// Current-grid experts recorded in the ledger, ranked by F1 then
/// fingerprint.
pub fn ranked_experts(cfg: &RunConfig) -> Result<Vec<ExpertRecord>> {
    let sets = load_sets(cfg)?;
    let wanted = expected_fingerprints(cfg, &sets);
    let mut seen = HashSet::new();
    let mut records: Vec<ExpertRecord> = ResultsLedger::read(cfg.paths.ledger())?
        .into_iter()
        .filter_map(|r| match r {
            LedgerRecord::Expert(e) => Some(e),
            _ => None,
        })
        .filter(|e| wanted.contains(&e.fingerprint) && cfg.paths.out_dir.join(&e.artifact).exists())
        .filter(|e| seen.insert(e.fingerprint.clone()))
        .collect();
    records.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.fingerprint.cmp(&b.fingerprint)));
    Ok(records)
}

/// Select the top-k experts and write the panel manifest.
pub fn cmd_panel(cfg: &RunConfig) -> Result<PanelManifest> {
    cfg.validate()?;
    let ranked = ranked_experts(cfg)?;
    if ranked.len() < cfg.top_k {
        return Err(Error::Capacity {
            what: "trained experts".into(),
            required: cfg.top_k,
            available: ranked.len(),
        });
    }
    let manifest = PanelManifest {
        version: MANIFEST_VERSION,
        gamma: cfg.gamma,
        experts: ranked
            .into_iter()
            .take(cfg.top_k)
            .map(|r| ManifestEntry {
                id: r.id,
                path: r.artifact,
                f1: r.f1,
                fingerprint: r.fingerprint,
            })
            .collect(),
    };
    manifest.save(cfg.paths.manifest())?;
    Ok(manifest)
}

/// Load the panel from the manifest; `gamma` overrides the manifest value.
pub fn load_panel(cfg: &RunConfig, gamma: Option<f64>) -> Result<(PanelManifest, Panel)> {
    let path = cfg.paths.manifest();
    RunConfig::require_file(&path)?;
    let manifest = PanelManifest::load(&path)?;
    let panel = manifest.load_panel(&path, gamma)?;
    Ok((manifest, panel))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub excluded: usize,
    pub ties: usize,
    pub experts: Vec<(String, f64)>,
    pub correlation: Option<Correlation>,
    pub violations: u64,
}

/// Judgment input: the score is filled in by the panel when absent.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgmentInput {
    tweet_id: String,
    ratings: Vec<u8>,
    score: Option<f64>,
}

fn judgments(cfg: &RunConfig, corpus: &Corpus, panel: &Panel, path: &Path) -> Result<Correlation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let inp: JudgmentInput = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let score = match inp.score {
            Some(s) => s,
            None => {
                let tweet = corpus
                    .get(&inp.tweet_id)
                    .ok_or_else(|| Error::Config(format!("judged tweet {} not in corpus", inp.tweet_id)))?;
                panel.score(tweet)?.s_hate
            }
        };
        records.push(JudgmentRecord {
            tweet_id: inp.tweet_id,
            score,
            ratings: inp.ratings,
        });
    }
    judgment_correlation(&records, cfg.bin_width)
}

/// Threshold sweep of the panel over the shared hold-out set.
pub fn cmd_eval(cfg: &RunConfig, gamma: Option<f64>) -> Result<EvalReport> {
    cfg.validate()?;
    RunConfig::require_file(&cfg.paths.corpus)?;
    if let Some(j) = &cfg.paths.judgments {
        RunConfig::require_file(j)?;
    }
    let sets = load_sets(cfg)?;
    let (manifest, panel) = load_panel(cfg, gamma)?;
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let report = threshold_sweep_set(&panel, &corpus, &sets.test, &cfg.gammas)?;

    let reports = cfg.paths.reports();
    write_file(&reports.join("metrics.tsv"), &metrics_tsv(&report.rows))?;
    let ledger = ResultsLedger::open(cfg.paths.ledger())?;
    let panel_id = manifest
        .experts
        .iter()
        .map(|e| e.fingerprint.as_str())
        .collect::<Vec<_>>()
        .join("+");
    for row in &report.rows {
        ledger.append(&LedgerRecord::Metrics {
            panel: panel_id.clone(),
            row: *row,
        })?;
    }
    let correlation = match &cfg.paths.judgments {
        Some(path) => {
            let c = judgments(cfg, &corpus, &panel, path)?;
            write_file(&reports.join("judgment_bins.tsv"), &bins_tsv(&c.bins))?;
            Some(c)
        }
        None => None,
    };
    Ok(EvalReport {
        rows: report.rows,
        excluded: report.excluded.len(),
        ties: report.ties,
        experts: manifest.experts.iter().map(|e| (e.fingerprint.clone(), e.f1)).collect(),
        correlation,
        violations: panel.counters().snapshot().2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub gamma: f64,
    pub trees: usize,
    pub rejected: usize,
    pub nodes: usize,
    pub excluded: usize,
    pub proportions: Vec<ProportionRow>,
    pub extremity: Vec<ExtremityRow>,
    /// `None` when no tree had enough hate and counter nodes.
    pub profile: Option<InteractionProfile>,
}

#[derive(Serialize)]
struct NodeLabelLine<'a> {
    tree_id: &'a str,
    id: &'a str,
    s_hate: Option<f64>,
    label: String,
}

/// Label reply trees with a ready panel and write the analysis tables.
pub fn analyse_trees(cfg: &RunConfig, panel: &Panel, gamma: f64) -> Result<TreeReport> {
    RunConfig::require_file(&cfg.paths.trees)?;
    let load = read_trees(&cfg.paths.trees)?;
    if load.trees.is_empty() {
        return Err(Error::EmptyResult(format!(
            "{} contains no valid trees ({} rejected)",
            cfg.paths.trees.display(),
            load.rejected.len()
        )));
    }
    let labeled = label_trees(panel, &load.trees, gamma)?;
    let proportions = monthly_proportions(&labeled, gamma)?;
    let extremity = monthly_extremity(&labeled);

    let reports = cfg.paths.reports();
    write_file(&reports.join("proportions.tsv"), &proportions_tsv(&proportions))?;
    write_file(&reports.join("extremity.tsv"), &extremity_tsv(&extremity))?;
    let mut lines = String::new();
    let mut excluded = 0;
    for t in &labeled {
        for (node, o) in t.tree.nodes().iter().zip(&t.outcomes) {
            let (s_hate, label) = match o {
                NodeOutcome::Scored { score, label } => (Some(score.s_hate), format!("{label:?}").to_lowercase()),
                NodeOutcome::Excluded => {
                    excluded += 1;
                    (None, "excluded".to_string())
                }
            };
            let line = NodeLabelLine {
                tree_id: &t.tree.id,
                id: &node.id,
                s_hate,
                label,
            };
            lines.push_str(&serde_json::to_string(&line).map_err(|e| Error::Serialization(e.to_string()))?);
            lines.push('\n');
        }
    }
    write_file(&reports.join("tree_labels.jsonl"), &lines)?;

    // Too few strongly labeled nodes per tree leaves the profile undefined;
    // the other tables still stand.
    let profile = match interaction_profile(&labeled, &cfg.interaction) {
        Ok(p) => {
            write_file(&reports.join("profile.tsv"), &profile_tsv(&p))?;
            Some(p)
        }
        Err(Error::EmptyResult(msg)) => {
            log::warn!("interaction profile skipped: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(TreeReport {
        gamma,
        trees: labeled.len(),
        rejected: load.rejected.len(),
        nodes: labeled.iter().map(|t| t.tree.len()).sum(),
        excluded,
        proportions,
        extremity,
        profile,
    })
}

/// Tree analytics with the manifest panel; `gamma` overrides the manifest.
pub fn cmd_trees(cfg: &RunConfig, gamma: Option<f64>) -> Result<TreeReport> {
    cfg.validate()?;
    RunConfig::require_file(&cfg.paths.trees)?;
    let (_, panel) = load_panel(cfg, gamma)?;
    let g = panel.gamma();
    analyse_trees(cfg, &panel, g)
}

/// A pipeline stage failure: which stage, and why.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage: name, source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub trained: usize,
    pub reused: usize,
    pub failed: usize,
    pub eval: EvalReport,
    pub trees: Option<TreeReport>,
}

/// sets → sweep → panel → eval, then trees when a tree file exists.
pub fn cmd_pipeline(cfg: &RunConfig, gamma: Option<f64>) -> std::result::Result<PipelineReport, StageError> {
    stage("validate", cfg.validate().and_then(|_| RunConfig::require_file(&cfg.paths.corpus)))?;
    stage("sets", cmd_sets(cfg))?;
    let sweep = stage("sweep", cmd_sweep(cfg))?;
    stage("panel", cmd_panel(cfg))?;
    let eval = stage("eval", cmd_eval(cfg, gamma))?;
    let trees = if cfg.paths.trees.is_file() {
        Some(stage("trees", cmd_trees(cfg, gamma))?)
    } else {
        None
    };
    Ok(PipelineReport {
        trained: sweep.trained,
        reused: sweep.reused,
        failed: sweep.failed,
        eval,
        trees,
    })
}
