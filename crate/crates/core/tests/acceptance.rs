//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Derived values (F1, finite differences, argmins, proportions, Pearson r,
//! bin means) are recomputed here from first principles rather than taken
//! from the library.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechpanel::commands::{self, EvalReport, SetsFile};
use speechpanel::config::RunConfig;
use speechpanel::convo::{
    interaction_profile, monthly_extremity, monthly_proportions, InteractionOptions, LabeledTree, Month, NodeRecord,
    ReplyTree, TreeRecord,
};
use speechpanel::corpus::{
    build_test_set, build_test_set_excluding, build_training_sets, read_corpus, Corpus, Group, Tweet,
};
use speechpanel::embed::{build_problem, Algorithm, EmbedConfig, EmbeddingModel, GradProblem, Input};
use speechpanel::eval::{judgment_correlation, JudgmentRecord};
use speechpanel::linear::{fit, loss_and_grad, Class, FitOptions, LabeledMatrix};
use speechpanel::panel::{train_expert, Expert, ExpertSpec, Panel, Voter};
use speechpanel::synth::{synth_corpus, Generator, SynthConfig};
use speechpanel::text::{StopLevel, StopList};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Ctx) -> Outcome);

fn s<E: Display>(e: E) -> String {
    e.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// Macro F1 over labeled predictions: mean of the per-class F1 scores.
/// `pred` is `None` for abstentions.
fn oracle_macro_f1(truth: &[Class], pred: &[Option<Class>]) -> Option<f64> {
    let mut per_class = Vec::new();
    for class in [Class::Hate, Class::Counter] {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (t, p) in truth.iter().zip(pred) {
            let Some(p) = p else { continue };
            match (*t == class, *p == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(f1);
    }
    pred.iter().any(Option::is_some).then(|| (per_class[0] + per_class[1]) / 2.0)
}

/// Strict-threshold decision on a hate probability.
fn decide(p_hate: f64, gamma: f64) -> Option<Class> {
    if p_hate > gamma {
        Some(Class::Hate)
    } else if 1.0 - p_hate > gamma {
        Some(Class::Counter)
    } else {
        None
    }
}

fn truth_of(t: &Tweet) -> Class {
    match t.group {
        Group::Hate => Class::Hate,
        Group::Counter => Class::Counter,
        Group::Unlabeled => panic!("unlabeled tweet {} in a labeled set", t.id),
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Regularized logistic negative log-likelihood, written out directly.
fn oracle_lr_loss(theta: &[f64], rows: &[Vec<f64>], y: &[Class], lambda: f64) -> f64 {
    let mut loss = 0.0;
    for (x, c) in rows.iter().zip(y) {
        let z: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
        // -ln g(z) for Hate, -ln(1 - g(z)) = -ln g(-z) for Counter
        loss += match c {
            Class::Hate => softplus(-z),
            Class::Counter => softplus(z),
        };
    }
    loss + 0.5 / lambda * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Five-point central difference of `f` along every coordinate.
fn central_fd(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut at = |step: f64| {
                let mut p = x.to_vec();
                p[j] += step;
                f(&p)
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Negative-sampling loss of a paragraph-vector problem from its raw
/// parameters: for each example the mean input vector h predicts the target
/// against the negatives.
fn oracle_pv_loss(p: &GradProblem, params: &[f64]) -> f64 {
    let d = p.dim;
    let (n_in, n_out) = (p.word_in.len(), p.word_out.len());
    let row = |base: usize, i: usize| &params[base + i * d..base + (i + 1) * d];
    let mut loss = 0.0;
    for ex in &p.examples {
        let mut h = vec![0.0; d];
        for inp in &ex.inputs {
            let r = match *inp {
                Input::Word(i) => row(0, i),
                Input::Doc(i) => row(n_in + n_out, i),
            };
            for k in 0..d {
                h[k] += r[k] / ex.inputs.len() as f64;
            }
        }
        let dot = |o: &[f64]| o.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        loss -= log_sigmoid(dot(row(n_in, ex.target)));
        for &n in &ex.negatives {
            loss -= log_sigmoid(-dot(row(n_in, n)));
        }
    }
    loss
}

// ---------------------------------------------------------------------------
// Shared ρ=0.5 ten-expert run

struct PanelRun {
    cfg: RunConfig,
    corpus: Corpus,
    sets: SetsFile,
    report: EvalReport,
}

fn panel_run(root: &Path) -> Result<PanelRun, String> {
    let mut cfg = RunConfig::desk();
    cfg.paths.corpus = root.join("corpus.jsonl");
    cfg.paths.trees = root.join("trees.jsonl");
    cfg.paths.out_dir = root.join("run");
    cfg.seed = 11;
    cfg.k = 10;
    cfg.per_class = 1000;
    cfg.test_per_class = 500;
    cfg.lambdas = vec![1.0];
    cfg.top_k = 10;
    cfg.synth.per_class = 10_000;
    cfg.synth.overlap = 0.5;
    cfg.synth.seed = 11;
    cfg.validate().map_err(s)?;
    commands::cmd_synth(&cfg, false).map_err(s)?;
    commands::cmd_sets(&cfg).map_err(s)?;
    let sweep = commands::cmd_sweep(&cfg).map_err(s)?;
    ensure(sweep.failed == 0 && sweep.trained == 10, || {
        format!("sweep trained {} failed {}", sweep.trained, sweep.failed)
    })?;
    commands::cmd_panel(&cfg).map_err(s)?;
    let report = commands::cmd_eval(&cfg, None).map_err(s)?;
    Ok(PanelRun {
        corpus: read_corpus(&cfg.paths.corpus).map_err(s)?,
        sets: SetsFile::load(&cfg.paths.sets()).map_err(s)?,
        cfg,
        report,
    })
}

fn fresh_panel(run: &PanelRun) -> Result<Panel, String> {
    commands::load_panel(&run.cfg, None).map(|(_, p)| p).map_err(s)
}

struct Ctx {
    root: tempfile::TempDir,
    run: Option<Result<PanelRun, String>>,
}

impl Ctx {
    fn run(&mut self) -> Result<&PanelRun, String> {
        if self.run.is_none() {
            let dir = self.root.path().join("panel");
            self.run = Some(panel_run(&dir));
        }
        self.run.as_ref().unwrap().as_ref().map_err(|e| format!("panel run failed: {e}"))
    }
}

// ---------------------------------------------------------------------------
// Criteria

/// Single expert on disjoint (ρ=0) and identical (ρ=1) group vocabularies.
fn end_to_end(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let f1_at = |overlap: f64, seed: u64| -> Result<f64, String> {
        let tweets = synth_corpus(&SynthConfig {
            per_class: 5500,
            overlap,
            seed,
            ..SynthConfig::default()
        })
        .map_err(s)?;
        let corpus = Corpus::from_tweets(tweets).map_err(s)?;
        let train = build_training_sets(&corpus, 1, 5000, seed).map_err(s)?.remove(0);
        let test = build_test_set(&corpus, &train, 500, seed).map_err(s)?;
        ensure(test.is_balanced() && test.len() == 1000 && test.is_disjoint(&train), || {
            "hold-out set malformed".into()
        })?;
        let spec = ExpertSpec {
            embed: EmbedConfig {
                dim: 100,
                epochs: 10,
                min_count: 5,
                ..EmbedConfig::default()
            },
            fit: FitOptions::default(),
            stop_level: StopLevel::Light,
        };
        let stop = StopList::builtin(StopLevel::Light).map_err(s)?;
        let expert = train_expert(&corpus, &train, &test, &spec, &stop, "e2e", "e2e").map_err(s)?;
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for id in test.ids() {
            let t = corpus.get(id).unwrap();
            truth.push(truth_of(t));
            pred.push(decide(expert.prob_hate(t).map_err(s)?.p_hate, 0.5));
        }
        oracle_macro_f1(&truth, &pred).ok_or_else(|| "nothing labeled".to_string())
    };
    let disjoint = f1_at(0.0, 21)?;
    let identical = f1_at(1.0, 22)?;
    let elapsed = start.elapsed();
    let detail = format!(
        "rho=0 F1 {disjoint:.4} (>= 0.95), rho=1 F1 {identical:.4} (in [0.45, 0.55]), {:.1}s (<= 300s)",
        elapsed.as_secs_f64()
    );
    ensure(
        disjoint >= 0.95 && (0.45..=0.55).contains(&identical) && elapsed <= Duration::from_secs(300),
        || detail.clone(),
    )?;
    Ok(detail)
}

/// Panel scores on the shared hold-out set, recomputed here.
fn hold_out_scores(run: &PanelRun, panel: &Panel) -> Result<Vec<(Class, f64)>, String> {
    run.sets
        .test
        .ids()
        .map(|id| {
            let t = run.corpus.get(id).unwrap();
            Ok((truth_of(t), panel.score(t).map_err(s)?.s_hate))
        })
        .collect()
}

fn table_trend(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run()?;
    let panel = fresh_panel(run)?;
    ensure(panel.len() == 10, || format!("panel has {} experts", panel.len()))?;
    let scores = hold_out_scores(run, &panel)?;
    let truth: Vec<Class> = scores.iter().map(|x| x.0).collect();
    let ties = scores.iter().filter(|x| x.1 == 0.5).count();
    let gammas = [0.50, 0.65, 0.75, 0.85, 0.95];
    ensure(run.report.rows.len() == gammas.len(), || "report row count".into())?;

    let mut fractions = Vec::new();
    let mut f1s = Vec::new();
    for (gamma, row) in gammas.iter().zip(&run.report.rows) {
        let pred: Vec<Option<Class>> = scores.iter().map(|x| decide(x.1, *gamma)).collect();
        let labeled = pred.iter().filter(|p| p.is_some()).count();
        let fraction = labeled as f64 / scores.len() as f64;
        let f1 = oracle_macro_f1(&truth, &pred).ok_or_else(|| format!("nothing labeled at {gamma}"))?;
        ensure(row.gamma == *gamma && row.labeled == labeled && row.labeled_fraction == fraction, || {
            format!("report row at gamma {gamma} disagrees with recomputed labels")
        })?;
        let reported = row.macro_f1.ok_or("report F1 missing")?;
        ensure((reported - f1).abs() <= 1e-12, || {
            format!("report F1 {reported} vs recomputed {f1} at gamma {gamma}")
        })?;
        fractions.push(fraction);
        f1s.push(f1);
    }
    let detail = format!(
        "labeled {:?}, F1 {:?}, ties {ties}",
        fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>(),
        f1s.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
    );
    ensure(fractions.windows(2).all(|w| w[1] <= w[0]), || format!("fraction rises: {detail}"))?;
    ensure(f1s.windows(2).all(|w| w[1] >= w[0]), || format!("F1 falls: {detail}"))?;
    ensure(run.report.ties == ties, || format!("report ties {} vs {ties}", run.report.ties))?;
    ensure(fractions[0] == 1.0 - ties as f64 / scores.len() as f64, || {
        format!("fraction at 0.5 is {} with {ties} ties", fractions[0])
    })?;
    Ok(detail)
}

fn ensemble_gain(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run()?;
    let panel = fresh_panel(run)?;
    let tweets: Vec<&Tweet> = run.sets.test.ids().map(|id| run.corpus.get(id).unwrap()).collect();
    let truth: Vec<Class> = tweets.iter().map(|t| truth_of(t)).collect();

    let mut individual = Vec::new();
    for expert in panel.experts() {
        let pred = tweets
            .iter()
            .map(|t| expert.prob_hate(t).map(|p| decide(p.p_hate, 0.5)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(s)?;
        individual.push(oracle_macro_f1(&truth, &pred).ok_or("expert labeled nothing")?);
    }
    // Panel score: plain mean of the expert probabilities (no expert trained
    // on the hold-out set, so nobody withholds).
    let mut pred = Vec::new();
    for t in &tweets {
        let mut sum = 0.0;
        for e in panel.experts() {
            ensure(!e.trained_on(&t.id), || format!("expert trained on hold-out tweet {}", t.id))?;
            sum += e.prob_hate(t).map_err(s)?.p_hate;
        }
        pred.push(decide(sum / panel.len() as f64, 0.5));
    }
    let panel_f1 = oracle_macro_f1(&truth, &pred).ok_or("panel labeled nothing")?;
    let best = individual.iter().cloned().fold(f64::MIN, f64::max);
    let mean = individual.iter().sum::<f64>() / individual.len() as f64;
    let detail = format!("panel F1 {panel_f1:.4}, best expert {best:.4}, mean expert {mean:.4}");
    ensure(panel_f1 >= best - 0.005 && panel_f1 >= mean, || detail.clone())?;
    Ok(detail)
}

fn optimization(_: &mut Ctx) -> Outcome {
    // Logistic regression: 100 random instances.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut lr_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(5..40);
        let dim = rng.gen_range(1..10);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<Class> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { Class::Hate } else { Class::Counter })
            .collect();
        let theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let lambda = 10f64.powf(rng.gen_range(-1.0..1.0));
        let data = LabeledMatrix::from_rows(&rows, y.clone()).map_err(s)?;
        let (loss, grad) = loss_and_grad(&theta, &data, lambda).map_err(s)?;
        let oracle = oracle_lr_loss(&theta, &rows, &y, lambda);
        ensure((loss - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), || {
            format!("loss {loss} vs oracle {oracle}")
        })?;
        let numeric = central_fd(&theta, 1e-3, |t| oracle_lr_loss(t, &rows, &y, lambda));
        lr_worst = lr_worst.max(max_rel_error(&grad, &numeric));
    }

    // Paragraph vectors: tiny corpora for both architectures.
    let docs: Vec<(Vec<String>, _)> = vec![
        (vec!["u1".into(), "Hate".into()], ["aa", "bb", "cc", "aa", "dd"].into_iter().collect()),
        (vec!["u2".into(), "Counter".into()], ["ee", "bb", "ff", "gg"].into_iter().collect()),
        (vec!["u3".into(), "Hate".into()], ["cc", "dd", "ee", "aa", "ff", "bb"].into_iter().collect()),
    ];
    let mut pv_worst = [0.0f64; 2];
    for (slot, algorithm) in [Algorithm::PvDbow, Algorithm::PvDm].into_iter().enumerate() {
        for seed in 0..5 {
            let cfg = EmbedConfig {
                dim: 4,
                window: 2,
                min_count: 1,
                negative: 3,
                algorithm,
                seed,
                ..EmbedConfig::default()
            };
            let problem = build_problem(&cfg, &docs).map_err(s)?;
            let analytic = problem.gradient();
            let params: Vec<f64> = [&problem.word_in[..], &problem.word_out[..], &problem.docs[..]].concat();
            let oracle = oracle_pv_loss(&problem, &params);
            ensure((problem.loss() - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), || {
                format!("{algorithm:?} loss {} vs oracle {oracle}", problem.loss())
            })?;
            let numeric = central_fd(&params, 1e-3, |p| oracle_pv_loss(&problem, p));
            pv_worst[slot] = pv_worst[slot].max(max_rel_error(&analytic, &numeric));
        }
    }

    // 1-D separable fixture against a grid search over θ ∈ [-10, 10].
    let rows = vec![vec![1.0], vec![-1.0]];
    let y = vec![Class::Hate, Class::Counter];
    let data = LabeledMatrix::from_rows(&rows, y.clone()).map_err(s)?;
    let (h, report) = fit(
        &data,
        &FitOptions {
            lambda: 1.0,
            ..FitOptions::default()
        },
    )
    .map_err(s)?;
    let step = 1e-5;
    let grid_argmin = (0..=2_000_000)
        .map(|i| -10.0 + i as f64 * step)
        .min_by(|a, b| {
            oracle_lr_loss(&[*a], &rows, &y, 1.0).total_cmp(&oracle_lr_loss(&[*b], &rows, &y, 1.0))
        })
        .unwrap();
    let theta = h.theta[0];
    let p_plus = h.predict_proba(&[1.0]).map_err(s)?;
    let monotone = report.trace.windows(2).all(|w| w[1] <= w[0]);

    let detail = format!(
        "LR FD max rel {lr_worst:.2e} (<= 1e-6), PV-DBOW {:.2e} / PV-DM {:.2e} (<= 1e-4), \
         1-D theta {theta:.6} vs grid {grid_argmin:.6} (<= 1e-3)",
        pv_worst[0], pv_worst[1]
    );
    ensure(
        lr_worst <= 1e-6
            && pv_worst.iter().all(|&e| e <= 1e-4)
            && (theta - grid_argmin).abs() <= 1e-3
            && theta > 0.0
            && p_plus > 0.5
            && monotone,
        || format!("{detail}; p(H|x=1) {p_plus}, monotone trace {monotone}"),
    )?;
    Ok(detail)
}

fn junk_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 14] = [
        "", " ", "\t", "http://t.co/x", "@user", "#tag", "ÄÖÜß", "🙂", "!!!", "x", "12345", "RT", "\u{200b}", "ünïcödé",
    ];
    (0..rng.gen_range(0..8))
        .map(|_| PIECES[rng.gen_range(0..PIECES.len())])
        .collect::<Vec<_>>()
        .join(if rng.gen_bool(0.5) { " " } else { "" })
}

fn score_identities(ctx: &mut Ctx) -> Outcome {
    let run = ctx.run()?;
    let panel = fresh_panel(run)?;
    let gen = Generator::new(SynthConfig {
        overlap: 0.5,
        seed: 99,
        ..SynthConfig::default()
    })
    .map_err(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let trained: Vec<&str> = {
        let all: BTreeSet<&str> = run.sets.train.iter().flat_map(|t| t.ids()).collect();
        all.into_iter().collect()
    };
    let untouched: Vec<&Tweet> = run
        .corpus
        .tweets()
        .iter()
        .filter(|t| !run.sets.train.iter().any(|s| s.contains(&t.id)))
        .collect();

    let mut tweets = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let t = match i % 4 {
            0 => run.corpus.get(trained[rng.gen_range(0..trained.len())]).unwrap().clone(),
            1 => untouched[rng.gen_range(0..untouched.len())].clone(),
            2 => {
                let group = if rng.gen_bool(0.5) { Group::Hate } else { Group::Counter };
                Tweet::unlabeled(format!("fz{i}"), gen.text(group, &mut rng))
            }
            _ => Tweet::unlabeled(format!("fz{i}"), junk_text(&mut rng)),
        };
        tweets.push(t);
    }

    let (mut worst, mut cast, mut withheld, mut unscorable) = (0.0f64, 0u64, 0u64, 0usize);
    let refs: Vec<&Tweet> = tweets.iter().collect();
    for (t, result) in tweets.iter().zip(panel.score_many(&refs)) {
        let allowed = panel.experts().iter().filter(|e| !e.trained_on(&t.id)).count();
        cast += allowed as u64;
        withheld += (panel.len() - allowed) as u64;
        match result {
            Ok(score) => {
                worst = worst.max((score.s_hate + score.s_counter - 1.0).abs());
                ensure(score.voters == allowed && (0.0..=1.0).contains(&score.s_hate), || {
                    format!("tweet {}: {} voters, expected {allowed}", t.id, score.voters)
                })?;
            }
            Err(speechpanel::Error::Unscorable(_)) if allowed == 0 => unscorable += 1,
            Err(e) => return Err(format!("tweet {}: {e}", t.id)),
        }
    }
    let (c_cast, c_withheld, violations) = panel.counters().snapshot();
    let detail = format!(
        "10000 tweets, max |S_h+S_c-1| {worst:.1e} (<= 1e-12), {withheld} withheld votes, \
         {unscorable} unscorable, violations {violations}"
    );
    ensure(
        worst <= 1e-12 && violations == 0 && c_cast == cast && c_withheld == withheld && withheld > 0,
        || format!("{detail}; counters cast {c_cast}/{cast}, withheld {c_withheld}/{withheld}"),
    )?;
    Ok(detail)
}

fn sampler_contracts(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let corpora: Vec<Corpus> = (0..5)
        .map(|i| {
            synth_corpus(&SynthConfig {
                per_class: 60 + 40 * i,
                seed: i as u64,
                ..SynthConfig::default()
            })
            .and_then(Corpus::from_tweets)
        })
        .collect::<Result<_, _>>()
        .map_err(s)?;
    let mut builds = 0;
    for _ in 0..1000 {
        let corpus = &corpora[rng.gen_range(0..corpora.len())];
        let pool = corpus.group_len(Group::Hate).min(corpus.group_len(Group::Counter));
        let k = rng.gen_range(1..6);
        let per_class = rng.gen_range(1..pool / 2);
        let test_per_class = rng.gen_range(1..=pool - per_class);
        let seed: u64 = rng.gen();

        let train = build_training_sets(corpus, k, per_class, seed).map_err(s)?;
        ensure(train.len() == k, || "wrong number of training sets".into())?;
        let again = build_training_sets(corpus, k, per_class, seed).map_err(s)?;
        ensure(
            serde_json::to_vec(&train).map_err(s)? == serde_json::to_vec(&again).map_err(s)?,
            || format!("training sets not reproducible for seed {seed}"),
        )?;
        for (i, set) in train.iter().enumerate() {
            ensure(set.index == i, || "set index".into())?;
            let test = build_test_set(corpus, set, test_per_class, seed).map_err(s)?;
            let test_again = build_test_set(corpus, set, test_per_class, seed).map_err(s)?;
            ensure(test == test_again, || "test set not reproducible".into())?;
            for (b, n) in [(set, per_class), (&test, test_per_class)] {
                let hate_ok = b.hate.len() == n && b.hate.iter().all(|id| corpus.get(id).map(|t| t.group) == Some(Group::Hate));
                let counter_ok = b.counter.len() == n
                    && b.counter.iter().all(|id| corpus.get(id).map(|t| t.group) == Some(Group::Counter));
                ensure(hate_ok && counter_ok, || format!("unbalanced or mislabeled set (n={n})"))?;
            }
            let train_ids: HashSet<&str> = set.ids().collect();
            ensure(test.ids().all(|id| !train_ids.contains(id)), || {
                format!("test set {i} overlaps its training set")
            })?;
        }
        if pool >= per_class * k + test_per_class {
            let refs: Vec<_> = train.iter().collect();
            if let Ok(hold) = build_test_set_excluding(corpus, k, &refs, test_per_class, seed) {
                ensure(train.iter().all(|t| hold.is_disjoint(t)), || "hold-out overlaps".into())?;
            }
        }
        builds += 1;
    }
    Ok(format!("{builds} randomized builds balanced, disjoint and reproducible"))
}

fn at(month: u32, minute: i64) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, month, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(minute)
}

fn record(id: &str, nodes: &[(&str, Option<&str>, chrono::DateTime<Utc>)]) -> TreeRecord {
    TreeRecord {
        tree_id: id.into(),
        nodes: nodes
            .iter()
            .map(|(n, p, ts)| NodeRecord {
                id: (*n).into(),
                author_id: format!("a{n}"),
                timestamp: *ts,
                text: format!("text {n}"),
                parent_id: p.map(Into::into),
            })
            .collect(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn tree_oracle(_: &mut Ctx) -> Outcome {
    // Random labels: following frequencies match base rates on average.
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut trees = Vec::new();
    for t in 0..1000 {
        let n = rng.gen_range(40..80);
        let ids: Vec<String> = (0..n).map(|i| format!("{t}-{i}")).collect();
        let nodes: Vec<_> = (0..n)
            .map(|i| {
                let parent = (i > 0).then(|| ids[rng.gen_range(0..i)].as_str());
                (ids[i].as_str(), parent, at(6, i as i64))
            })
            .collect();
        let tree = ReplyTree::from_record(record(&t.to_string(), &nodes)).map_err(s)?;
        let scores: Vec<Option<f64>> = (0..n).map(|_| Some([0.9, 0.1, 0.5][rng.gen_range(0..3)])).collect();
        trees.push(LabeledTree::from_scores(tree, 0.75, &scores).map_err(s)?);
    }
    let profile = interaction_profile(&trees, &InteractionOptions::default()).map_err(s)?;
    let max_dev = profile.entries.iter().flatten().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(max_dev <= 0.1, || format!("profile {:?} deviates {max_dev}", profile.entries))?;

    // Hand fixture: six nodes over January and March 2019.
    //   a0 Jan  S_h 0.9  hate      a3 Mar  S_h 0.5  other
    //   a1 Jan  S_h 0.1  counter   a4 Mar  S_h 0.2  counter
    //   a2 Jan  S_h 0.8  hate      a5 Mar  excluded
    let fixture = ReplyTree::from_record(record(
        "fx",
        &[
            ("a0", None, at(1, 0)),
            ("a1", Some("a0"), at(1, 1)),
            ("a2", Some("a1"), at(1, 2)),
            ("a3", Some("a0"), at(3, 0)),
            ("a4", Some("a3"), at(3, 1)),
            ("a5", Some("a4"), at(3, 2)),
        ],
    ))
    .map_err(s)?;
    let scores = [Some(0.9), Some(0.1), Some(0.8), Some(0.5), Some(0.2), None];
    let labeled = LabeledTree::from_scores(fixture, 0.75, &scores).map_err(s)?;
    // A tree with no counter speech never qualifies for the profile.
    let hate_only = ReplyTree::from_record(record("ho", &[("b0", None, at(1, 5)), ("b1", Some("b0"), at(1, 6))]))
        .map_err(s)?;
    let hate_only = LabeledTree::from_scores(hate_only, 0.75, &[Some(0.95), Some(0.9)]).map_err(s)?;

    let rows = monthly_proportions(std::slice::from_ref(&labeled), 0.75).map_err(s)?;
    let months: Vec<Month> = rows.iter().map(|r| r.month).collect();
    let want_months = [1, 2, 3].map(|m| Month { year: 2019, month: m });
    ensure(months == want_months, || format!("months {months:?}"))?;
    let jan = rows[0].proportions.ok_or("January missing")?;
    let mar = rows[2].proportions.ok_or("March missing")?;
    ensure(
        close(jan.hate, 2.0 / 3.0) && close(jan.counter, 1.0 / 3.0) && close(jan.other, 0.0) && jan.n == 3,
        || format!("January {jan:?}"),
    )?;
    ensure(rows[1].proportions.is_none() && rows[1].excluded == 0, || "February not a gap".into())?;
    ensure(
        close(mar.hate, 0.0) && close(mar.counter, 0.5) && close(mar.other, 0.5) && mar.n == 2 && rows[2].excluded == 1,
        || format!("March {mar:?}"),
    )?;

    let ext = monthly_extremity(std::slice::from_ref(&labeled));
    let ok = |v: Option<f64>, want: Option<f64>| match (v, want) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    };
    ensure(
        ext.len() == 3
            && ok(ext[0].hate, Some(0.85))
            && ok(ext[0].counter, Some(0.9))
            && ok(ext[1].hate, None)
            && ok(ext[1].counter, None)
            && ok(ext[2].hate, None)
            && ok(ext[2].counter, Some(0.8)),
        || format!("extremity {ext:?}"),
    )?;

    // At threshold 0.7 the types by time are H C H O C. Base rates
    // 2/5, 2/5, 1/5. Windows: a0 -> {H1 C2 O1}, a1 -> {H1 C1 O1},
    // a2 -> {C1 O1}, a4 -> empty (skipped).
    let opts = InteractionOptions {
        score_threshold: 0.7,
        min_each: 1,
        ..InteractionOptions::default()
    };
    let p = interaction_profile(&[labeled.clone(), hate_only], &opts).map_err(s)?;
    let want = [[5.0 / 16.0, 5.0 / 4.0, 15.0 / 8.0], [5.0 / 6.0, 5.0 / 6.0, 5.0 / 3.0]];
    let matches = (0..2).all(|t| (0..3).all(|f| close(p.entries[t][f], want[t][f])));
    ensure(matches && p.qualifying_trees == 1, || format!("profile {:?} vs {want:?}", p.entries))?;

    Ok(format!(
        "random-label profile within 1 +/- {max_dev:.3} over {} trees; fixture proportions, extremity, profile exact",
        profile.qualifying_trees
    ))
}

fn correlation(_: &mut Ctx) -> Outcome {
    // Human values from rating lists, each used twice with a ±1 perturbation
    // orthogonal to them: r = aσ / sqrt(a²σ² + b²) exactly.
    let ratings: [&[u8]; 8] = [&[1], &[2, 3], &[5], &[4, 4, 5], &[1, 2], &[3], &[2, 5, 5], &[4]];
    let human: Vec<f64> = ratings
        .iter()
        .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64 - 1.0) / 4.0)
        .collect();
    let m = human.iter().sum::<f64>() / human.len() as f64;
    let var = human.iter().map(|h| (h - m).powi(2)).sum::<f64>() / human.len() as f64;
    let (a, b) = (0.3, 0.1);
    let mut records = Vec::new();
    for (i, (r, h)) in ratings.iter().zip(&human).enumerate() {
        for w in [1.0, -1.0] {
            records.push(JudgmentRecord {
                tweet_id: format!("j{i}{w}"),
                score: 0.5 + a * (h - m) + b * w,
                ratings: r.to_vec(),
            });
        }
    }
    let closed = a * var.sqrt() / (a * a * var + b * b).sqrt();
    let got = judgment_correlation(&records, 0.02).map_err(s)?.r;
    ensure((got - closed).abs() <= 1e-12, || format!("r {got} vs closed form {closed}"))?;

    // Perfect anti-correlation: score = 1 - human.
    let anti: Vec<JudgmentRecord> = ratings
        .iter()
        .zip(&human)
        .enumerate()
        .map(|(i, (r, h))| JudgmentRecord {
            tweet_id: format!("k{i}"),
            score: 1.0 - h,
            ratings: r.to_vec(),
        })
        .collect();
    let r_anti = judgment_correlation(&anti, 0.02).map_err(s)?.r;
    ensure((r_anti + 1.0).abs() <= 1e-12, || format!("anti-correlated r {r_anti}"))?;

    // Bins of width 0.02 against direct grouping of random records.
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let random: Vec<JudgmentRecord> = (0..2000)
        .map(|i| JudgmentRecord {
            tweet_id: format!("r{i}"),
            score: if i == 0 { 1.0 } else { rng.gen_range(0.0..1.0) },
            ratings: (0..rng.gen_range(1..6)).map(|_| rng.gen_range(1..=5)).collect(),
        })
        .collect();
    let c = judgment_correlation(&random, 0.02).map_err(s)?;
    let mut direct: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &random {
        // bin b covers [0.02 b, 0.02 (b+1)); the score 1.0 joins the last bin
        let mut bin = 0;
        while bin < 49 && r.score >= 0.02 * (bin + 1) as f64 {
            bin += 1;
        }
        let h = (r.ratings.iter().map(|&v| v as f64).sum::<f64>() / r.ratings.len() as f64 - 1.0) / 4.0;
        direct.entry(bin).or_default().push((r.score, h));
    }
    ensure(c.bins.len() == direct.len(), || format!("{} bins vs {}", c.bins.len(), direct.len()))?;
    for (bin, (idx, members)) in c.bins.iter().zip(&direct) {
        let n = members.len() as f64;
        let ms = members.iter().map(|m| m.0).sum::<f64>() / n;
        let mh = members.iter().map(|m| m.1).sum::<f64>() / n;
        let se = (members.len() > 1)
            .then(|| (members.iter().map(|m| (m.1 - mh).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt());
        let se_ok = match (bin.std_error, se) {
            (Some(x), Some(y)) => close(x, y),
            (None, None) => true,
            _ => false,
        };
        ensure(
            bin.n == members.len()
                && close(bin.lo, 0.02 * *idx as f64)
                && close(bin.hi, 0.02 * (*idx + 1) as f64)
                && close(bin.mean_score, ms)
                && close(bin.mean_human, mh)
                && se_ok,
            || format!("bin {idx}: {bin:?}"),
        )?;
    }
    Ok(format!(
        "r {got:.12} vs closed form {closed:.12}; anti r {r_anti}; {} bins of width 0.02 match",
        c.bins.len()
    ))
}

fn serialization(ctx: &mut Ctx) -> Outcome {
    let dir = ctx.root.path().join("roundtrip");
    let run = ctx.run()?;
    let panel = fresh_panel(run)?;
    let probes: Vec<&Tweet> = run.sets.test.ids().map(|id| run.corpus.get(id).unwrap()).collect();
    ensure(probes.len() == 1000, || format!("{} probes", probes.len()))?;
    std::fs::create_dir_all(&dir).map_err(s)?;

    let mut checked = 0;
    for (i, expert) in panel.experts().iter().enumerate().take(3) {
        let bytes = expert.to_bytes();
        let back = Expert::from_bytes(&bytes).map_err(s)?;
        ensure(back == **expert && back.to_bytes() == bytes, || format!("expert {i} bytes differ"))?;
        let path = dir.join(format!("e{i}.expert"));
        expert.save(&path).map_err(s)?;
        let loaded = Expert::load(&path).map_err(s)?;
        ensure(loaded == **expert, || format!("expert {i} file round trip differs"))?;

        let model_bytes = expert.embedding.to_bytes();
        let model = EmbeddingModel::from_bytes(&model_bytes).map_err(s)?;
        ensure(model == expert.embedding && model.to_bytes() == model_bytes, || {
            format!("embedding {i} bytes differ")
        })?;
        for t in &probes {
            let (a, b) = (expert.prob_hate(t).map_err(s)?, loaded.prob_hate(t).map_err(s)?);
            ensure(a.p_hate.to_bits() == b.p_hate.to_bits(), || format!("expert {i} score on {}", t.id))?;
            let tokens = speechpanel::text::preprocess(&t.text, &expert.stoplist);
            let (va, vb) = (expert.embedding.infer(&tokens), model.infer(&tokens));
            ensure(va.vector == vb.vector, || format!("embedding {i} inference on {}", t.id))?;
            checked += 1;
        }
    }

    // PV-DM model, trained here.
    let tweets = synth_corpus(&SynthConfig {
        per_class: 200,
        ..SynthConfig::default()
    })
    .map_err(s)?;
    let stop = StopList::light();
    let docs: Vec<_> = tweets
        .iter()
        .map(|t| (vec![t.id.clone()], speechpanel::text::preprocess(&t.text, &stop)))
        .collect();
    let (dm, _) = EmbeddingModel::train(
        &docs,
        &EmbedConfig {
            dim: 20,
            epochs: 3,
            min_count: 2,
            algorithm: Algorithm::PvDm,
            ..EmbedConfig::default()
        },
    )
    .map_err(s)?;
    let path = dir.join("dm.model");
    std::fs::write(&path, dm.to_bytes()).map_err(s)?;
    let dm_back = EmbeddingModel::from_bytes(&std::fs::read(&path).map_err(s)?).map_err(s)?;
    ensure(dm_back == dm, || "PV-DM model differs after reload".into())?;

    // Whole panel from its manifest, scored twice.
    let reloaded = fresh_panel(run)?;
    let a = panel.score_many(&probes);
    let b = reloaded.score_many(&probes);
    for (t, (x, y)) in probes.iter().zip(a.iter().zip(&b)) {
        let (x, y) = (x.as_ref().map_err(s)?, y.as_ref().map_err(s)?);
        ensure(x.s_hate.to_bits() == y.s_hate.to_bits(), || format!("panel score on {}", t.id))?;
    }
    Ok(format!(
        "3 experts and their embeddings bit-exact, {checked} expert probes and 1000 panel probes identical, PV-DM model bit-exact"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("end-to-end synthetic check", end_to_end),
        ("threshold trend on 10-expert panel", table_trend),
        ("ensemble improvement", ensemble_gain),
        ("optimization correctness", optimization),
        ("score identities and leakage guard", score_identities),
        ("sampler contracts", sampler_contracts),
        ("tree analytics oracle", tree_oracle),
        ("correlation machinery", correlation),
        ("serialization round-trip", serialization),
    ];
    let root = tempfile::Builder::new()
        .prefix("acceptance")
        .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
        .expect("create scratch directory");
    let mut ctx = Ctx { root, run: None };
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check(&mut ctx);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
