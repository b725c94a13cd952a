//! Command-line entry point. Exit status: 0 on success, 1 on usage errors,
//! otherwise the error class code from `speechpanel::Error::exit_code`.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speechpanel::commands::{self, EvalReport, TreeReport};
use speechpanel::config::{Overrides, RunConfig};
use speechpanel::eval::metrics_tsv;
use speechpanel::Error;

#[derive(Parser)]
#[command(name = "speechpanel", version, about = "Hate/counter-speech panel classifier and reply-tree analytics")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Confidence threshold; overrides the config and the panel manifest.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, short, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    trees: Option<PathBuf>,
    /// Print results as JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (and optionally reply trees).
    Synth {
        /// Shared vocabulary fraction in [0, 1].
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        per_class: Option<usize>,
        /// Also write synthetic reply trees.
        #[arg(long)]
        with_trees: bool,
    },
    /// Tokenize the corpus with each configured stop list.
    Prep,
    /// Sample balanced training sets and the shared hold-out set.
    Sets,
    /// Train every expert in the grid (resumable).
    Sweep,
    /// Rank experts and write the panel manifest.
    Panel,
    /// Threshold sweep of the panel on the hold-out set.
    Eval,
    /// Label reply trees and write proportion, extremity and profile tables.
    Trees,
    /// sets, sweep, panel, eval, and trees when a tree file exists.
    Pipeline,
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(g: &GlobalArgs) -> speechpanel::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::profile(&g.profile)?,
    };
    cfg.apply(&Overrides {
        seed: g.seed,
        workers: g.workers,
        gamma: g.gamma,
        top_k: g.top_k,
        out_dir: g.out_dir.clone(),
        corpus: g.corpus.clone(),
        trees: g.trees.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn eval_text(r: &EvalReport) -> String {
    let mut s = String::new();
    for (fp, f1) in &r.experts {
        s.push_str(&format!("expert {fp}  F1 {f1:.4}\n"));
    }
    s.push_str(&metrics_tsv(&r.rows));
    s.push_str(&format!(
        "excluded {}  ties {}  withheld-vote violations {}\n",
        r.excluded, r.ties, r.violations
    ));
    if let Some(c) = &r.correlation {
        s.push_str(&format!("judgment correlation r = {:.4} over {} bins\n", c.r, c.bins.len()));
    }
    s
}

fn trees_text(r: &TreeReport) -> String {
    format!(
        "{} trees ({} rejected), {} nodes, {} excluded, gamma {}\n{}{}{}",
        r.trees,
        r.rejected,
        r.nodes,
        r.excluded,
        r.gamma,
        speechpanel::convo::proportions_tsv(&r.proportions),
        speechpanel::convo::extremity_tsv(&r.extremity),
        r.profile
            .as_ref()
            .map(speechpanel::convo::profile_tsv)
            .unwrap_or_else(|| "interaction profile: no qualifying trees\n".into())
    )
}

fn run(cli: Cli) -> Result<String, (Option<&'static str>, Error)> {
    let mut cfg = load_config(&cli.global).map_err(|e| (None, e))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| (None, Error::Config(format!("worker pool: {e}"))))?;
    let as_json = cli.global.json;
    let gamma = cli.global.gamma;
    let fail = |e| (None, e);
    let out = match cli.command {
        Command::Synth { overlap, per_class, with_trees } => {
            if let Some(o) = overlap {
                cfg.synth.overlap = o;
            }
            if let Some(n) = per_class {
                cfg.synth.per_class = n;
            }
            let r = commands::cmd_synth(&cfg, with_trees).map_err(fail)?;
            if as_json {
                json(&r)
            } else {
                format!("wrote {} tweets and {} trees\n", r.tweets, r.trees)
            }
        }
        Command::Prep => {
            let r = commands::cmd_prep(&cfg).map_err(fail)?;
            if as_json {
                json(&r)
            } else {
                r.iter()
                    .map(|p| {
                        format!(
                            "{}: {} docs, {} empty, {} tokens, {} types\n",
                            p.stop_level, p.docs, p.empty_docs, p.tokens, p.types
                        )
                    })
                    .collect()
            }
        }
        Command::Sets => {
            let s = commands::cmd_sets(&cfg).map_err(fail)?;
            format!(
                "{} training sets of 2x{}, hold-out 2x{}\n",
                s.train.len(),
                s.per_class,
                s.test_per_class
            )
        }
        Command::Sweep => {
            let o = commands::cmd_sweep(&cfg).map_err(fail)?;
            let mut s = format!("trained {}  reused {}  failed {}\n", o.trained, o.reused, o.failed);
            for e in &o.ranked {
                s.push_str(&format!(
                    "{}\tset {}\tlambda {}\tF1 {:.4}\n",
                    e.record.fingerprint, e.record.set_index, e.record.lambda, e.record.f1
                ));
            }
            s
        }
        Command::Panel => {
            let m = commands::cmd_panel(&cfg).map_err(fail)?;
            if as_json {
                json(&m)
            } else {
                m.experts
                    .iter()
                    .map(|e| format!("{}\tF1 {:.4}\n", e.fingerprint, e.f1))
                    .collect()
            }
        }
        Command::Eval => {
            let r = commands::cmd_eval(&cfg, gamma).map_err(fail)?;
            if as_json {
                json(&r)
            } else {
                eval_text(&r)
            }
        }
        Command::Trees => {
            let r = commands::cmd_trees(&cfg, gamma).map_err(fail)?;
            if as_json {
                json(&r)
            } else {
                trees_text(&r)
            }
        }
        Command::Pipeline => {
            let r = commands::cmd_pipeline(&cfg, gamma).map_err(|e| (Some(e.stage), e.source))?;
            if as_json {
                json(&r)
            } else {
                let mut s = format!("experts trained {}  reused {}  failed {}\n", r.trained, r.reused, r.failed);
                s.push_str(&eval_text(&r.eval));
                if let Some(t) = &r.trees {
                    s.push_str(&trees_text(t));
                }
                s
            }
        }
        Command::Config => cfg.to_toml().map_err(fail)?,
    };
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version also arrive here
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err((stage, e)) => {
            match stage {
                Some(s) => eprintln!("error[{}] in stage {s}: {e}", e.code()),
                None => eprintln!("error[{}]: {e}", e.code()),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
