use std::path::{Path, PathBuf};

use speechpanel::commands;
use speechpanel::config::RunConfig;
use speechpanel::embed::EmbedConfig;

/// Small trained run: two training sets, two experts, panel manifest.
pub fn tiny_run(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.paths.corpus = dir.join("corpus.jsonl");
    cfg.paths.trees = dir.join("trees.jsonl");
    cfg.paths.out_dir = dir.join("out");
    cfg.k = 2;
    cfg.per_class = 300;
    cfg.test_per_class = 100;
    cfg.synth.per_class = 800;
    cfg.synth.overlap = 0.3;
    cfg.embeds = vec![EmbedConfig {
        dim: 16,
        epochs: 5,
        min_count: 2,
        ..EmbedConfig::default()
    }];
    cfg.lambdas = vec![1.0];
    cfg.top_k = 2;
    cfg.validate().unwrap();
    commands::cmd_synth(&cfg, false).unwrap();
    commands::cmd_sets(&cfg).unwrap();
    commands::cmd_sweep(&cfg).unwrap();
    commands::cmd_panel(&cfg).unwrap();
    cfg
}

pub fn manifest(cfg: &RunConfig) -> PathBuf {
    cfg.paths.manifest()
}
