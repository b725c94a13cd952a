//! Run configuration: one TOML file plus command-line overrides.
//!
//! Precedence is flag > file > built-in default. [`RunConfig::validate`]
//! runs before any command touches the filesystem.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convo::InteractionOptions;
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::eval::SweepGrid;
use crate::linear::FitOptions;
use crate::panel::validate_gamma;
use crate::synth::{SynthConfig, TreeSynthConfig};
use crate::text::StopLevel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub trees: PathBuf,
    /// Root for sets, experts, panel manifest, ledger and reports.
    pub out_dir: PathBuf,
    pub judgments: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            trees: "trees.jsonl".into(),
            out_dir: "run".into(),
            judgments: None,
        }
    }
}

impl Paths {
    pub fn sets(&self) -> PathBuf {
        self.out_dir.join("sets.json")
    }
    pub fn ledger(&self) -> PathBuf {
        self.out_dir.join("ledger.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out_dir.join("panel.json")
    }
    pub fn prepared(&self) -> PathBuf {
        self.out_dir.join("prepared.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: u64,
    pub workers: usize,
    /// Number of training sets.
    pub k: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub stop_levels: Vec<StopLevel>,
    pub embeds: Vec<EmbedConfig>,
    pub lambdas: Vec<f64>,
    pub fit: FitOptions,
    pub gammas: Vec<f64>,
    pub gamma: f64,
    pub top_k: usize,
    pub bin_width: f64,
    pub interaction: InteractionOptions,
    pub synth: SynthConfig,
    pub tree_synth: TreeSynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Minutes-scale profile.
    pub fn desk() -> Self {
        RunConfig {
            paths: Paths::default(),
            seed: 1,
            workers: 1,
            k: 2,
            per_class: 5000,
            test_per_class: 500,
            stop_levels: vec![StopLevel::Light],
            embeds: vec![EmbedConfig {
                dim: 100,
                epochs: 10,
                min_count: 5,
                ..EmbedConfig::default()
            }],
            lambdas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            fit: FitOptions::default(),
            gammas: vec![0.50, 0.65, 0.75, 0.85, 0.95],
            gamma: 0.75,
            top_k: 5,
            bin_width: 0.02,
            interaction: InteractionOptions::default(),
            synth: SynthConfig {
                per_class: 6000,
                ..SynthConfig::default()
            },
            tree_synth: TreeSynthConfig::default(),
        }
    }

    /// Full-scale profile: 500k tweets per class, five sets, 20 epochs and
    /// a wider embedding and stop-list grid.
    pub fn full() -> Self {
        let mut embeds = Vec::new();
        for dim in [100, 200, 300] {
            for algorithm in [crate::embed::Algorithm::PvDbow, crate::embed::Algorithm::PvDm] {
                embeds.push(EmbedConfig {
                    dim,
                    algorithm,
                    epochs: 20,
                    ..EmbedConfig::default()
                });
            }
        }
        RunConfig {
            k: 5,
            per_class: 500_000,
            test_per_class: 50_000,
            stop_levels: vec![StopLevel::None, StopLevel::Light, StopLevel::Heavy],
            embeds,
            top_k: 25,
            synth: SynthConfig {
                per_class: 600_000,
                ..SynthConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config(format!("unknown profile {name:?}"))),
        }
    }

    /// Parse TOML over the defaults; relative paths resolve against the
    /// file's directory.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            for p in [&mut cfg.paths.corpus, &mut cfg.paths.trees, &mut cfg.paths.out_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(j) = cfg.paths.judgments.as_mut() {
                if j.is_relative() {
                    *j = base.join(&*j);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Apply command-line overrides; `None` keeps the file or default value.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
            self.synth.seed = s;
            for e in &mut self.embeds {
                e.seed = s;
            }
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(g) = o.gamma {
            self.gamma = g;
        }
        if let Some(k) = o.top_k {
            self.top_k = k;
        }
        if let Some(d) = &o.out_dir {
            self.paths.out_dir = d.clone();
        }
        if let Some(c) = &o.corpus {
            self.paths.corpus = c.clone();
        }
        if let Some(t) = &o.trees {
            self.paths.trees = t.clone();
        }
    }

    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            embeds: self.embeds.clone(),
            lambdas: self.lambdas.clone(),
            stop_levels: self.stop_levels.clone(),
            fit: self.fit,
        }
    }

    /// Check values only; path existence is checked per command with
    /// [`RunConfig::require_file`].
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.k == 0 || self.per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("k, per_class and test_per_class must be positive".into()));
        }
        if self.gammas.is_empty() {
            return Err(Error::Config("gamma grid is empty".into()));
        }
        for &g in self.gammas.iter().chain([&self.gamma]) {
            validate_gamma(g)?;
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.bin_width > 0.0 && self.bin_width < 1.0) {
            return Err(Error::Config(format!("bin_width must be in (0,1), got {}", self.bin_width)));
        }
        self.grid().validate()?;
        self.synth.validate()?;
        self.tree_synth.validate()
    }

    pub fn require_file(path: &Path) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "required input file not found"),
            ))
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub gamma: Option<f64>,
    pub top_k: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub trees: Option<PathBuf>,
}
