//! Tweet normalization and stop-word removal.
//!
//! `normalize` lowercases, drops a leading retweet marker, deletes whole
//! mention/hashtag/URL tokens and strips punctuation. Stop-word removal runs
//! afterwards against one of the built-in lists or a user-supplied file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEAVY_LIST: &str = include_str!("../data/stopwords_heavy.txt");

const LIGHT_LIST: [&str; 48] = [
    "als", "also", "am", "an", "auf", "aus", "bei", "bis", "da", "damit", "dann", "das", "daß",
    "dass", "dem", "den", "der", "des", "die", "dies", "ein", "eine", "einem", "einen", "einer",
    "eines", "einige", "einigem", "einigen", "einiger", "einiges", "es", "im", "in", "ins", "ob",
    "oder", "so", "sondern", "um", "und", "unter", "vom", "von", "vor", "zu", "zum", "zur",
];

// Unicode P* plus every ASCII punctuation/symbol character.
static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{P}[:punct:]]").unwrap());

fn is_punct(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCT.is_match(c.encode_utf8(&mut buf))
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Ordered, normalized tokens of one document.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().map(Into::into).collect())
    }
}

/// Normalize raw tweet text into tokens.
pub fn normalize(text: &str) -> TokenSeq {
    let lower = text.to_lowercase();
    let raw: Vec<&str> = lower.split_whitespace().collect();

    let skip = match raw.as_slice() {
        [first, ..] if first.starts_with("rt:") => {
            // "rt:" glued to the next word, e.g. "rt:@user"
            if first.len() > 3 {
                0
            } else {
                1
            }
        }
        [first, second, ..] if *first == "rt" && second.starts_with('@') => 1,
        _ => 0,
    };

    let mut out = Vec::with_capacity(raw.len());
    for (i, token) in raw.iter().enumerate().skip(skip) {
        let token = if i == 0 && skip == 0 && token.starts_with("rt:") {
            &token[3..]
        } else {
            token
        };
        let core = token.trim_start_matches(|c: char| c != '@' && c != '#' && is_punct(c));
        if core.starts_with('@') || core.starts_with('#') || is_url(core) {
            continue;
        }
        let stripped: String = core.chars().filter(|&c| !is_punct(c)).collect();
        if !stripped.is_empty() {
            out.push(stripped);
        }
    }
    TokenSeq(out)
}

/// Which stop list a pipeline stage uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopLevel {
    None,
    Light,
    Heavy,
    Custom,
}

impl fmt::Display for StopLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopLevel::None => "none",
            StopLevel::Light => "light",
            StopLevel::Heavy => "heavy",
            StopLevel::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for StopLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(StopLevel::None),
            "light" => Ok(StopLevel::Light),
            "heavy" => Ok(StopLevel::Heavy),
            "custom" => Ok(StopLevel::Custom),
            other => Err(Error::Config(format!("unknown stop list {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopList {
    pub level: StopLevel,
    pub words: BTreeSet<String>,
    pub source_path: Option<PathBuf>,
}

impl StopList {
    pub fn none() -> Self {
        StopList {
            level: StopLevel::None,
            words: BTreeSet::new(),
            source_path: None,
        }
    }

    pub fn light() -> Self {
        StopList {
            level: StopLevel::Light,
            words: LIGHT_LIST.iter().map(|w| w.to_string()).collect(),
            source_path: None,
        }
    }

    pub fn heavy() -> Self {
        let words = parse_stoplist(HEAVY_LIST, Path::new("<builtin heavy>"))
            .expect("built-in heavy list is well formed");
        StopList {
            level: StopLevel::Heavy,
            words,
            source_path: None,
        }
    }

    /// Built-in list for `level`; `Custom` needs a path and goes through
    /// [`load_stoplist`].
    pub fn builtin(level: StopLevel) -> Result<Self> {
        match level {
            StopLevel::None => Ok(Self::none()),
            StopLevel::Light => Ok(Self::light()),
            StopLevel::Heavy => Ok(Self::heavy()),
            StopLevel::Custom => Err(Error::Config(
                "custom stop list requires a file path".into(),
            )),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn remove_stopwords(tokens: &TokenSeq, list: &StopList) -> TokenSeq {
    if list.is_empty() {
        return tokens.clone();
    }
    tokens.iter().filter(|t| !list.contains(t)).collect()
}

fn parse_stoplist(content: &str, path: &Path) -> Result<BTreeSet<String>> {
    let mut words = BTreeSet::new();
    for (idx, line) in content.lines().enumerate() {
        let entry = line.trim();
        if entry.is_empty() || entry.starts_with('#') {
            continue;
        }
        if entry.split_whitespace().nth(1).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("stop word {entry:?} contains whitespace"),
            });
        }
        words.insert(entry.to_lowercase());
    }
    Ok(words)
}

/// Read a custom stop list: UTF-8, one token per line, `#` comments.
pub fn load_stoplist(path: impl AsRef<Path>) -> Result<StopList> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(StopList {
        level: StopLevel::Custom,
        words: parse_stoplist(&content, path)?,
        source_path: Some(path.to_path_buf()),
    })
}

/// Normalization followed by stop-word removal.
pub fn preprocess(text: &str, list: &StopList) -> TokenSeq {
    remove_stopwords(&normalize(text), list)
}
