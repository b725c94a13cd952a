//! Reply trees: ingestion, per-node labeling with a panel, monthly label
//! proportions and extremity, and trigger/response interaction profiles.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Group, Tweet};
use crate::error::{Error, Result};
use crate::panel::{validate_gamma, Panel, Score, SpeechLabel, Voter};

/// One node as stored in the tree file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub author_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub parent_id: Option<String>,
}

/// One line of the tree file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRecord {
    pub tree_id: String,
    pub nodes: Vec<NodeRecord>,
}

/// Validated rooted conversation. Nodes keep file order; `parent[i]` is
/// `None` only for the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplyTree {
    pub id: String,
    nodes: Vec<Tweet>,
    parent: Vec<Option<usize>>,
    index: HashMap<String, usize>,
    root: usize,
}

impl ReplyTree {
    pub fn from_record(rec: TreeRecord) -> Result<Self> {
        let structure = |msg: String| Error::Structure {
            tree: rec.tree_id.clone(),
            msg,
        };
        if rec.nodes.is_empty() {
            return Err(structure("tree has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(rec.nodes.len());
        for (i, n) in rec.nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(structure(format!("duplicate node id {:?}", n.id)));
            }
        }
        let roots: Vec<&str> = rec
            .nodes
            .iter()
            .filter(|n| n.parent_id.is_none())
            .map(|n| n.id.as_str())
            .collect();
        match roots.len() {
            0 => return Err(structure("no root node (every node has a parent)".into())),
            1 => {}
            _ => return Err(structure(format!("multiple roots: {}", roots.join(", ")))),
        }
        let mut parent = Vec::with_capacity(rec.nodes.len());
        for n in &rec.nodes {
            parent.push(match &n.parent_id {
                None => None,
                Some(p) => match index.get(p) {
                    Some(&pi) => Some(pi),
                    None => return Err(structure(format!("orphan node {:?}: parent {:?} not in tree", n.id, p))),
                },
            });
        }
        let root = index[roots[0]];

        // Every node must reach the root; anything else sits on a cycle.
        let n = rec.nodes.len();
        let mut reaches = vec![None::<bool>; n];
        reaches[root] = Some(true);
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            let ok = loop {
                if let Some(r) = reaches[cur] {
                    break r;
                }
                if path.contains(&cur) {
                    break false;
                }
                path.push(cur);
                match parent[cur] {
                    Some(p) => cur = p,
                    None => break cur == root,
                }
            };
            for p in path {
                reaches[p] = Some(ok);
            }
        }
        let cyclic: Vec<&str> = (0..n)
            .filter(|&i| reaches[i] != Some(true))
            .map(|i| rec.nodes[i].id.as_str())
            .collect();
        if !cyclic.is_empty() {
            return Err(structure(format!("cycle through nodes {}", cyclic.join(", "))));
        }

        let nodes = rec
            .nodes
            .into_iter()
            .map(|n| Tweet {
                id: n.id,
                author_id: n.author_id,
                group: Group::Unlabeled,
                timestamp: n.timestamp,
                text: n.text,
            })
            .collect();
        Ok(ReplyTree {
            id: rec.tree_id,
            nodes,
            parent,
            index,
            root,
        })
    }

    pub fn to_record(&self) -> TreeRecord {
        TreeRecord {
            tree_id: self.id.clone(),
            nodes: self
                .nodes
                .iter()
                .zip(&self.parent)
                .map(|(t, p)| NodeRecord {
                    id: t.id.clone(),
                    author_id: t.author_id.clone(),
                    timestamp: t.timestamp,
                    text: t.text.clone(),
                    parent_id: p.map(|p| self.nodes[p].id.clone()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &Tweet {
        &self.nodes[self.root]
    }

    pub fn nodes(&self) -> &[Tweet] {
        &self.nodes
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn parent_of(&self, id: &str) -> Option<&Tweet> {
        let i = *self.index.get(id)?;
        self.parent[i].map(|p| &self.nodes[p])
    }

    fn depth_of(&self, mut i: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[i] {
            d += 1;
            i = p;
        }
        d
    }

    /// Longest root-to-node path length in edges.
    pub fn depth(&self) -> usize {
        (0..self.len()).map(|i| self.depth_of(i)).max().unwrap_or(0)
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(i);
            }
        }
        ch
    }
}

/// Result of reading a tree file: valid trees in file order plus the
/// records that were rejected, each with its line number and reason.
#[derive(Debug, Default)]
pub struct TreeLoad {
    pub trees: Vec<ReplyTree>,
    pub rejected: Vec<(usize, Error)>,
}

pub fn load_trees(reader: impl BufRead) -> Result<TreeLoad> {
    let mut out = TreeLoad::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<TreeRecord>(&line)
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })
            .and_then(ReplyTree::from_record);
        match parsed {
            Ok(t) => out.trees.push(t),
            Err(e) => {
                log::warn!("rejected tree at line {line_no}: {e}");
                out.rejected.push((line_no, e));
            }
        }
    }
    Ok(out)
}

pub fn read_trees(path: impl AsRef<Path>) -> Result<TreeLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_trees(BufReader::new(file))
}

pub fn write_trees<'a>(path: impl AsRef<Path>, trees: impl IntoIterator<Item = &'a TreeRecord>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in trees {
        serde_json::to_writer(&mut w, t).map_err(|e| Error::Serialization(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Labeling

/// Per-node outcome. `Excluded` marks nodes every expert had seen during
/// training, so no vote could be cast.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeOutcome {
    Scored { score: Score, label: SpeechLabel },
    Excluded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTree {
    pub tree: ReplyTree,
    pub gamma: f64,
    /// Parallel to `tree.nodes()`.
    pub outcomes: Vec<NodeOutcome>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeCounts {
    pub hate: usize,
    pub counter: usize,
    pub neutral: usize,
    pub excluded: usize,
}

impl NodeCounts {
    pub fn total(&self) -> usize {
        self.hate + self.counter + self.neutral + self.excluded
    }
}

impl LabeledTree {
    /// Attach cached hate scores (`None` = excluded) and label them at γ.
    pub fn from_scores(tree: ReplyTree, gamma: f64, s_hate: &[Option<f64>]) -> Result<Self> {
        validate_gamma(gamma)?;
        if s_hate.len() != tree.len() {
            return Err(Error::Shape {
                expected: tree.len(),
                got: s_hate.len(),
            });
        }
        let outcomes = s_hate
            .iter()
            .map(|s| match s {
                Some(s) => {
                    let score = Score::from_hate(*s, 1);
                    NodeOutcome::Scored {
                        score,
                        label: score.label(gamma),
                    }
                }
                None => NodeOutcome::Excluded,
            })
            .collect();
        Ok(LabeledTree { tree, gamma, outcomes })
    }

    pub fn outcome(&self, id: &str) -> Option<NodeOutcome> {
        self.tree.index.get(id).map(|&i| self.outcomes[i])
    }

    pub fn counts(&self) -> NodeCounts {
        let mut c = NodeCounts::default();
        for o in &self.outcomes {
            match o {
                NodeOutcome::Excluded => c.excluded += 1,
                NodeOutcome::Scored { label, .. } => match label {
                    SpeechLabel::Hate => c.hate += 1,
                    SpeechLabel::Counter => c.counter += 1,
                    SpeechLabel::Neutral => c.neutral += 1,
                },
            }
        }
        c
    }

    fn scored(&self) -> impl Iterator<Item = (&Tweet, Score)> {
        self.tree.nodes.iter().zip(&self.outcomes).filter_map(|(t, o)| match o {
            NodeOutcome::Scored { score, .. } => Some((t, *score)),
            NodeOutcome::Excluded => None,
        })
    }
}

/// Score every node with the panel. Nodes no expert may vote on are marked
/// excluded; any other scoring failure aborts.
pub fn label_tree<V: Voter>(panel: &Panel<V>, tree: &ReplyTree, gamma: f64) -> Result<LabeledTree> {
    validate_gamma(gamma)?;
    let refs: Vec<&Tweet> = tree.nodes.iter().collect();
    let outcomes = panel
        .score_many(&refs)
        .into_iter()
        .map(|r| match r {
            Ok(score) => Ok(NodeOutcome::Scored {
                score,
                label: score.label(gamma),
            }),
            Err(Error::Unscorable(_)) => Ok(NodeOutcome::Excluded),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledTree {
        tree: tree.clone(),
        gamma,
        outcomes,
    })
}

/// Label trees in parallel; output keeps input order.
pub fn label_trees<V: Voter>(panel: &Panel<V>, trees: &[ReplyTree], gamma: f64) -> Result<Vec<LabeledTree>> {
    trees.par_iter().map(|t| label_tree(panel, t, gamma)).collect()
}

// ---------------------------------------------------------------------------
// Monthly series

/// UTC calendar month.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(ts: &DateTime<Utc>) -> Self {
        Month {
            year: ts.year(),
            month: ts.month(),
        }
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Every month from `first` to `last` inclusive.
    pub fn range(first: Month, last: Month) -> impl Iterator<Item = Month> {
        std::iter::successors(Some(first), move |m| (*m < last).then(|| m.next()))
    }
}

impl std::fmt::Display for Month {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub hate: f64,
    pub counter: f64,
    /// Neutral labels only; excluded nodes are counted separately.
    pub other: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub month: Month,
    /// `None` marks a gap: no scored node fell in this month.
    pub proportions: Option<Proportions>,
    pub excluded: usize,
}

fn month_span(trees: &[LabeledTree]) -> Option<(Month, Month)> {
    let months = trees.iter().flat_map(|t| t.tree.nodes.iter().map(|n| Month::of(&n.timestamp)));
    months.fold(None, |acc, m| match acc {
        None => Some((m, m)),
        Some((lo, hi)) => Some((lo.min(m), hi.max(m))),
    })
}

/// Hate/counter/other shares per month over all trees, relabeling cached
/// scores at `gamma`.
pub fn monthly_proportions(trees: &[LabeledTree], gamma: f64) -> Result<Vec<ProportionRow>> {
    validate_gamma(gamma)?;
    let Some((first, last)) = month_span(trees) else {
        return Ok(Vec::new());
    };
    let mut counts: BTreeMap<Month, NodeCounts> = BTreeMap::new();
    for t in trees {
        for (node, o) in t.tree.nodes.iter().zip(&t.outcomes) {
            let c = counts.entry(Month::of(&node.timestamp)).or_default();
            match o {
                NodeOutcome::Excluded => c.excluded += 1,
                NodeOutcome::Scored { score, .. } => match score.label(gamma) {
                    SpeechLabel::Hate => c.hate += 1,
                    SpeechLabel::Counter => c.counter += 1,
                    SpeechLabel::Neutral => c.neutral += 1,
                },
            }
        }
    }
    Ok(Month::range(first, last)
        .map(|month| {
            let c = counts.get(&month).copied().unwrap_or_default();
            let n = c.hate + c.counter + c.neutral;
            let proportions = (n > 0).then(|| Proportions {
                hate: c.hate as f64 / n as f64,
                counter: c.counter as f64 / n as f64,
                other: c.neutral as f64 / n as f64,
                n,
            });
            ProportionRow {
                month,
                proportions,
                excluded: c.excluded,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremityRow {
    pub month: Month,
    /// Mean S_h over nodes with S_h > ½; `None` when there are none.
    pub hate: Option<f64>,
    /// Mean S_c over nodes with S_c > ½.
    pub counter: Option<f64>,
    pub n_hate: usize,
    pub n_counter: usize,
}

pub fn monthly_extremity(trees: &[LabeledTree]) -> Vec<ExtremityRow> {
    let Some((first, last)) = month_span(trees) else {
        return Vec::new();
    };
    let mut acc: BTreeMap<Month, (f64, usize, f64, usize)> = BTreeMap::new();
    for t in trees {
        for (node, score) in t.scored() {
            let e = acc.entry(Month::of(&node.timestamp)).or_default();
            if score.s_hate > 0.5 {
                e.0 += score.s_hate;
                e.1 += 1;
            }
            if score.s_counter > 0.5 {
                e.2 += score.s_counter;
                e.3 += 1;
            }
        }
    }
    Month::range(first, last)
        .map(|month| {
            let (sh, nh, sc, nc) = acc.get(&month).copied().unwrap_or_default();
            ExtremityRow {
                month,
                hate: (nh > 0).then(|| sh / nh as f64),
                counter: (nc > 0).then(|| sc / nc as f64),
                n_hate: nh,
                n_counter: nc,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Interaction profiles

/// Which nodes count as "following" a trigger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Following {
    /// Every node in the same tree with a strictly later timestamp.
    #[default]
    Later,
    /// Descendants of the trigger in the reply structure.
    Subtree,
}

impl std::str::FromStr for Following {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "later" => Ok(Following::Later),
            "subtree" => Ok(Following::Subtree),
            _ => Err(Error::Config(format!("unknown following mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionOptions {
    pub score_threshold: f64,
    pub min_each: usize,
    pub following: Following,
}

impl Default for InteractionOptions {
    fn default() -> Self {
        InteractionOptions {
            score_threshold: 0.70,
            min_each: 10,
            following: Following::Later,
        }
    }
}

/// Row = trigger type (Hate, Counter); column = following type
/// (Hate, Counter, Other). Each entry is the following-frequency divided by
/// the tree's base frequency, averaged over triggers then over trees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionProfile {
    pub entries: [[f64; 3]; 2],
    /// Trees contributing to each entry (an entry is undefined for a tree
    /// lacking that following type or any trigger with a nonempty window).
    pub trees: [[usize; 3]; 2],
    pub qualifying_trees: usize,
}

const HATE: usize = 0;
const COUNTER: usize = 1;
const OTHER: usize = 2;

fn kind(label: SpeechLabel) -> usize {
    match label {
        SpeechLabel::Hate => HATE,
        SpeechLabel::Counter => COUNTER,
        SpeechLabel::Neutral => OTHER,
    }
}

/// Per-tree profile, or `None` when the tree does not qualify.
fn tree_profile(tree: &LabeledTree, opts: &InteractionOptions) -> Option<[[Option<f64>; 3]; 2]> {
    // (timestamp, type, node index) over scored nodes
    let mut items: Vec<(DateTime<Utc>, usize, usize)> = tree
        .tree
        .nodes
        .iter()
        .zip(&tree.outcomes)
        .enumerate()
        .filter_map(|(i, (n, o))| match o {
            NodeOutcome::Scored { score, .. } => Some((n.timestamp, kind(score.label(opts.score_threshold)), i)),
            NodeOutcome::Excluded => None,
        })
        .collect();
    let mut base = [0usize; 3];
    for it in &items {
        base[it.1] += 1;
    }
    if base[HATE] < opts.min_each || base[COUNTER] < opts.min_each {
        return None;
    }
    let total = items.len() as f64;

    // following counts per trigger, in an id-independent order
    let mut windows: Vec<(usize, [usize; 3])> = Vec::new();
    match opts.following {
        Following::Later => {
            items.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut after = [0usize; 3];
            let mut j = items.len();
            // walk backwards one timestamp group at a time
            while j > 0 {
                let ts = items[j - 1].0;
                let mut i = j;
                while i > 0 && items[i - 1].0 == ts {
                    i -= 1;
                }
                for it in &items[i..j] {
                    if it.1 != OTHER {
                        windows.push((it.1, after));
                    }
                }
                for it in &items[i..j] {
                    after[it.1] += 1;
                }
                j = i;
            }
        }
        Following::Subtree => {
            let children = tree.tree.children();
            let mut node_kind = vec![None; tree.tree.len()];
            for it in &items {
                node_kind[it.2] = Some(it.1);
            }
            // post-order accumulation of descendant type counts
            let mut below = vec![[0usize; 3]; tree.tree.len()];
            let mut order = vec![tree.tree.root];
            let mut k = 0;
            while k < order.len() {
                let n = order[k];
                order.extend(&children[n]);
                k += 1;
            }
            for &n in order.iter().rev() {
                let mut acc = [0usize; 3];
                for &c in &children[n] {
                    for t in 0..3 {
                        acc[t] += below[c][t];
                    }
                    if let Some(ct) = node_kind[c] {
                        acc[ct] += 1;
                    }
                }
                below[n] = acc;
            }
            items.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            for it in &items {
                if it.1 != OTHER {
                    windows.push((it.1, below[it.2]));
                }
            }
        }
    }

    let mut sums = [[0.0f64; 3]; 2];
    let mut n_triggers = [0usize; 2];
    for (trigger, counts) in windows {
        let size: usize = counts.iter().sum();
        if size == 0 {
            continue;
        }
        n_triggers[trigger] += 1;
        for f in 0..3 {
            if base[f] > 0 {
                let freq = counts[f] as f64 / size as f64;
                sums[trigger][f] += freq / (base[f] as f64 / total);
            }
        }
    }
    let mut out = [[None; 3]; 2];
    for t in 0..2 {
        for f in 0..3 {
            if n_triggers[t] > 0 && base[f] > 0 {
                out[t][f] = Some(sums[t][f] / n_triggers[t] as f64);
            }
        }
    }
    Some(out)
}

pub fn interaction_profile(trees: &[LabeledTree], opts: &InteractionOptions) -> Result<InteractionProfile> {
    if !(0.5..=1.0).contains(&opts.score_threshold) {
        return Err(Error::Config(format!(
            "score threshold must lie in [0.5, 1], got {}",
            opts.score_threshold
        )));
    }
    let per_tree: Vec<_> = trees.par_iter().map(|t| tree_profile(t, opts)).collect();
    let mut sums = [[0.0; 3]; 2];
    let mut counts = [[0usize; 3]; 2];
    let mut qualifying = 0;
    for p in per_tree.into_iter().flatten() {
        qualifying += 1;
        for t in 0..2 {
            for f in 0..3 {
                if let Some(v) = p[t][f] {
                    sums[t][f] += v;
                    counts[t][f] += 1;
                }
            }
        }
    }
    if qualifying == 0 {
        return Err(Error::EmptyResult(format!(
            "no tree has at least {} hate and {} counter tweets at threshold {}",
            opts.min_each, opts.min_each, opts.score_threshold
        )));
    }
    let mut entries = [[f64::NAN; 3]; 2];
    for t in 0..2 {
        for f in 0..3 {
            if counts[t][f] > 0 {
                entries[t][f] = sums[t][f] / counts[t][f] as f64;
            }
        }
    }
    Ok(InteractionProfile {
        entries,
        trees: counts,
        qualifying_trees: qualifying,
    })
}

// ---------------------------------------------------------------------------
// Tables

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

pub fn proportions_tsv(rows: &[ProportionRow]) -> String {
    let mut s = String::from("month\thate\tcounter\tother\tn\texcluded\n");
    for r in rows {
        let p = r.proportions;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.month,
            opt(p.map(|p| p.hate)),
            opt(p.map(|p| p.counter)),
            opt(p.map(|p| p.other)),
            p.map_or(0, |p| p.n),
            r.excluded
        ));
    }
    s
}

pub fn extremity_tsv(rows: &[ExtremityRow]) -> String {
    let mut s = String::from("month\thate\tcounter\tn_hate\tn_counter\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.month,
            opt(r.hate),
            opt(r.counter),
            r.n_hate,
            r.n_counter
        ));
    }
    s
}

pub fn profile_tsv(p: &InteractionProfile) -> String {
    let mut s = String::from("trigger\thate\tcounter\tother\n");
    for (t, name) in ["hate", "counter"].iter().enumerate() {
        let cell = |f: usize| opt(p.entries[t][f].is_finite().then_some(p.entries[t][f]));
        s.push_str(&format!("{name}\t{}\t{}\t{}\n", cell(HATE), cell(COUNTER), cell(OTHER)));
    }
    s
}
