//! Immutable text-attributed graph storage.
//!
//! Adjacency is kept in compressed sparse row form: the neighbors of node
//! `v` are `targets[offsets[v]..offsets[v + 1]]`, strictly ascending. Graphs
//! are undirected; every edge is stored in both directions and self-loops
//! are dropped on ingestion.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::binio;
use crate::error::{Error, Result};
use crate::rng;

pub type NodeId = usize;

const FEATURE_MAGIC: [u8; 4] = *b"LGFM";

/// Dense node feature matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("feature dim must be positive"));
        }
        if values.len() != rows * dim {
            return Err(Error::shape(format!(
                "expected {} feature values for {rows}x{dim}, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Panics if `i >= rows`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get_row(&self, i: usize) -> Option<&[f64]> {
        (i < self.rows).then(|| self.row(i))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, FEATURE_MAGIC)?;
        binio::read_version(r)?;
        let rows = binio::read_u32(r, "rows")? as usize;
        let dim = binio::read_u32(r, "dim")? as usize;
        let n = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::shape("feature shape overflows"))?;
        let raw = binio::read_f32s(r, n, &format!("feature payload of {n} values"))?;
        Self::new(rows, dim, raw.into_iter().map(f64::from).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&FEATURE_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.rows, "rows")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.dim, "dim")?.to_le_bytes())?;
        binio::write_f32s(w, self.values.iter().copied())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStore {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    features: Option<FeatureMatrix>,
    labels: Vec<Option<usize>>,
    category_names: Vec<String>,
    node_texts: Option<Vec<String>>,
}

impl GraphStore {
    /// Builds a symmetrized, deduplicated graph. Self-loops are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut pairs = Vec::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        Ok(Self::from_directed_pairs(num_nodes, pairs))
    }

    fn from_directed_pairs(num_nodes: usize, mut pairs: Vec<(NodeId, NodeId)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.into_iter().map(|(_, v)| v).collect();
        Self {
            num_nodes,
            offsets,
            targets,
            features: None,
            labels: vec![None; num_nodes],
            category_names: Vec::new(),
            node_texts: None,
        }
    }

    pub fn with_features(mut self, features: FeatureMatrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::shape(format!(
                "feature matrix has {} rows, graph has {} nodes",
                features.rows(),
                self.num_nodes
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>, category_names: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        if let Some((node, &Some(c))) = labels
            .iter()
            .enumerate()
            .find(|(_, l)| matches!(l, Some(c) if *c >= category_names.len()))
        {
            return Err(Error::invalid(format!(
                "node {node} has category {c}, only {} categories named",
                category_names.len()
            )));
        }
        self.labels = labels;
        self.category_names = category_names;
        Ok(self)
    }

    pub fn with_texts(mut self, texts: Vec<String>) -> Result<Self> {
        if texts.len() != self.num_nodes {
            return Err(Error::shape(format!(
                "{} node texts for {} nodes",
                texts.len(),
                self.num_nodes
            )));
        }
        self.node_texts = Some(texts);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: NodeId) -> Option<usize> {
        self.labels.get(v).copied().flatten()
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn node_text(&self, v: NodeId) -> Option<&str> {
        self.node_texts.as_ref()?.get(v).map(String::as_str)
    }

    pub fn node_texts(&self) -> Option<&[String]> {
        self.node_texts.as_deref()
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if v >= self.num_nodes {
            Err(Error::NodeOutOfRange {
                id: v,
                num_nodes: self.num_nodes,
            })
        } else {
            Ok(())
        }
    }

    /// Ascending 1-hop neighbor list.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.check(v)?;
        Ok(self.neighbors_unchecked(v))
    }

    #[inline]
    pub(crate) fn neighbors_unchecked(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> Result<usize> {
        Ok(self.neighbors(v)?.len())
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.num_nodes && v < self.num_nodes && self.neighbors_unchecked(u).binary_search(&v).is_ok()
    }

    /// Canonical `(u, v)` edge list with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors_unchecked(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// Nodes at shortest-path distance exactly `k` from `v`.
    pub fn k_hop_set(&self, v: NodeId, k: usize) -> Result<BTreeSet<NodeId>> {
        self.check(v)?;
        if k == 0 {
            return Err(Error::invalid("k_hop_set requires k >= 1"));
        }
        let mut seen = HashSet::from([v]);
        let mut frontier = VecDeque::from([v]);
        for _ in 0..k {
            let mut next = VecDeque::new();
            for u in frontier {
                for &w in self.neighbors_unchecked(u) {
                    if seen.insert(w) {
                        next.push_back(w);
                    }
                }
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }
        Ok(frontier.into_iter().collect())
    }
}

/// Parses an edge list (`<u> <v>` per line, tab or space separated).
pub fn parse_edge_list<R: BufRead>(reader: R, num_nodes: usize) -> Result<GraphStore> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split([' ', '\t']).filter(|s| !s.is_empty());
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected two node ids, got {trimmed:?}"),
            });
        };
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad node id {s:?}: {e}"),
            })
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for id in [u, v] {
            if id >= num_nodes {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("node id {id} >= num_nodes {num_nodes}"),
                });
            }
        }
        if u != v {
            pairs.push((u, v));
            pairs.push((v, u));
        }
    }
    Ok(GraphStore::from_directed_pairs(num_nodes, pairs))
}

pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<GraphStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(BufReader::new(file), num_nodes)
}

pub fn write_edge_list(g: &GraphStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, v) in g.edges() {
        writeln!(w, "{u}\t{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `<node_id><tab><category_index>` lines. Unlisted nodes stay unlabeled.
pub fn parse_labels<R: BufRead>(reader: R, num_nodes: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; num_nodes];
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (node, cat) = trimmed
            .split_once('\t')
            .ok_or_else(|| bad(format!("expected <node>\\t<category>, got {trimmed:?}")))?;
        let node: usize = node
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad node id: {e}")))?;
        let cat: usize = cat
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad category index: {e}")))?;
        if node >= num_nodes {
            return Err(bad(format!("node id {node} >= num_nodes {num_nodes}")));
        }
        labels[node] = Some(cat);
    }
    Ok(labels)
}

pub fn load_labels(path: impl AsRef<Path>, num_nodes: usize) -> Result<Vec<Option<usize>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(BufReader::new(file), num_nodes)
}

/// One entry per line; line `i` belongs to index `i`.
pub fn load_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()).map_err(Error::from))
        .collect()
}

pub fn write_labels(g: &GraphStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (v, l) in g.labels().iter().enumerate() {
        if let Some(c) = l {
            writeln!(w, "{v}\t{c}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_lines(lines: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Valid, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?} (expected train, valid or test)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    assignment: Vec<SplitKind>,
    seed: u64,
    ratios: [f64; 3],
}

impl Split {
    /// Wraps an explicit assignment (e.g. a published split).
    pub fn from_assignment(assignment: Vec<SplitKind>, seed: u64, ratios: [f64; 3]) -> Self {
        Self {
            assignment,
            seed,
            ratios,
        }
    }

    pub fn assignment(&self) -> &[SplitKind] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ratios(&self) -> [f64; 3] {
        self.ratios
    }

    pub fn kind(&self, v: NodeId) -> SplitKind {
        self.assignment[v]
    }

    /// Ascending node ids assigned to `kind`.
    pub fn nodes(&self, kind: SplitKind) -> Vec<NodeId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == kind)
            .map(|(v, _)| v)
            .collect()
    }

    /// `(train, valid, test)` sizes.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |k| self.assignment.iter().filter(|&&a| a == k).count();
        (
            count(SplitKind::Train),
            count(SplitKind::Valid),
            count(SplitKind::Test),
        )
    }
}

/// Shuffles nodes with a seeded permutation, then cuts at the rounded
/// cumulative boundaries of the normalized ratios.
pub fn make_splits(g: &GraphStore, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::invalid("split ratios must be finite and nonnegative"));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("split ratios must not all be zero"));
    }
    let n = g.num_nodes();
    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(&[rng::TAG_SPLIT, seed]));

    let cut = |cum: f64| ((n as f64) * cum / total).round() as usize;
    let train_end = cut(ratios[0]).min(n);
    let valid_end = cut(ratios[0] + ratios[1]).clamp(train_end, n);

    let mut assignment = vec![SplitKind::Test; n];
    for (pos, &v) in order.iter().enumerate() {
        assignment[v] = if pos < train_end {
            SplitKind::Train
        } else if pos < valid_end {
            SplitKind::Valid
        } else {
            SplitKind::Test
        };
    }
    Ok(Split {
        assignment,
        seed,
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkPair {
    pub u: NodeId,
    pub v: NodeId,
    pub connected: bool,
    pub split: SplitKind,
}

const NEGATIVE_ATTEMPTS_PER_PAIR: usize = 1000;

/// Balanced link pairs drawn among the nodes of one split.
///
/// Positives are uniform (with replacement) over edges whose endpoints both
/// lie in the split; negatives are rejection-sampled non-edges. The result
/// is shuffled so labels are interleaved.
pub fn sample_link_pairs(
    g: &GraphStore,
    split: &Split,
    kind: SplitKind,
    count: usize,
    seed: u64,
) -> Result<Vec<LinkPair>> {
    if count < 2 || !count.is_multiple_of(2) {
        return Err(Error::invalid(format!("link pair count must be even and >= 2, got {count}")));
    }
    let nodes = split.nodes(kind);
    if nodes.len() < 2 {
        return Err(Error::Sampling(format!(
            "{} split has {} nodes, need at least 2",
            kind.name(),
            nodes.len()
        )));
    }
    let in_split: Vec<bool> = split.assignment().iter().map(|&k| k == kind).collect();
    let internal: Vec<(NodeId, NodeId)> = g
        .edges()
        .filter(|&(u, v)| in_split[u] && in_split[v])
        .collect();
    if internal.is_empty() {
        return Err(Error::Sampling(format!("{} split has no internal edges", kind.name())));
    }
    let m = nodes.len();
    if internal.len() == m * (m - 1) / 2 {
        return Err(Error::Sampling(format!("{} split is complete: no non-edges", kind.name())));
    }

    let half = count / 2;
    let mut rng = rng::rng_for(&[rng::TAG_LINK, seed, kind as u64]);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..half {
        let (u, v) = internal[rng.random_range(0..internal.len())];
        pairs.push(LinkPair {
            u,
            v,
            connected: true,
            split: kind,
        });
    }
    let max_attempts = NEGATIVE_ATTEMPTS_PER_PAIR * count;
    let mut attempts = 0;
    while pairs.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampling(format!(
                "gave up after {max_attempts} attempts drawing negative pairs"
            )));
        }
        let a = nodes[rng.random_range(0..m)];
        let b = nodes[rng.random_range(0..m)];
        if a == b || g.has_edge(a, b) {
            continue;
        }
        pairs.push(LinkPair {
            u: a.min(b),
            v: a.max(b),
            connected: false,
            split: kind,
        });
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}
