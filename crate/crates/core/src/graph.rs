//! Typed multi-relational graphs with dense node features and label splits.
//!
//! Storage is one CSR pair (forward and reverse) per relation, with every
//! neighbour list sorted ascending so traversal order is deterministic.
//! Node, type and relation ids are dense `u32` indices; the string names
//! from the TSV files are kept for display only.
//!
//! File formats (UTF-8, `\n` line endings, `.` decimal separator):
//!
//! * `nodes.tsv`  — header `id<TAB>type<TAB>f0,f1,...`; one row per node,
//!   features comma-separated. Ids must be dense `0..n`.
//! * `edges.tsv`  — header `src<TAB>rel<TAB>dst`; relation names are mapped
//!   to ids in first-appearance order.
//! * `labels.tsv` — header `node<TAB>class<TAB>split`; the `split` column
//!   (`train`/`val`/`test`) is optional, but must be present on every row
//!   or on none.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct RelationId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct NodeTypeId(pub u32);

impl NodeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl NodeTypeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which labelled partition a node belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Partition> {
        match s {
            "train" => Some(Partition::Train),
            "val" => Some(Partition::Val),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }
}

/// Compressed sparse rows: `row(i)` is the sorted neighbour list of node `i`.
#[derive(Clone, Debug)]
struct Csr {
    offsets: Vec<u32>,
    targets: Vec<NodeId>,
}

impl Csr {
    /// Builds from (src, dst) pairs; rows come out sorted ascending because
    /// the pairs are sorted before filling.
    fn build(num_nodes: usize, mut pairs: Vec<(NodeId, NodeId)>) -> Csr {
        pairs.sort_unstable();
        let mut offsets = vec![0u32; num_nodes + 1];
        for &(src, _) in &pairs {
            offsets[src.idx() + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.into_iter().map(|(_, dst)| dst).collect();
        Csr { offsets, targets }
    }

    #[inline]
    fn row(&self, i: usize) -> &[NodeId] {
        let lo = self.offsets[i] as usize;
        let hi = self.offsets[i + 1] as usize;
        &self.targets[lo..hi]
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

/// A heterogeneous graph: typed nodes with dense `f64` features and one
/// edge set per named relation. Self-loops and parallel edges are kept.
#[derive(Clone, Debug)]
pub struct HetGraph {
    node_type: Vec<NodeTypeId>,
    features: Vec<f64>,
    feature_dim: usize,
    type_names: Vec<String>,
    relation_names: Vec<String>,
    fwd: Vec<Csr>,
    rev: Vec<Csr>,
    /// src_types[r][t] — relation `r` has at least one edge leaving type `t`.
    src_types: Vec<Vec<bool>>,
    dst_types: Vec<Vec<bool>>,
}

impl HetGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn num_relations(&self) -> usize {
        self.fwd.len()
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn node_type(&self, i: NodeId) -> NodeTypeId {
        self.node_type[i.idx()]
    }

    pub fn features_of(&self, i: NodeId) -> &[f64] {
        let d = self.feature_dim;
        &self.features[i.idx() * d..(i.idx() + 1) * d]
    }

    pub fn type_name(&self, t: NodeTypeId) -> &str {
        &self.type_names[t.idx()]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relation_names[r.idx()]
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relation_names
            .iter()
            .position(|n| n == name)
            .map(|i| RelationId(i as u32))
    }

    /// Out-neighbours of `i` under relation `r`, sorted ascending.
    pub fn neighbors(&self, i: NodeId, r: RelationId) -> &[NodeId] {
        assert!(i.idx() < self.num_nodes(), "node id {i} out of range");
        assert!(r.idx() < self.num_relations(), "relation id {r} out of range");
        self.fwd[r.idx()].row(i.idx())
    }

    /// Nodes `j` with an edge `j -r-> i`, sorted ascending.
    pub fn reverse_neighbors(&self, i: NodeId, r: RelationId) -> &[NodeId] {
        assert!(i.idx() < self.num_nodes(), "node id {i} out of range");
        assert!(r.idx() < self.num_relations(), "relation id {r} out of range");
        self.rev[r.idx()].row(i.idx())
    }

    pub fn edge_count(&self, r: RelationId) -> usize {
        self.fwd[r.idx()].len()
    }

    pub fn total_edges(&self) -> usize {
        self.fwd.iter().map(Csr::len).sum()
    }

    /// True iff relation `r` has at least one edge leaving a node of type `t`.
    pub fn relation_leaves_type(&self, r: RelationId, t: NodeTypeId) -> bool {
        self.src_types[r.idx()][t.idx()]
    }

    /// True iff relation `r` has at least one edge entering a node of type `t`.
    pub fn relation_enters_type(&self, r: RelationId, t: NodeTypeId) -> bool {
        self.dst_types[r.idx()][t.idx()]
    }

    /// Internal consistency: forward and reverse CSRs describe the same edge
    /// multiset and every neighbour list is sorted.
    pub fn validate(&self) -> Result<()> {
        for r in 0..self.num_relations() {
            let (mut f, mut b) = (Vec::new(), Vec::new());
            for i in 0..self.num_nodes() {
                let row = self.fwd[r].row(i);
                if row.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::data(format!("relation {r}: unsorted forward row {i}")));
                }
                f.extend(row.iter().map(|&j| (NodeId(i as u32), j)));
                let rrow = self.rev[r].row(i);
                if rrow.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::data(format!("relation {r}: unsorted reverse row {i}")));
                }
                b.extend(rrow.iter().map(|&j| (j, NodeId(i as u32))));
            }
            f.sort_unstable();
            b.sort_unstable();
            if f != b {
                return Err(Error::data(format!(
                    "relation {r}: forward/reverse edge sets disagree"
                )));
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`HetGraph`]; used by the synthetic
/// generator and by tests. `build` checks id ranges and assembles the CSRs.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    type_names: Vec<String>,
    relation_names: Vec<String>,
    node_types: Vec<NodeTypeId>,
    features: Vec<f64>,
    feature_dim: usize,
    edges: Vec<(NodeId, RelationId, NodeId)>,
}

impl GraphBuilder {
    pub fn new(feature_dim: usize) -> GraphBuilder {
        GraphBuilder {
            feature_dim,
            ..GraphBuilder::default()
        }
    }

    pub fn add_type(&mut self, name: &str) -> NodeTypeId {
        if let Some(i) = self.type_names.iter().position(|n| n == name) {
            return NodeTypeId(i as u32);
        }
        self.type_names.push(name.to_owned());
        NodeTypeId((self.type_names.len() - 1) as u32)
    }

    pub fn add_relation(&mut self, name: &str) -> RelationId {
        if let Some(i) = self.relation_names.iter().position(|n| n == name) {
            return RelationId(i as u32);
        }
        self.relation_names.push(name.to_owned());
        RelationId((self.relation_names.len() - 1) as u32)
    }

    pub fn add_node(&mut self, ty: NodeTypeId, features: &[f64]) -> NodeId {
        assert_eq!(features.len(), self.feature_dim, "feature dim mismatch");
        self.node_types.push(ty);
        self.features.extend_from_slice(features);
        NodeId((self.node_types.len() - 1) as u32)
    }

    pub fn add_edge(&mut self, src: NodeId, rel: RelationId, dst: NodeId) {
        self.edges.push((src, rel, dst));
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn build(self) -> Result<HetGraph> {
        let n = self.node_types.len();
        let num_rel = self.relation_names.len();
        let num_ty = self.type_names.len();
        for &(src, rel, dst) in &self.edges {
            if src.idx() >= n || dst.idx() >= n {
                return Err(Error::data(format!(
                    "edge ({src}, {rel}, {dst}) references a node outside 0..{n}"
                )));
            }
            if rel.idx() >= num_rel {
                return Err(Error::data(format!("edge relation id {rel} out of range")));
            }
        }
        for &t in &self.node_types {
            if t.idx() >= num_ty {
                return Err(Error::data(format!("node type id {t} out of range")));
            }
        }

        let mut per_rel: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); num_rel];
        for (src, rel, dst) in &self.edges {
            per_rel[rel.idx()].push((*src, *dst));
        }
        let mut fwd = Vec::with_capacity(num_rel);
        let mut rev = Vec::with_capacity(num_rel);
        let mut src_types = vec![vec![false; num_ty]; num_rel];
        let mut dst_types = vec![vec![false; num_ty]; num_rel];
        for (r, pairs) in per_rel.into_iter().enumerate() {
            for &(s, d) in &pairs {
                src_types[r][self.node_types[s.idx()].idx()] = true;
                dst_types[r][self.node_types[d.idx()].idx()] = true;
            }
            let flipped = pairs.iter().map(|&(s, d)| (d, s)).collect();
            fwd.push(Csr::build(n, pairs));
            rev.push(Csr::build(n, flipped));
        }

        Ok(HetGraph {
            node_type: self.node_types,
            features: self.features,
            feature_dim: self.feature_dim,
            type_names: self.type_names,
            relation_names: self.relation_names,
            fwd,
            rev,
            src_types,
            dst_types,
        })
    }
}

/// A sequence of relation ids; hop `k` follows edges of `relations[k]`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct MetaPath(pub Vec<RelationId>);

impl MetaPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }

    /// Non-empty, ids in range, and consecutive hops type-compatible: some
    /// type both receives edges of hop `k` and emits edges of hop `k + 1`
    /// (compatibility is computed from the actual edges, not a schema).
    pub fn validate(&self, g: &HetGraph) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::data("meta-path must have length >= 1"));
        }
        for &r in &self.0 {
            if r.idx() >= g.num_relations() {
                return Err(Error::data(format!("meta-path relation id {r} out of range")));
            }
        }
        for w in self.0.windows(2) {
            let (a, b) = (w[0], w[1]);
            let compatible = (0..g.num_types()).any(|t| {
                let t = NodeTypeId(t as u32);
                g.relation_enters_type(a, t) && g.relation_leaves_type(b, t)
            });
            if !compatible {
                return Err(Error::data(format!(
                    "meta-path hop {}->{} type-incompatible ({} never ends where {} starts)",
                    a,
                    b,
                    g.relation_name(a),
                    g.relation_name(b)
                )));
            }
        }
        Ok(())
    }

    /// Dash-joined relation ids, e.g. `0-2-4`.
    pub fn display_ids(&self) -> String {
        self.0
            .iter()
            .map(|r| r.0.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn display_names(&self, g: &HetGraph) -> String {
        self.0
            .iter()
            .map(|&r| g.relation_name(r).to_owned())
            .collect::<Vec<_>>()
            .join(" > ")
    }
}

/// One row of `labels.tsv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelEntry {
    pub node: NodeId,
    pub class: u32,
    pub partition: Option<Partition>,
}

/// Labelled nodes partitioned into train/val/test. Entries are sorted by
/// node id; every labelled node is in exactly one partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSplit {
    entries: Vec<(NodeId, u32, Partition)>,
}

impl LabeledSplit {
    fn from_parts(mut entries: Vec<(NodeId, u32, Partition)>) -> Result<LabeledSplit> {
        entries.sort_unstable_by_key(|&(n, _, _)| n);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::data("duplicate node id in labels"));
        }
        Ok(LabeledSplit { entries })
    }

    /// Builds from entries that all carry an explicit partition.
    pub fn from_explicit(entries: &[LabelEntry]) -> Result<LabeledSplit> {
        let parts = entries
            .iter()
            .map(|e| {
                e.partition.ok_or_else(|| {
                    Error::data(format!("node {}: missing split; use split_labels", e.node))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSplit::from_parts(
            entries
                .iter()
                .zip(parts)
                .map(|(e, p)| (e.node, e.class, p))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest class id + 1.
    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|&(_, c, _)| c as usize + 1).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, u32, Partition)> + '_ {
        self.entries.iter().copied()
    }

    /// (nodes, classes) of one partition, node-id ascending.
    pub fn partition(&self, p: Partition) -> (Vec<NodeId>, Vec<u32>) {
        let mut nodes = Vec::new();
        let mut classes = Vec::new();
        for &(n, c, part) in &self.entries {
            if part == p {
                nodes.push(n);
                classes.push(c);
            }
        }
        (nodes, classes)
    }

    pub fn partition_len(&self, p: Partition) -> usize {
        self.entries.iter().filter(|&&(_, _, q)| q == p).count()
    }

    /// All labelled nodes regardless of partition, node-id ascending.
    pub fn labels(&self) -> Vec<(NodeId, u32)> {
        self.entries.iter().map(|&(n, c, _)| (n, c)).collect()
    }
}

/// Scales ratios to sum to 1. Returns the normalised triple and whether
/// anything changed (callers log a warning in that case).
pub fn normalize_ratios(ratios: [f64; 3]) -> Result<([f64; 3], bool)> {
    if ratios.iter().any(|&r| !r.is_finite() || r < 0.0) {
        return Err(Error::config(format!("split ratios must be >= 0, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if sum <= 0.0 {
        return Err(Error::config("split ratios must not all be zero"));
    }
    if (sum - 1.0).abs() < 1e-12 {
        return Ok((ratios, false));
    }
    Ok(([ratios[0] / sum, ratios[1] / sum, ratios[2] / sum], true))
}

/// Stratified train/val/test assignment: per class, a seeded shuffle is cut
/// into partitions sized by largest-remainder rounding of the ratios, so
/// counts are within one node of class-proportional. Each class keeps at
/// least one training node when the train ratio is positive. Deterministic
/// for a fixed seed.
pub fn split_labels(labels: &[(NodeId, u32)], ratios: [f64; 3], seed: u64) -> Result<LabeledSplit> {
    let (ratios, changed) = normalize_ratios(ratios)?;
    if changed {
        log::warn!("split ratios did not sum to 1; normalized to {ratios:?}");
    }
    let mut by_class: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for &(n, c) in labels {
        by_class.entry(c).or_default().push(n);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(labels.len());
    for (class, mut nodes) in by_class {
        nodes.sort_unstable();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data(format!("duplicate node id in class {class} labels")));
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        let mut counts = [0usize; 3];
        let mut rem: Vec<(f64, usize)> = Vec::with_capacity(3);
        let mut assigned = 0;
        for (k, &r) in ratios.iter().enumerate() {
            let exact = r * n as f64;
            counts[k] = exact.floor() as usize;
            assigned += counts[k];
            rem.push((exact - exact.floor(), k));
        }
        // Distribute the remainder by largest fractional part, ties going
        // to train, then val, then test.
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for i in 0..(n - assigned) {
            counts[rem[i % 3].1] += 1;
        }
        if counts[0] == 0 && n > 0 && ratios[0] > 0.0 {
            let donor = if counts[1] >= counts[2] { 1 } else { 2 };
            counts[donor] -= 1;
            counts[0] += 1;
        }
        let mut it = nodes.into_iter();
        for (k, part) in Partition::ALL.iter().enumerate() {
            for _ in 0..counts[k] {
                out.push((it.next().unwrap(), class, *part));
            }
        }
    }
    LabeledSplit::from_parts(out)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line?);
    }
    Ok(lines)
}

fn parse_feature_header(field: &str) -> usize {
    let field = field.trim();
    if field.is_empty() {
        0
    } else {
        field.split(',').count()
    }
}

/// Loads `nodes.tsv` + `edges.tsv` from `dir`. Node ids must be dense
/// `0..n`; every edge endpoint must exist. Errors carry file and line.
pub fn load_graph(dir: &Path) -> Result<HetGraph> {
    let nodes_path = dir.join("nodes.tsv");
    let edges_path = dir.join("edges.tsv");

    let lines = read_lines(&nodes_path)?;
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(&nodes_path, 1, "empty file"))?;
    let hcols: Vec<&str> = header.split('\t').collect();
    if hcols.len() < 2 || hcols[0] != "id" || hcols[1] != "type" {
        return Err(Error::parse(&nodes_path, 1, "header must be id<TAB>type<TAB>f0,f1,..."));
    }
    let dim = if hcols.len() > 2 { parse_feature_header(hcols[2]) } else { 0 };

    struct Row {
        ty: String,
        feats: Vec<f64>,
    }
    let mut rows: BTreeMap<u32, (usize, Row)> = BTreeMap::new();
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(Error::parse(&nodes_path, lineno, "expected id<TAB>type<TAB>features"));
        }
        let id: u32 = cols[0]
            .parse()
            .map_err(|_| Error::parse(&nodes_path, lineno, format!("bad node id {:?}", cols[0])))?;
        let feats = if dim == 0 {
            Vec::new()
        } else {
            let field = cols.get(2).copied().unwrap_or("").trim();
            let parts: Vec<&str> = if field.is_empty() { Vec::new() } else { field.split(',').collect() };
            if parts.len() != dim {
                return Err(Error::parse(
                    &nodes_path,
                    lineno,
                    format!("expected {dim} features, found {}", parts.len()),
                ));
            }
            parts
                .iter()
                .map(|p| {
                    p.trim().parse::<f64>().map_err(|_| {
                        Error::parse(&nodes_path, lineno, format!("bad feature value {p:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?
        };
        if rows
            .insert(id, (lineno, Row { ty: cols[1].to_owned(), feats }))
            .is_some()
        {
            return Err(Error::parse(&nodes_path, lineno, format!("duplicate node id {id}")));
        }
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::parse(&nodes_path, 1, "no nodes"));
    }
    if rows.keys().last() != Some(&((n - 1) as u32)) || rows.keys().next() != Some(&0) {
        return Err(Error::parse(
            &nodes_path,
            1,
            format!("node ids must be dense 0..{n}"),
        ));
    }

    let mut builder = GraphBuilder::new(dim);
    for (_, (_, row)) in rows {
        let ty = builder.add_type(&row.ty);
        builder.add_node(ty, &row.feats);
    }

    let lines = read_lines(&edges_path)?;
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(&edges_path, 1, "empty file"))?;
    if header.split('\t').collect::<Vec<_>>() != ["src", "rel", "dst"] {
        return Err(Error::parse(&edges_path, 1, "header must be src<TAB>rel<TAB>dst"));
    }
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(&edges_path, lineno, "expected src<TAB>rel<TAB>dst"));
        }
        let src: u32 = cols[0]
            .parse()
            .map_err(|_| Error::parse(&edges_path, lineno, format!("bad src id {:?}", cols[0])))?;
        let dst: u32 = cols[2]
            .parse()
            .map_err(|_| Error::parse(&edges_path, lineno, format!("bad dst id {:?}", cols[2])))?;
        for (name, id) in [("src", src), ("dst", dst)] {
            if id as usize >= n {
                return Err(Error::parse(
                    &edges_path,
                    lineno,
                    format!("{name} references unknown node id {id}"),
                ));
            }
        }
        let rel = builder.add_relation(cols[1]);
        builder.add_edge(NodeId(src), rel, NodeId(dst));
    }

    builder.build()
}

/// Loads `labels.tsv`, checking every node id against `g`. The split column
/// must be present on all rows or absent on all rows.
pub fn load_labels(path: &Path, g: &HetGraph) -> Result<Vec<LabelEntry>> {
    let lines = read_lines(path)?;
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let hcols: Vec<&str> = header.split('\t').collect();
    let has_split = match hcols.as_slice() {
        ["node", "class"] => false,
        ["node", "class", "split"] => true,
        _ => return Err(Error::parse(path, 1, "header must be node<TAB>class[<TAB>split]")),
    };
    let mut entries = Vec::new();
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != if has_split { 3 } else { 2 } {
            return Err(Error::parse(path, lineno, "wrong column count"));
        }
        let node: u32 = cols[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {:?}", cols[0])))?;
        if node as usize >= g.num_nodes() {
            return Err(Error::parse(path, lineno, format!("unknown node id {node}")));
        }
        let class: u32 = cols[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad class {:?}", cols[1])))?;
        let partition = if has_split {
            Some(Partition::parse(cols[2].trim()).ok_or_else(|| {
                Error::parse(path, lineno, format!("bad split {:?} (train/val/test)", cols[2]))
            })?)
        } else {
            None
        };
        entries.push(LabelEntry { node: NodeId(node), class, partition });
    }
    Ok(entries)
}

/// Writes `nodes.tsv` + `edges.tsv` into `dir` in the format [`load_graph`]
/// reads. Feature values use the shortest decimal form that parses back to
/// the same `f64`, so a save/load roundtrip is exact.
pub fn save_graph(g: &HetGraph, dir: &Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;

    let mut out = BufWriter::new(std::fs::File::create(dir.join("nodes.tsv"))?);
    let d = g.feature_dim();
    let header: Vec<String> = (0..d).map(|k| format!("f{k}")).collect();
    if d > 0 {
        writeln!(out, "id\ttype\t{}", header.join(","))?;
    } else {
        writeln!(out, "id\ttype")?;
    }
    for i in 0..g.num_nodes() {
        let node = NodeId(i as u32);
        let ty = g.type_name(g.node_type(node));
        if d > 0 {
            let feats: Vec<String> = g.features_of(node).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i}\t{ty}\t{}", feats.join(","))?;
        } else {
            writeln!(out, "{i}\t{ty}")?;
        }
    }
    out.flush()?;

    let mut out = BufWriter::new(std::fs::File::create(dir.join("edges.tsv"))?);
    writeln!(out, "src\trel\tdst")?;
    for r in 0..g.num_relations() {
        let rel = RelationId(r as u32);
        let name = g.relation_name(rel);
        for i in 0..g.num_nodes() {
            for j in g.neighbors(NodeId(i as u32), rel) {
                writeln!(out, "{i}\t{name}\t{j}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `labels.tsv` with the split column.
pub fn save_labels(split: &LabeledSplit, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "node\tclass\tsplit")?;
    for (node, class, part) in split.iter() {
        writeln!(out, "{node}\t{class}\t{}", part.as_str())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_type_graph() -> HetGraph {
        let mut b = GraphBuilder::new(1);
        let a = b.add_type("A");
        let m = b.add_type("B");
        let r = b.add_relation("r");
        let n0 = b.add_node(a, &[0.0]);
        let n1 = b.add_node(m, &[1.0]);
        let n2 = b.add_node(m, &[2.0]);
        b.add_edge(n0, r, n2);
        b.add_edge(n0, r, n1);
        b.build().unwrap()
    }

    #[test]
    fn neighbors_sorted_ascending() {
        let g = two_type_graph();
        assert_eq!(g.neighbors(NodeId(0), RelationId(0)), &[NodeId(1), NodeId(2)]);
        assert!(g.neighbors(NodeId(1), RelationId(0)).is_empty());
        g.validate().unwrap();
    }

    #[test]
    fn reverse_neighbors_match_brute_force() {
        let mut b = GraphBuilder::new(0);
        let t = b.add_type("T");
        let r = b.add_relation("r");
        let n = 12;
        for _ in 0..n {
            b.add_node(t, &[]);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut edges = Vec::new();
        for _ in 0..50 {
            let s = NodeId(rng.gen_range(0..n));
            let d = NodeId(rng.gen_range(0..n));
            b.add_edge(s, r, d);
            edges.push((s, d));
        }
        let g = b.build().unwrap();
        g.validate().unwrap();
        for i in 0..n {
            let i = NodeId(i);
            let mut expect: Vec<NodeId> =
                edges.iter().filter(|&&(_, d)| d == i).map(|&(s, _)| s).collect();
            expect.sort_unstable();
            assert_eq!(g.reverse_neighbors(i, r), expect.as_slice());
        }
    }

    #[test]
    fn builder_rejects_out_of_range_edge() {
        let mut b = GraphBuilder::new(0);
        let t = b.add_type("T");
        let r = b.add_relation("r");
        b.add_node(t, &[]);
        b.add_edge(NodeId(0), r, NodeId(99));
        assert!(b.build().is_err());
    }

    #[test]
    fn metapath_validity_follows_the_data() {
        let mut b = GraphBuilder::new(0);
        let a = b.add_type("A");
        let c = b.add_type("B");
        let d = b.add_type("C");
        let r0 = b.add_relation("r0"); // A -> B
        let r1 = b.add_relation("r1"); // B -> C
        let r2 = b.add_relation("r2"); // C -> A
        let na = b.add_node(a, &[]);
        let nb = b.add_node(c, &[]);
        let nc = b.add_node(d, &[]);
        b.add_edge(na, r0, nb);
        b.add_edge(nb, r1, nc);
        b.add_edge(nc, r2, na);
        let g = b.build().unwrap();

        MetaPath(vec![r0, r1]).validate(&g).unwrap();
        MetaPath(vec![r0, r1, r2]).validate(&g).unwrap();
        assert!(MetaPath(vec![r0, r2]).validate(&g).is_err());
        assert!(MetaPath(vec![]).validate(&g).is_err());
    }

    #[test]
    fn metapath_accepts_every_instantiated_pair() {
        // Any two consecutive edges found in the graph must validate.
        let mut b = GraphBuilder::new(0);
        let t0 = b.add_type("T0");
        let t1 = b.add_type("T1");
        let rels: Vec<RelationId> = (0..3).map(|i| b.add_relation(&format!("r{i}"))).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for i in 0..20 {
            b.add_node(if i % 2 == 0 { t0 } else { t1 }, &[]);
        }
        for _ in 0..60 {
            let s = NodeId(rng.gen_range(0..20));
            let d = NodeId(rng.gen_range(0..20));
            let r = rels[rng.gen_range(0..3)];
            b.add_edge(s, r, d);
        }
        let g = b.build().unwrap();
        for i in 0..20u32 {
            for &ra in &rels {
                for &mid in g.neighbors(NodeId(i), ra) {
                    for &rb in &rels {
                        if !g.neighbors(mid, rb).is_empty() {
                            MetaPath(vec![ra, rb]).validate(&g).unwrap();
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let labels: Vec<(NodeId, u32)> =
            (0..100).map(|i| (NodeId(i), (i % 2) as u32)).collect();
        let s1 = split_labels(&labels, [0.8, 0.1, 0.1], 42).unwrap();
        let s2 = split_labels(&labels, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(s1, s2);
        let s3 = split_labels(&labels, [0.8, 0.1, 0.1], 43).unwrap();
        assert_ne!(s1, s3);

        // 50 nodes per class: exactly 40/5/5 each.
        for (p, want) in [(Partition::Train, 80), (Partition::Val, 10), (Partition::Test, 10)] {
            assert_eq!(s1.partition_len(p), want);
        }
        for class in 0..2u32 {
            for (p, want) in [(Partition::Train, 40), (Partition::Val, 5), (Partition::Test, 5)] {
                let (nodes, classes) = s1.partition(p);
                let got = nodes
                    .iter()
                    .zip(&classes)
                    .filter(|&(_, &c)| c == class)
                    .count();
                assert_eq!(got, want, "class {class} {p:?}");
            }
        }
    }

    #[test]
    fn ten_nodes_one_class_default_ratios() {
        let labels: Vec<(NodeId, u32)> = (0..10).map(|i| (NodeId(i), 0)).collect();
        let s = split_labels(&labels, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(s.partition_len(Partition::Train), 8);
        assert_eq!(s.partition_len(Partition::Val), 1);
        assert_eq!(s.partition_len(Partition::Test), 1);
    }

    #[test]
    fn ratios_are_normalized() {
        let (r, changed) = normalize_ratios([8.0, 2.0, 1.0]).unwrap();
        assert!(changed);
        let sum: f64 = r.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((r[0] - 8.0 / 11.0).abs() < 1e-12);
        assert!(normalize_ratios([0.0, 0.0, 0.0]).is_err());
        assert!(!normalize_ratios([0.8, 0.1, 0.1]).unwrap().1);
    }

    #[test]
    fn every_class_keeps_a_training_node() {
        // 3 nodes in a rare class with ratios that would round train to 0.
        let mut labels: Vec<(NodeId, u32)> = (0..97).map(|i| (NodeId(i), 0)).collect();
        labels.extend((97..100).map(|i| (NodeId(i), 1)));
        let s = split_labels(&labels, [0.2, 0.4, 0.4], 9).unwrap();
        let (_, classes) = s.partition(Partition::Train);
        assert!(classes.contains(&1));
    }
}
