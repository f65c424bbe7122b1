//! Per-query subgraph extraction.
//!
//! For a pair `(source, target)` the query graph holds every fact lying on
//! at least one simple path of bounded length between the two entities,
//! with traversal allowed in either direction. Edge 0 is always the fake
//! fact `source -> target` whose relation is unknown.

use std::collections::{HashMap, VecDeque};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{data_line, strip_inverse, EntityId, FactId, KnowledgeBase, RelationId, TypeId};

/// Default bound on path length used for extraction.
pub const DEFAULT_MAX_PATH_LEN: usize = 6;

/// Class index of the null relation.
pub const NULL_CLASS: usize = 0;
pub const NULL_CLASS_NAME: &str = "null";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Target-relation classes. Class 0 is the null relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocab {
    names: Vec<String>,
}

impl Default for ClassVocab {
    fn default() -> Self {
        Self {
            names: vec![NULL_CLASS_NAME.to_owned()],
        }
    }
}

impl ClassVocab {
    pub fn from_names<S: AsRef<str>>(relations: &[S]) -> Self {
        let mut v = Self::default();
        for r in relations {
            v.intern(r.as_ref());
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(i) = self.get(name) {
            return i;
        }
        self.names.push(name.to_owned());
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, class: usize) -> &str {
        self.names.get(class).map(String::as_str).unwrap_or("?")
    }

    /// Number of classes including null.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A link-prediction query. Negative queries keep the relation they are a
/// negative for (used by per-relation metrics) but are labelled null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub source: EntityId,
    pub target: EntityId,
    pub relation: Option<usize>,
    pub polarity: Polarity,
}

impl Query {
    pub fn label(&self) -> usize {
        match self.polarity {
            Polarity::Positive => self.relation.unwrap_or(NULL_CLASS),
            Polarity::Negative => NULL_CLASS,
        }
    }
}

/// Parses a query file (`source<TAB>target<TAB>relation<TAB>{+,-}`).
///
/// Rows naming entities unknown to the KB are skipped; their line numbers
/// are returned alongside the parsed queries.
pub fn load_queries<R: BufRead>(
    reader: R,
    kb: &KnowledgeBase,
    classes: &mut ClassVocab,
) -> Result<(Vec<Query>, Vec<usize>)> {
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for (n, raw) in reader.lines().enumerate() {
        let line_no = n + 1;
        let raw = raw.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let Some(line) = data_line(&raw) else {
            continue;
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let polarity = match fields[3].trim() {
            "+" => Polarity::Positive,
            "-" => Polarity::Negative,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("polarity must be + or -, got `{other}`"),
                })
            }
        };
        let (relation, inverted) = strip_inverse(fields[2]);
        let relation = if relation.is_empty() || relation == NULL_CLASS_NAME {
            if polarity == Polarity::Positive {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "positive query without a target relation".into(),
                });
            }
            None
        } else {
            Some(classes.intern(relation))
        };
        let (s, t) = if inverted {
            (fields[1], fields[0])
        } else {
            (fields[0], fields[1])
        };
        match (kb.entity(s), kb.entity(t)) {
            (Some(source), Some(target)) => queries.push(Query {
                source,
                target,
                relation,
                polarity,
            }),
            _ => {
                log::warn!("query line {line_no}: unknown entity, skipped");
                skipped.push(line_no);
            }
        }
    }
    Ok((queries, skipped))
}

pub fn write_queries<W: std::io::Write>(
    mut w: W,
    queries: &[Query],
    kb: &KnowledgeBase,
    classes: &ClassVocab,
) -> std::io::Result<()> {
    for q in queries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            kb.entity_name(q.source),
            kb.entity_name(q.target),
            q.relation.map_or(NULL_CLASS_NAME, |r| classes.name(r)),
            match q.polarity {
                Polarity::Positive => "+",
                Polarity::Negative => "-",
            }
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub entity: EntityId,
    pub types: Vec<TypeId>,
}

/// A local edge. `relation` is `None` only for the fake fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub relation: Option<RelationId>,
    pub fact: Option<FactId>,
}

/// Counts over the simple source-target paths of a query graph. Parallel
/// facts make distinct paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathStats {
    pub path_count: u64,
    pub avg_path_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    stats: PathStats,
}

impl QueryGraph {
    /// Builds a graph from explicit parts. `edges[0]` must be the fake fact.
    pub fn from_parts(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>) -> Result<Self> {
        let Some(fake) = edges.first() else {
            return Err(Error::InvalidArgument("query graph needs the fake edge".into()));
        };
        if fake.relation.is_some() || fake.source == fake.target {
            return Err(Error::InvalidArgument(
                "edge 0 must be a fake edge between distinct nodes".into(),
            ));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(Error::InvalidArgument(format!(
                    "edge {i} references a node outside 0..{}",
                    nodes.len()
                )));
            }
            if i > 0 && e.relation.is_none() {
                return Err(Error::InvalidArgument(format!("edge {i} lacks a relation")));
            }
        }
        let mut g = Self {
            nodes,
            edges,
            stats: PathStats::default(),
        };
        g.stats = g.local_path_stats(g.nodes.len());
        Ok(g)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn source_local(&self) -> usize {
        self.edges[0].source
    }

    pub fn target_local(&self) -> usize {
        self.edges[0].target
    }

    pub fn stats(&self) -> PathStats {
        self.stats
    }

    pub fn incidence(&self) -> Incidence {
        build_incidence(self)
    }

    /// Simple-path statistics on the local graph (fake edge excluded).
    fn local_path_stats(&self, max_len: usize) -> PathStats {
        let n = self.nodes.len();
        let mut adj = NeighborLists::new(n);
        for e in &self.edges[1..] {
            adj.add(e.source, e.target);
        }
        let dist_t = adj.bfs(self.target_local(), max_len);
        let mut acc = PathAccumulator::default();
        enumerate_simple_paths(&adj, self.source_local(), self.target_local(), max_len, &dist_t, &mut |p, m| {
            acc.record(p, m)
        });
        acc.stats()
    }
}

/// Undirected multigraph with parallel edges collapsed to multiplicities.
struct NeighborLists {
    adj: Vec<Vec<(usize, u64)>>,
}

impl NeighborLists {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, u: usize, v: usize) {
        if u == v {
            return;
        }
        for (a, b) in [(u, v), (v, u)] {
            match self.adj[a].iter_mut().find(|(x, _)| *x == b) {
                Some(slot) => slot.1 += 1,
                None => self.adj[a].push((b, 1)),
            }
        }
    }

    fn bfs(&self, start: usize, max_depth: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.adj.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            if dist[u] >= max_depth {
                continue;
            }
            for &(v, _) in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

#[derive(Default)]
struct PathAccumulator {
    count: u64,
    weighted_len: f64,
}

impl PathAccumulator {
    fn record(&mut self, path: &[usize], multiplicity: u64) {
        self.count = self.count.saturating_add(multiplicity);
        self.weighted_len += multiplicity as f64 * (path.len() - 1) as f64;
    }

    fn stats(&self) -> PathStats {
        PathStats {
            path_count: self.count,
            avg_path_len: if self.count == 0 {
                0.0
            } else {
                self.weighted_len / self.count as f64
            },
        }
    }
}

/// Depth-first enumeration of simple node paths `s -> t` with at most
/// `max_len` edges. `visit` receives each path and its fact-level multiplicity.
fn enumerate_simple_paths(
    adj: &NeighborLists,
    s: usize,
    t: usize,
    max_len: usize,
    dist_t: &[usize],
    visit: &mut dyn FnMut(&[usize], u64),
) {
    #[allow(clippy::too_many_arguments)]
    fn go(
        adj: &NeighborLists,
        t: usize,
        max_len: usize,
        dist_t: &[usize],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        mult: u64,
        visit: &mut dyn FnMut(&[usize], u64),
    ) {
        let u = *path.last().unwrap();
        let depth = path.len() - 1;
        for &(v, m) in &adj.adj[u] {
            if on_path[v] {
                continue;
            }
            let mult = mult.saturating_mul(m);
            if v == t {
                path.push(v);
                visit(path, mult);
                path.pop();
            } else if dist_t[v] != usize::MAX && depth + 1 + dist_t[v] <= max_len {
                path.push(v);
                on_path[v] = true;
                go(adj, t, max_len, dist_t, path, on_path, mult, visit);
                on_path[v] = false;
                path.pop();
            }
        }
    }
    if dist_t[s] == usize::MAX || dist_t[s] > max_len {
        return;
    }
    let mut on_path = vec![false; adj.adj.len()];
    on_path[s] = true;
    let mut path = vec![s];
    go(adj, t, max_len, dist_t, &mut path, &mut on_path, 1, visit);
}

/// Facts incident to `e` in increasing id order, self-loops excluded.
fn incident_facts(kb: &KnowledgeBase, e: EntityId) -> impl Iterator<Item = FactId> + '_ {
    let (mut out, mut inc) = (kb.outgoing(e).iter().peekable(), kb.incoming(e).iter().peekable());
    std::iter::from_fn(move || loop {
        let next = match (out.peek(), inc.peek()) {
            (Some(a), Some(b)) if a <= b => out.next(),
            (Some(_), Some(_)) => inc.next(),
            (Some(_), None) => out.next(),
            (None, Some(_)) => inc.next(),
            (None, None) => return None,
        };
        let f = *next.unwrap();
        let fact = kb.fact(f).unwrap();
        if fact.source != fact.target {
            return Some(f);
        }
    })
}

fn other_end(kb: &KnowledgeBase, f: FactId, e: EntityId) -> EntityId {
    let fact = kb.fact(f).unwrap();
    if fact.source == e {
        fact.target
    } else {
        fact.source
    }
}

fn kb_distances(kb: &KnowledgeBase, start: EntityId, max_depth: usize) -> HashMap<EntityId, usize> {
    let mut dist = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du >= max_depth {
            continue;
        }
        for f in incident_facts(kb, u) {
            let v = other_end(kb, f, u);
            dist.entry(v).or_insert_with(|| {
                queue.push_back(v);
                du + 1
            });
        }
    }
    dist
}

/// Extracts the minimal subgraph holding every simple path of length at most
/// `max_len` between `source` and `target`, with the fake edge at index 0.
pub fn extract_subgraph(
    kb: &KnowledgeBase,
    source: EntityId,
    target: EntityId,
    max_len: usize,
) -> Result<QueryGraph> {
    for e in [source, target] {
        kb.entity_types(e)?;
    }
    if source == target {
        return Err(Error::DegenerateQuery(source.0));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("maximum path length must be >= 1".into()));
    }
    let no_path = || Error::NoSubgraph {
        source_entity: source.0,
        target_entity: target.0,
        max_len,
    };

    let ds = kb_distances(kb, source, max_len);
    let dt = kb_distances(kb, target, max_len);
    let mut candidates: Vec<EntityId> = ds
        .iter()
        .filter(|(v, d)| dt.get(v).is_some_and(|d2| **d + d2 <= max_len))
        .map(|(v, _)| *v)
        .collect();
    if candidates.is_empty() {
        return Err(no_path());
    }
    candidates.sort();
    let local: HashMap<EntityId, usize> =
        candidates.iter().enumerate().map(|(i, e)| (*e, i)).collect();

    let mut adj = NeighborLists::new(candidates.len());
    for &e in &candidates {
        for f in incident_facts(kb, e) {
            let fact = kb.fact(f).unwrap();
            // each fact is seen from both ends; add it once
            if fact.source != e {
                continue;
            }
            if let Some(&v) = local.get(&fact.target) {
                adj.add(local[&e], v);
            }
        }
    }
    let dist_t: Vec<usize> = candidates.iter().map(|e| dt[e]).collect();
    let (s, t) = (local[&source], local[&target]);
    let mut used_pairs = std::collections::HashSet::new();
    let mut acc = PathAccumulator::default();
    enumerate_simple_paths(&adj, s, t, max_len, &dist_t, &mut |path, m| {
        acc.record(path, m);
        for w in path.windows(2) {
            used_pairs.insert((w[0].min(w[1]), w[0].max(w[1])));
        }
    });
    if used_pairs.is_empty() {
        return Err(no_path());
    }
    let edge_used = |f: FactId| {
        let fact = kb.fact(f).unwrap();
        match (local.get(&fact.source), local.get(&fact.target)) {
            (Some(&a), Some(&b)) => used_pairs.contains(&(a.min(b), a.max(b))),
            _ => false,
        }
    };

    // BFS discovery order over retained facts, starting from the source
    let mut node_index: HashMap<EntityId, usize> = HashMap::from([(source, 0)]);
    let mut nodes = vec![source];
    let mut facts: Vec<FactId> = Vec::new();
    let mut seen_fact = std::collections::HashSet::new();
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for f in incident_facts(kb, u) {
            if !edge_used(f) || !seen_fact.insert(f) {
                continue;
            }
            facts.push(f);
            let v = other_end(kb, f, u);
            if let std::collections::hash_map::Entry::Vacant(slot) = node_index.entry(v) {
                slot.insert(nodes.len());
                nodes.push(v);
                queue.push_back(v);
            }
        }
    }

    let mut edges = Vec::with_capacity(facts.len() + 1);
    edges.push(GraphEdge {
        source: 0,
        target: node_index[&target],
        relation: None,
        fact: None,
    });
    edges.extend(facts.iter().map(|&f| {
        let fact = kb.fact(f).unwrap();
        GraphEdge {
            source: node_index[&fact.source],
            target: node_index[&fact.target],
            relation: Some(fact.relation),
            fact: Some(f),
        }
    }));
    let nodes = nodes
        .into_iter()
        .map(|e| GraphNode {
            entity: e,
            types: kb.entity_types(e).map(<[TypeId]>::to_vec).unwrap_or_default(),
        })
        .collect();
    Ok(QueryGraph {
        nodes,
        edges,
        stats: acc.stats(),
    })
}

/// Dense 0/1 matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u8>,
}

impl BinaryMatrix {
    fn from_row_hits(rows: usize, cols: usize, hits: impl Iterator<Item = usize>) -> Self {
        let mut data = vec![0u8; rows * cols];
        for (i, j) in hits.enumerate() {
            data[i * cols + j] = 1;
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&x| x as usize).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.cols];
        for i in 0..self.rows {
            for (j, &x) in self.row(i).iter().enumerate() {
                sums[j] += x as usize;
            }
        }
        sums
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

/// Fact-by-entity incidence: `s[i,j] = 1` iff edge `i` leaves node `j`,
/// `t[i,j] = 1` iff edge `i` enters node `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    pub s: BinaryMatrix,
    pub t: BinaryMatrix,
}

pub fn build_incidence(qg: &QueryGraph) -> Incidence {
    let (m, n) = (qg.num_edges(), qg.num_nodes());
    Incidence {
        s: BinaryMatrix::from_row_hits(m, n, qg.edges.iter().map(|e| e.source)),
        t: BinaryMatrix::from_row_hits(m, n, qg.edges.iter().map(|e| e.target)),
    }
}

/// Several query graphs laid out block-diagonally.
///
/// Incidence is kept in index form: `edge_source[i]` / `edge_target[i]`
/// are the global node indices hit by row `i` of S / T, and
/// `node_out[j]` / `node_in[j]` are the edges whose S / T column is `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph {
    pub node_types: Vec<Vec<TypeId>>,
    pub edge_relation: Vec<Option<RelationId>>,
    pub edge_source: Vec<usize>,
    pub edge_target: Vec<usize>,
    pub node_out: Vec<Vec<usize>>,
    pub node_in: Vec<Vec<usize>>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
}

impl BatchedGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_relation.len()
    }

    pub fn num_instances(&self) -> usize {
        self.edge_offsets.len()
    }

    /// Row of each instance's fake edge.
    pub fn fake_rows(&self) -> &[usize] {
        &self.edge_offsets
    }

    pub fn incidence(&self) -> Incidence {
        let (m, n) = (self.num_edges(), self.num_nodes());
        Incidence {
            s: BinaryMatrix::from_row_hits(m, n, self.edge_source.iter().copied()),
            t: BinaryMatrix::from_row_hits(m, n, self.edge_target.iter().copied()),
        }
    }
}

pub fn batch_graphs<G: std::borrow::Borrow<QueryGraph>>(graphs: &[G]) -> Result<BatchedGraph> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty list of graphs".into()));
    }
    let mut b = BatchedGraph {
        node_types: Vec::new(),
        edge_relation: Vec::new(),
        edge_source: Vec::new(),
        edge_target: Vec::new(),
        node_out: Vec::new(),
        node_in: Vec::new(),
        node_offsets: Vec::with_capacity(graphs.len()),
        edge_offsets: Vec::with_capacity(graphs.len()),
    };
    for g in graphs {
        let g = g.borrow();
        let (n0, m0) = (b.node_types.len(), b.edge_relation.len());
        b.node_offsets.push(n0);
        b.edge_offsets.push(m0);
        b.node_types.extend(g.nodes.iter().map(|n| n.types.clone()));
        b.node_out.extend(std::iter::repeat_with(Vec::new).take(g.num_nodes()));
        b.node_in.extend(std::iter::repeat_with(Vec::new).take(g.num_nodes()));
        for (i, e) in g.edges.iter().enumerate() {
            b.edge_relation.push(e.relation);
            b.edge_source.push(n0 + e.source);
            b.edge_target.push(n0 + e.target);
            b.node_out[n0 + e.source].push(m0 + i);
            b.node_in[n0 + e.target].push(m0 + i);
        }
    }
    Ok(b)
}
