//! Shared generators and reference implementations for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use kg_linker::graph::{batch_graphs, GraphEdge, GraphNode, QueryGraph};
use kg_linker::kb::{EntityId, FactId, KbBuilder, KnowledgeBase, RelationId, TypeId};
use kg_linker::model::Model;
use rand::seq::SliceRandom;
use rand::Rng;

/// A KB with `2..=max_entities` entities, up to three relations and three
/// types. Self-loops and parallel facts are allowed.
pub fn random_kb(rng: &mut impl Rng, max_entities: usize) -> KnowledgeBase {
    let n = rng.gen_range(2..=max_entities);
    let nrel = rng.gen_range(1..=3);
    let nfacts = rng.gen_range(0..=2 * n + 4);
    let mut b = KbBuilder::new();
    for i in 0..n {
        let types: Vec<String> = (0..3)
            .filter(|_| rng.gen_bool(0.4))
            .map(|k| format!("t{k}"))
            .collect();
        b.add_types(&format!("e{i}"), types.iter().map(String::as_str)).unwrap();
    }
    for _ in 0..nfacts {
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        let r = rng.gen_range(0..nrel);
        b.add_fact(&format!("e{s}"), &format!("r{r}"), &format!("e{t}")).unwrap();
    }
    b.build()
}

/// Everything the simple fact paths `s -> t` of length at most `max_len`
/// touch, found by enumerating fact sequences directly.
#[derive(Debug, Default, PartialEq)]
pub struct PathOracle {
    pub entities: BTreeSet<EntityId>,
    pub facts: BTreeSet<FactId>,
    pub paths: u64,
    pub total_len: u64,
}

pub fn oracle_paths(kb: &KnowledgeBase, s: EntityId, t: EntityId, max_len: usize) -> PathOracle {
    fn go(
        kb: &KnowledgeBase,
        t: EntityId,
        max_len: usize,
        nodes: &mut Vec<EntityId>,
        facts: &mut Vec<FactId>,
        out: &mut PathOracle,
    ) {
        let u = *nodes.last().unwrap();
        if u == t {
            out.paths += 1;
            out.total_len += facts.len() as u64;
            out.entities.extend(nodes.iter().copied());
            out.facts.extend(facts.iter().copied());
            return;
        }
        if facts.len() == max_len {
            return;
        }
        for f in kb.facts() {
            let v = if f.source == u {
                f.target
            } else if f.target == u {
                f.source
            } else {
                continue;
            };
            if nodes.contains(&v) {
                continue;
            }
            nodes.push(v);
            facts.push(f.id);
            go(kb, t, max_len, nodes, facts, out);
            nodes.pop();
            facts.pop();
        }
    }
    let mut out = PathOracle::default();
    if s != t {
        go(kb, t, max_len, &mut vec![s], &mut Vec::new(), &mut out);
    }
    out
}

/// A query graph with `2..=max_nodes` nodes and a random source and target.
pub fn random_query_graph(
    rng: &mut impl Rng,
    max_nodes: usize,
    num_relations: usize,
    num_types: usize,
) -> QueryGraph {
    let n = rng.gen_range(2..=max_nodes);
    let nodes = (0..n)
        .map(|i| GraphNode {
            entity: EntityId(i),
            types: (0..num_types)
                .filter(|_| rng.gen_bool(0.5))
                .map(TypeId)
                .collect(),
        })
        .collect();
    let s = rng.gen_range(0..n);
    let t = (s + rng.gen_range(1..n)) % n;
    let mut edges = vec![GraphEdge {
        source: s,
        target: t,
        relation: None,
        fact: None,
    }];
    for _ in 0..rng.gen_range(1..=2 * n) {
        let a = rng.gen_range(0..n);
        let b = (a + rng.gen_range(1..n)) % n;
        edges.push(GraphEdge {
            source: a,
            target: b,
            relation: Some(RelationId(rng.gen_range(0..num_relations))),
            fact: None,
        });
    }
    QueryGraph::from_parts(nodes, edges).unwrap()
}

/// Relabels nodes by `node_perm` (old -> new) and shuffles the real edges;
/// the fake edge stays first. Returns the graph and the edge map (old -> new).
pub fn permute(g: &QueryGraph, rng: &mut impl Rng) -> (QueryGraph, Vec<usize>, Vec<usize>) {
    let n = g.num_nodes();
    let mut node_perm: Vec<usize> = (0..n).collect();
    node_perm.shuffle(rng);
    let mut edge_perm: Vec<usize> = (1..g.num_edges()).collect();
    edge_perm.shuffle(rng);
    edge_perm.insert(0, 0);

    let mut nodes = g.nodes().to_vec();
    for (old, node) in g.nodes().iter().enumerate() {
        nodes[node_perm[old]] = node.clone();
    }
    let mut edges = g.edges().to_vec();
    for (old, e) in g.edges().iter().enumerate() {
        edges[edge_perm[old]] = GraphEdge {
            source: node_perm[e.source],
            target: node_perm[e.target],
            ..*e
        };
    }
    (QueryGraph::from_parts(nodes, edges).unwrap(), node_perm, edge_perm)
}

/// Adds U(±scale) noise to every parameter. Zero biases put ReLUs exactly on
/// their kink for zero inputs (the fake fact), where central differences see
/// the mean of two one-sided slopes; a generic point avoids that.
pub fn jitter(model: &mut Model<f64>, rng: &mut impl Rng, scale: f64) {
    let params = model.params_mut();
    for id in 0..params.len() {
        for x in params.tensor_mut(id).data_mut() {
            *x += rng.gen_range(-scale..scale);
        }
    }
}

#[derive(Debug, Default)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, floor)` over every entry.
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
    /// Entries whose one-sided differences disagree, i.e. a ReLU kink lies
    /// within `h` of the current point.
    pub kinks: usize,
    /// `worst` restricted to entries without a kink.
    pub worst_smooth: f64,
}

/// Compares backprop against central differences for every parameter entry.
pub fn gradient_check(
    model: &mut Model<f64>,
    graphs: &[QueryGraph],
    labels: &[usize],
    h: f64,
    floor: f64,
) -> GradCheck {
    let batch = batch_graphs(graphs).unwrap();
    let (f0, grads) = model.loss_and_grads(&batch, labels, true).unwrap();
    let mut out = GradCheck::default();
    for (id, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = model.params().tensor(id).data()[k];
            model.params_mut().tensor_mut(id).data_mut()[k] = orig + h;
            let up = model.loss_value(&batch, labels).unwrap();
            model.params_mut().tensor_mut(id).data_mut()[k] = orig - h;
            let down = model.loss_value(&batch, labels).unwrap();
            model.params_mut().tensor_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.data()[k];
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(floor);
            let err = rel(analytic, numeric);
            if err > out.worst {
                out.worst = err;
                out.worst_at = format!(
                    "{}[{k}]: analytic {analytic:e}, numeric {numeric:e}",
                    model.params().name(id)
                );
            }
            if rel((up - f0) / h, (f0 - down) / h) > 1e-2 {
                out.kinks += 1;
            } else {
                out.worst_smooth = out.worst_smooth.max(err);
            }
            out.checked += 1;
        }
    }
    out
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
