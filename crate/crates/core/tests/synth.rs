use std::collections::{BTreeSet, HashMap, HashSet};

use kg_linker::graph::{extract_subgraph, Polarity, Query};
use kg_linker::kb::{EntityId, KnowledgeBase, RelationId};
use kg_linker::synth::{generate, SynthKb, SynthSpec};
use proptest::prelude::*;

/// Relation sequences of every simple directed path of length `1..=max` from
/// `s`, grouped by end entity.
fn directed_paths(kb: &KnowledgeBase, s: EntityId, max: usize) -> HashMap<EntityId, HashSet<Vec<RelationId>>> {
    fn go(
        kb: &KnowledgeBase,
        max: usize,
        nodes: &mut Vec<EntityId>,
        rels: &mut Vec<RelationId>,
        out: &mut HashMap<EntityId, HashSet<Vec<RelationId>>>,
    ) {
        let u = *nodes.last().unwrap();
        if !rels.is_empty() {
            out.entry(u).or_default().insert(rels.clone());
        }
        if rels.len() == max {
            return;
        }
        for f in kb.facts() {
            if f.source != u || nodes.contains(&f.target) {
                continue;
            }
            nodes.push(f.target);
            rels.push(f.relation);
            go(kb, max, nodes, rels, out);
            nodes.pop();
            rels.pop();
        }
    }
    let mut out = HashMap::new();
    go(kb, max, &mut vec![s], &mut Vec::new(), &mut out);
    out
}

/// Heads (as class ids) licensed for every ordered pair, by brute force.
fn licensed(data: &SynthKb) -> HashMap<(EntityId, EntityId), BTreeSet<usize>> {
    let longest = data.rules.iter().map(|r| r.body.len()).max().unwrap();
    let mut out = HashMap::new();
    for s in (0..data.kb.num_entities()).map(EntityId) {
        for (t, bodies) in directed_paths(&data.kb, s, longest) {
            let heads: BTreeSet<usize> = data
                .rules
                .iter()
                .filter(|r| bodies.contains(&r.body))
                .map(|r| data.classes.get(&r.head).unwrap())
                .collect();
            if !heads.is_empty() {
                out.insert((s, t), heads);
            }
        }
    }
    out
}

fn check(data: &SynthKb, spec: &SynthSpec) {
    let heads = licensed(data);
    let all: Vec<&Query> = data.train.iter().chain(&data.test).collect();
    let mut seen = HashSet::new();
    for q in &all {
        assert!(seen.insert((q.source, q.target)), "pair emitted twice");
        assert_ne!(q.source, q.target);
        let h = heads.get(&(q.source, q.target));
        match q.polarity {
            Polarity::Positive => {
                let h = h.expect("positive without a rule path");
                assert_eq!(h.len(), 1);
                assert_eq!(q.label(), *h.iter().next().unwrap());
            }
            Polarity::Negative => {
                assert!(h.is_none(), "negative with a rule path");
                assert!(q.relation.is_some());
            }
        }
        extract_subgraph(&data.kb, q.source, q.target, spec.max_len).unwrap();
    }
    // every pair with exactly one head is a positive
    let singles = heads.values().filter(|h| h.len() == 1).count();
    let positives = all.iter().filter(|q| q.polarity == Polarity::Positive).count();
    assert_eq!(positives, singles);
    let negatives = all.len() - positives;
    assert!(negatives as f64 <= spec.negative_ratio * positives as f64 + 1.0);
    // rule heads never occur as KB relations
    for r in &data.rules {
        assert!(data.kb.relation(&r.head).is_none());
    }
}

#[test]
fn default_spec_labels_match_brute_force() {
    let spec = SynthSpec {
        seed: 7,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    check(&data, &spec);
    assert_eq!(data.kb.num_entities(), spec.entities);
    assert_eq!(data.classes.len(), spec.rules + 1);
}

#[test]
fn long_rules_are_labelled_too() {
    let spec = SynthSpec {
        entities: 120,
        rules: 2,
        long_rules: 2,
        max_len: 3,
        density: 0.04,
        seed: 3,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    assert!(data.rules.iter().any(|r| r.body.len() == 3));
    check(&data, &spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn small_specs_are_consistent(seed in 0u64..1000, typed in any::<bool>()) {
        let spec = SynthSpec {
            entities: 80,
            density: 0.05,
            typed,
            seed,
            ..SynthSpec::default()
        };
        if let Ok(data) = generate(&spec) {
            check(&data, &spec);
            let again = generate(&spec).unwrap();
            prop_assert_eq!(&again.train, &data.train);
            prop_assert_eq!(&again.test, &data.test);
        }
    }
}
