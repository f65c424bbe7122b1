//! Synthetic knowledge bases with planted composition rules.
//!
//! Entities are split into kinds; every base relation has a domain kind and a
//! range kind. A rule `head := r_a ∘ r_b` says that whenever `s -r_a-> m -r_b-> t`
//! holds, the pair `(s, t)` is an instance of `head`. Rule heads never appear
//! as facts, so nothing about the label leaks into the graph.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::graph::{ClassVocab, Polarity, Query, NULL_CLASS};
use crate::kb::{EntityId, KbBuilder, KnowledgeBase, RelationId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub entities: usize,
    pub base_relations: usize,
    /// Length-2 rules.
    pub rules: usize,
    /// Optional length-3 rules.
    pub long_rules: usize,
    /// Expected facts as a fraction of all ordered entity pairs.
    pub density: f64,
    pub kinds: usize,
    /// Attach kind types (plus supertypes and noise types) to entities.
    pub typed: bool,
    /// Supertypes grouping the kinds (`kind k` is under `super k mod n`); 0 disables.
    pub super_kinds: usize,
    /// Extra random types per entity in typed mode.
    pub noise_types: usize,
    /// Path bound used when selecting negatives.
    pub max_len: usize,
    /// Negatives drawn per positive.
    pub negative_ratio: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            entities: 300,
            base_relations: 10,
            rules: 4,
            long_rules: 0,
            density: 0.02,
            kinds: 6,
            typed: true,
            super_kinds: 3,
            noise_types: 0,
            max_len: 2,
            negative_ratio: 1.0,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.entities < 3 {
            return bad("need at least 3 entities");
        }
        if self.base_relations == 0 {
            return bad("need at least one base relation");
        }
        if self.rules + self.long_rules == 0 {
            return bad("need at least one rule");
        }
        if self.kinds == 0 || self.kinds > self.entities {
            return bad("kinds must be in 1..=entities");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must be in [0, 1)");
        }
        if self.negative_ratio < 0.0 {
            return bad("negative_ratio must be >= 0");
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2 so rule paths are visible");
        }
        if self.long_rules > 0 && self.max_len < 3 {
            return bad("length-3 rules need max_len >= 3");
        }
        Ok(())
    }

    /// Reads `key = value` lines; keys are the field names.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut spec = Self::default();
        for (key, value) in kv.iter() {
            match key {
                "entities" => spec.entities = kv.parse(key)?,
                "base_relations" => spec.base_relations = kv.parse(key)?,
                "rules" => spec.rules = kv.parse(key)?,
                "long_rules" => spec.long_rules = kv.parse(key)?,
                "density" => spec.density = kv.parse(key)?,
                "kinds" => spec.kinds = kv.parse(key)?,
                "typed" => spec.typed = kv.parse(key)?,
                "super_kinds" => spec.super_kinds = kv.parse(key)?,
                "noise_types" => spec.noise_types = kv.parse(key)?,
                "max_len" => spec.max_len = kv.parse(key)?,
                "negative_ratio" => spec.negative_ratio = kv.parse(key)?,
                "test_fraction" => spec.test_fraction = kv.parse(key)?,
                "seed" => spec.seed = kv.parse(key)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown synth key `{key}` (value `{value}`)"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

/// `head := body[0] ∘ body[1] (∘ body[2])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub head: String,
    pub body: Vec<RelationId>,
}

#[derive(Debug, Clone)]
pub struct SynthKb {
    pub kb: KnowledgeBase,
    pub rules: Vec<Rule>,
    pub classes: ClassVocab,
    pub train: Vec<Query>,
    pub test: Vec<Query>,
    /// Kind of every entity, by entity id.
    pub entity_kind: Vec<usize>,
}

/// Class of the first rule matching some simple path `source -> target`, or
/// null when none does.
pub fn oracle_label(
    kb: &KnowledgeBase,
    source: EntityId,
    target: EntityId,
    rules: &[Rule],
    classes: &ClassVocab,
) -> usize {
    matching_rules(kb, source, target, rules)
        .first()
        .and_then(|&i| classes.get(&rules[i].head))
        .unwrap_or(NULL_CLASS)
}

/// Indices of every rule witnessed by a simple directed path `source -> target`.
pub fn matching_rules(
    kb: &KnowledgeBase,
    source: EntityId,
    target: EntityId,
    rules: &[Rule],
) -> Vec<usize> {
    rules
        .iter()
        .enumerate()
        .filter(|(_, r)| witnessed(kb, source, target, &r.body))
        .map(|(i, _)| i)
        .collect()
}

fn witnessed(kb: &KnowledgeBase, source: EntityId, target: EntityId, body: &[RelationId]) -> bool {
    fn walk(
        kb: &KnowledgeBase,
        at: EntityId,
        target: EntityId,
        body: &[RelationId],
        visited: &mut Vec<EntityId>,
    ) -> bool {
        let Some((&rel, rest)) = body.split_first() else {
            return at == target;
        };
        for &f in kb.outgoing(at) {
            let fact = &kb.facts()[f.0];
            if fact.relation != rel || visited.contains(&fact.target) {
                continue;
            }
            if rest.is_empty() != (fact.target == target) {
                continue;
            }
            visited.push(fact.target);
            let hit = walk(kb, fact.target, target, rest, visited);
            visited.pop();
            if hit {
                return true;
            }
        }
        false
    }
    source != target && walk(kb, source, target, body, &mut vec![source])
}

/// Undirected hop distance from `start`, up to `max_depth`.
fn neighbourhood(kb: &KnowledgeBase, start: EntityId, max_depth: usize) -> BTreeSet<EntityId> {
    let mut seen = BTreeSet::from([start]);
    let mut frontier = vec![start];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for &u in &frontier {
            for &f in kb.outgoing(u).iter().chain(kb.incoming(u)) {
                let fact = &kb.facts()[f.0];
                let v = if fact.source == u { fact.target } else { fact.source };
                if seen.insert(v) {
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    seen
}

pub fn generate(spec: &SynthSpec) -> Result<SynthKb> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.entities;

    let entity_kind: Vec<usize> = (0..n).map(|i| i % spec.kinds).collect();
    let mut by_kind = vec![Vec::new(); spec.kinds];
    for (e, &k) in entity_kind.iter().enumerate() {
        by_kind[k].push(e);
    }

    // Domain and range differ whenever there is more than one kind, so the
    // roles a rule assigns to its endpoints are distinguishable by type.
    // Signatures are redrawn until enough rule bodies exist.
    let mut signatures = Vec::new();
    for attempt in 0.. {
        if attempt == 1000 {
            return Err(Error::Config(
                "could not draw relation signatures admitting the requested rules".into(),
            ));
        }
        signatures = (0..spec.base_relations)
            .map(|_| {
                let d = rng.gen_range(0..spec.kinds);
                let mut r = rng.gen_range(0..spec.kinds);
                while spec.kinds > 1 && r == d {
                    r = rng.gen_range(0..spec.kinds);
                }
                (d, r)
            })
            .collect();
        let (pairs, triples) = bodies(spec, &signatures);
        if pairs.len() >= spec.rules && triples.len() >= spec.long_rules {
            break;
        }
    }

    let mut b = KbBuilder::new();
    for e in 0..n {
        b.intern_entity(&format!("e{e}"))?;
    }
    let relations: Vec<RelationId> = (0..spec.base_relations)
        .map(|r| b.intern_relation(&format!("r{r}")).map(|(id, _)| id))
        .collect::<Result<_>>()?;
    if spec.typed {
        for (e, &kind) in entity_kind.iter().enumerate() {
            let mut names = vec![format!("kind{kind}")];
            if spec.super_kinds > 0 {
                names.push(format!("super{}", kind % spec.super_kinds));
            }
            for _ in 0..spec.noise_types {
                names.push(format!("noise{}", rng.gen_range(0..spec.kinds.max(2))));
            }
            b.add_types(&format!("e{e}"), names.iter().map(String::as_str))?;
        }
    }

    let num_facts = (spec.density * (n * (n - 1)) as f64).round() as usize;
    let mut seen = BTreeSet::new();
    for _ in 0..num_facts {
        let r = rng.gen_range(0..spec.base_relations);
        let (dk, rk) = signatures[r];
        let s = *by_kind[dk].choose(&mut rng).unwrap();
        let t = *by_kind[rk].choose(&mut rng).unwrap();
        if s == t || !seen.insert((s, r, t)) {
            continue;
        }
        b.add_fact_ids(EntityId(s), relations[r], EntityId(t))?;
    }
    let kb = b.build();

    let rules = draw_rules(spec, &signatures, &relations, &mut rng)?;
    let classes = ClassVocab::from_names(&rules.iter().map(|r| r.head.clone()).collect::<Vec<_>>());

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for s in 0..n {
        let s = EntityId(s);
        for t in neighbourhood(&kb, s, spec.max_len) {
            if t == s {
                continue;
            }
            let hits = matching_rules(&kb, s, t, &rules);
            let heads: BTreeSet<&str> = hits.iter().map(|&i| rules[i].head.as_str()).collect();
            match heads.len() {
                0 => negatives.push((s, t)),
                1 => positives.push((s, t, classes.get(heads.first().unwrap()).unwrap())),
                // Pairs licensed by several heads have no single label.
                _ => {}
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::Config(
            "synth spec produced no rule instances; raise density or entity count".into(),
        ));
    }
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let want_neg = ((positives.len() as f64) * spec.negative_ratio).round() as usize;
    negatives.truncate(want_neg);

    let heads: Vec<usize> = (1..classes.len()).collect();
    let pos: Vec<Query> = positives
        .iter()
        .map(|&(source, target, c)| Query {
            source,
            target,
            relation: Some(c),
            polarity: Polarity::Positive,
        })
        .collect();
    // Negatives are attributed round-robin to the heads for per-relation TNR.
    let neg: Vec<Query> = negatives
        .iter()
        .enumerate()
        .map(|(i, &(source, target))| Query {
            source,
            target,
            relation: Some(heads[i % heads.len()]),
            polarity: Polarity::Negative,
        })
        .collect();

    let split = |v: Vec<Query>| {
        let n_test = ((v.len() as f64) * spec.test_fraction).round() as usize;
        let mut v = v;
        let train = v.split_off(n_test);
        (train, v)
    };
    let (mut train, mut test) = split(pos);
    let (neg_train, neg_test) = split(neg);
    train.extend(neg_train);
    test.extend(neg_test);

    Ok(SynthKb {
        kb,
        rules,
        classes,
        train,
        test,
        entity_kind,
    })
}

/// Composable relation pairs (with distinct end kinds) and triples.
#[allow(clippy::type_complexity)]
fn bodies(
    spec: &SynthSpec,
    signatures: &[(usize, usize)],
) -> (Vec<(usize, usize)>, Vec<(usize, usize, usize)>) {
    let composable = |a: usize, b: usize| signatures[a].1 == signatures[b].0;
    let distinct_ends = |a: usize, b: usize| spec.kinds < 2 || signatures[a].0 != signatures[b].1;
    let n = signatures.len();
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if composable(a, b) && distinct_ends(a, b) {
                pairs.push((a, b));
            }
        }
    }
    let mut triples = Vec::new();
    for &(a, b) in &pairs {
        for c in 0..n {
            if composable(b, c) {
                triples.push((a, b, c));
            }
        }
    }
    (pairs, triples)
}

fn draw_rules(
    spec: &SynthSpec,
    signatures: &[(usize, usize)],
    relations: &[RelationId],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Rule>> {
    let (mut pairs, mut triples) = bodies(spec, signatures);
    pairs.shuffle(rng);
    triples.shuffle(rng);
    let mut rules: Vec<Rule> = pairs[..spec.rules]
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Rule {
            head: format!("c{i}"),
            body: vec![relations[a], relations[b]],
        })
        .collect();
    for (i, &(a, b, c)) in triples[..spec.long_rules].iter().enumerate() {
        rules.push(Rule {
            head: format!("c{}", spec.rules + i),
            body: vec![relations[a], relations[b], relations[c]],
        });
    }
    Ok(rules)
}

impl SynthKb {
    /// Entity ids grouped by kind.
    pub fn kinds(&self) -> BTreeMap<usize, Vec<EntityId>> {
        let mut out: BTreeMap<usize, Vec<EntityId>> = BTreeMap::new();
        for (e, &k) in self.entity_kind.iter().enumerate() {
            out.entry(k).or_default().push(EntityId(e));
        }
        out
    }

    /// Writes `facts.tsv`, `types.tsv`, `train.tsv`, `test.tsv` and `rules.tsv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.kb.save(&dir.join("facts.tsv"), &dir.join("types.tsv"))?;
        for (name, qs) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let path = dir.join(name);
            let mut buf = Vec::new();
            crate::graph::write_queries(&mut buf, qs, &self.kb, &self.classes)
                .map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("rules.tsv");
        let mut text = String::new();
        for r in &self.rules {
            let body: Vec<&str> = r
                .body
                .iter()
                .map(|&id| self.kb.relations().name(id.0).unwrap_or("?"))
                .collect();
            text.push_str(&format!("{}\t{}\n", r.head, body.join(",")));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            entities: 60,
            base_relations: 5,
            rules: 2,
            density: 0.05,
            kinds: 3,
            seed: 3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn chain_gives_one_positive() {
        let mut b = KbBuilder::new();
        b.add_fact("LHR", "capitalOf", "London").unwrap();
        b.add_fact("London", "locatedIn", "England").unwrap();
        let kb = b.build();
        let rel = |n: &str| kb.relation(n).unwrap();
        let rules = vec![Rule {
            head: "countryOfAirport".into(),
            body: vec![rel("capitalOf"), rel("locatedIn")],
        }];
        let classes = ClassVocab::from_names(&["countryOfAirport"]);
        let mut hits = Vec::new();
        for s in 0..3 {
            for t in 0..3 {
                let l = oracle_label(&kb, EntityId(s), EntityId(t), &rules, &classes);
                if l != NULL_CLASS {
                    hits.push((s, t, l));
                }
            }
        }
        let lhr = kb.entity("LHR").unwrap().0;
        let eng = kb.entity("England").unwrap().0;
        assert_eq!(hits, vec![(lhr, eng, 1)]);
    }

    #[test]
    fn regenerating_is_identical() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.kb.facts(), b.kb.facts());
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.rules, b.rules);
    }

    #[test]
    fn labels_agree_with_oracle_and_splits_are_disjoint() {
        let g = generate(&small()).unwrap();
        let train: BTreeSet<_> = g.train.iter().map(|q| (q.source, q.target)).collect();
        for q in &g.test {
            assert!(!train.contains(&(q.source, q.target)));
        }
        for q in g.train.iter().chain(&g.test) {
            assert_eq!(oracle_label(&g.kb, q.source, q.target, &g.rules, &g.classes), q.label());
        }
    }

    #[test]
    fn heads_never_appear_as_facts() {
        let g = generate(&small()).unwrap();
        for r in &g.rules {
            assert!(g.kb.relation(&r.head).is_none());
        }
    }

    #[test]
    fn unknown_spec_key_is_rejected() {
        let kv = KeyValues::parse_str("entities = 10\nbogus = 1\n").unwrap();
        assert!(SynthSpec::from_key_values(&kv).is_err());
    }
}
