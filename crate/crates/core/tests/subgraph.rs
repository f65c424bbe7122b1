mod common;

use common::{oracle_paths, random_kb};
use kg_linker::graph::extract_subgraph;
use kg_linker::kb::EntityId;
use kg_linker::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_matches_path_enumeration(seed in any::<u64>(), l in 1usize..=5) {
        let kb = random_kb(&mut ChaCha8Rng::seed_from_u64(seed), 10);
        let n = kb.num_entities();
        for s in (0..n).map(EntityId) {
            for t in (0..n).map(EntityId).filter(|&t| t != s) {
                let want = oracle_paths(&kb, s, t, l);
                match extract_subgraph(&kb, s, t, l) {
                    Err(Error::NoSubgraph { .. }) => prop_assert_eq!(want.paths, 0),
                    Err(e) => prop_assert!(false, "unexpected error {e}"),
                    Ok(g) => {
                        let nodes: Vec<_> = g.nodes().iter().map(|n| n.entity).collect();
                        let mut sorted = nodes.clone();
                        sorted.sort();
                        prop_assert_eq!(sorted, want.entities.iter().copied().collect::<Vec<_>>());
                        let mut facts: Vec<_> = g.edges()[1..].iter().map(|e| e.fact.unwrap()).collect();
                        facts.sort();
                        prop_assert_eq!(facts, want.facts.iter().copied().collect::<Vec<_>>());

                        // fake edge first, source local 0, edges mirror their facts
                        let fake = g.edges()[0];
                        prop_assert!(fake.relation.is_none() && fake.fact.is_none());
                        prop_assert_eq!(nodes[fake.source], s);
                        prop_assert_eq!(nodes[fake.target], t);
                        prop_assert_eq!(fake.source, 0);
                        for e in &g.edges()[1..] {
                            let f = kb.fact(e.fact.unwrap()).unwrap();
                            prop_assert_eq!((nodes[e.source], nodes[e.target]), (f.source, f.target));
                            prop_assert_eq!(e.relation, Some(f.relation));
                        }
                        for node in g.nodes() {
                            prop_assert_eq!(&node.types[..], kb.entity_types(node.entity).unwrap());
                        }

                        let stats = g.stats();
                        prop_assert_eq!(stats.path_count, want.paths);
                        let avg = want.total_len as f64 / want.paths as f64;
                        prop_assert!((stats.avg_path_len - avg).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn longer_bounds_only_grow_the_graph(seed in any::<u64>(), l in 1usize..=4) {
        let kb = random_kb(&mut ChaCha8Rng::seed_from_u64(seed), 9);
        let (s, t) = (EntityId(0), EntityId(1));
        if let Ok(small) = extract_subgraph(&kb, s, t, l) {
            let big = extract_subgraph(&kb, s, t, l + 1).unwrap();
            let facts = |g: &kg_linker::graph::QueryGraph| {
                g.edges()[1..].iter().map(|e| e.fact.unwrap()).collect::<std::collections::BTreeSet<_>>()
            };
            prop_assert!(facts(&small).is_subset(&facts(&big)));
            prop_assert!(small.stats().path_count <= big.stats().path_count);
        }
    }
}
