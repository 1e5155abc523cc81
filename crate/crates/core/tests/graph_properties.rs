use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kset_core::graph::{
    initial_clique_consensus_check, min_in_degree, random_digraph, reachable_sources,
    source_components, Digraph,
};
use kset_core::model::ProcessId;

/// Arbitrary simple digraph on `1..=n` for `n <= max_n`.
fn digraph(max_n: u32) -> impl Strategy<Value = Digraph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), (n * n) as usize).prop_map(move |bits| {
            let edges = (1..=n)
                .flat_map(|u| (1..=n).map(move |w| (u, w)))
                .zip(bits)
                .filter(|&((u, w), b)| b && u != w)
                .map(|((u, w), _)| (ProcessId(u), ProcessId(w)));
            Digraph::new((1..=n).map(ProcessId), edges).unwrap()
        })
    })
}

/// Subsets that are strongly connected and entered by no outside edge.
fn brute_force_sources(g: &Digraph) -> BTreeSet<BTreeSet<ProcessId>> {
    let vs = g.vertices().to_vec();
    let mut out = BTreeSet::new();
    for mask in 1u32..1 << vs.len() {
        let s: BTreeSet<ProcessId> = vs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &v)| v)
            .collect();
        let closed = s.iter().all(|&w| g.in_neighbours(w).unwrap().is_subset(&s));
        let sub = g.induced(&s);
        let strong = s
            .iter()
            .all(|&v| sub.ancestors(v).unwrap().len() == s.len());
        if closed && strong {
            out.insert(s);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn source_components_match_brute_force(g in digraph(7)) {
        let got: BTreeSet<_> = source_components(&g).into_iter().collect();
        prop_assert_eq!(got, brute_force_sources(&g));
    }

    #[test]
    fn sources_respect_size_and_count_bounds(seed in any::<u64>(), n in 2u32..=12, p in 0.0f64..0.7, frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let min_in = 1 + ((n - 2) as f64 * frac) as usize;
        let g = random_digraph(&mut rng, n, p, min_in);
        let delta = min_in_degree(&g).unwrap();
        prop_assert!(delta >= min_in);
        let sources = source_components(&g);
        prop_assert!(sources.len() <= n as usize / (delta + 1));
        for weak in g.weakly_connected_components() {
            prop_assert!(sources.iter().any(|c| c.is_subset(&weak) && c.len() > delta));
        }
        if 2 * delta >= n as usize {
            prop_assert_eq!(sources.len(), 1);
            prop_assert!(initial_clique_consensus_check(&g).is_some());
        }
    }

    #[test]
    fn every_vertex_is_reached_by_a_source(g in digraph(7)) {
        let sources = source_components(&g);
        for &v in g.vertices() {
            let reaching = reachable_sources(&g, v).unwrap();
            prop_assert!(!reaching.is_empty());
            let ancestors = g.ancestors(v).unwrap();
            for c in &sources {
                let reaches = c.iter().any(|u| ancestors.contains(u));
                prop_assert_eq!(reaches, reaching.contains(c));
            }
        }
    }

    #[test]
    fn sccs_partition_the_vertices(g in digraph(8)) {
        let comps = g.strongly_connected_components();
        let total: usize = comps.iter().map(BTreeSet::len).sum();
        prop_assert_eq!(total, g.len());
        let union: BTreeSet<ProcessId> = comps.iter().flatten().copied().collect();
        prop_assert_eq!(union.len(), g.len());
    }

    #[test]
    fn edge_list_round_trips(g in digraph(8)) {
        prop_assert_eq!(Digraph::parse_edge_list(&g.to_edge_list()).unwrap().edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }
}
