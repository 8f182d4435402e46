mod common;

use std::collections::{BTreeMap, BTreeSet};

use ccgen::concept::ConceptId;
use ccgen::dataset::{build_ranked_lists, ConfidenceTable};
use proptest::prelude::*;

#[test]
fn golden_table_matches_hand_count() {
    let g = common::golden();
    assert_eq!(common::render_table(&g.set, &g.table), common::golden_text("table.golden"));
}

#[test]
fn golden_lists_match_hand_ranking() {
    let g = common::golden();
    let lists = build_ranked_lists(&g.table, 2, 3);
    assert_eq!(common::render_lists(&g.set, &lists), common::golden_text("lists_k2_min3.golden"));
    let lists = build_ranked_lists(&g.table, 3, 1);
    assert_eq!(common::render_lists(&g.set, &lists), common::golden_text("lists_k3_min1.golden"));
}

#[test]
fn golden_half_confidence() {
    let g = common::golden();
    let dc = g.set.lookup("Digital Cameras").unwrap().id;
    let mc = g.set.lookup("Memory Cards").unwrap().id;
    assert_eq!((g.table.freq(dc), g.table.cofreq(dc, mc)), (6, 3));
    assert_eq!(g.table.conf(dc, mc), 0.5);
}

/// Brute-force ranking: every partner, full sort by confidence then id.
fn oracle(table: &ConfidenceTable, x: ConceptId, k: usize) -> Vec<ConceptId> {
    let mut all: Vec<(ConceptId, f64)> = (0..50u32)
        .map(ConceptId)
        .filter(|&y| table.cofreq(x, y) > 0)
        .map(|y| (y, table.conf(x, y)))
        .collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let swap = all[j].1 > all[i].1 || (all[j].1 == all[i].1 && all[j].0 < all[i].0);
            if swap {
                all.swap(i, j);
            }
        }
    }
    all.into_iter().take(k).map(|(y, _)| y).collect()
}

proptest! {
    #[test]
    fn ranked_lists_agree_with_sort_oracle(
        records in prop::collection::vec((0u32..12, prop::collection::btree_set(0u32..12, 0..6)), 1..200),
        k in 1usize..6,
        min_freq in 1u64..5,
    ) {
        let mut table = ConfidenceTable::default();
        for (x, ys) in &records {
            let ys: BTreeSet<ConceptId> = ys.iter().map(|&y| ConceptId(y)).collect();
            table.add_record(ConceptId(*x), &ys);
        }
        let lists = build_ranked_lists(&table, k, min_freq);
        let mut expected = BTreeMap::new();
        for (x, f) in table.concepts() {
            if f >= min_freq && table.partner_count(x) >= k {
                expected.insert(x, oracle(&table, x, k));
            }
        }
        let got: BTreeMap<ConceptId, Vec<ConceptId>> =
            lists.iter().map(|(x, l)| (*x, l.concepts().collect())).collect();
        prop_assert_eq!(got, expected);
        for (x, _) in table.concepts() {
            for (y, n) in table.partners(x) {
                prop_assert!(n <= table.freq(x));
                let c = table.conf(x, y);
                prop_assert!(c > 0.0 && c <= 1.0);
            }
        }
        for l in lists.values() {
            l.validate().unwrap();
        }
    }
}
