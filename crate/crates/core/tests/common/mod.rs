//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ccgen::concept::{ConceptId, ConceptSet};
use ccgen::dataset::{build_confidence_table, read_jsonl, BehaviorRecord, CatalogEntry, ConfidenceTable};
use ccgen::RankedList;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Golden {
    pub set: ConceptSet,
    pub table: ConfidenceTable,
}

pub fn golden() -> Golden {
    let dir = fixture("golden");
    let set = ConceptSet::load(dir.join("concepts.txt")).unwrap();
    let catalog: Vec<CatalogEntry> = read_jsonl(dir.join("catalog.jsonl")).unwrap();
    let behavior: Vec<BehaviorRecord> = read_jsonl(dir.join("behavior.jsonl")).unwrap();
    assert_eq!(behavior.len(), 20);
    let table = build_confidence_table(&catalog, &behavior, &set);
    Golden { set, table }
}

pub fn golden_text(name: &str) -> String {
    std::fs::read_to_string(fixture("golden").join(name)).unwrap()
}

/// Tab-separated rendering matching the golden files.
pub fn render_table(set: &ConceptSet, table: &ConfidenceTable) -> String {
    let mut out = String::new();
    for (x, n) in table.concepts() {
        out += &format!("freq\t{}\t{n}\n", set.surface(x));
    }
    for (x, _) in table.concepts() {
        for (y, n) in table.partners(x) {
            out += &format!(
                "cofreq\t{}\t{}\t{n}\t{:.6}\n",
                set.surface(x),
                set.surface(y),
                table.conf(x, y)
            );
        }
    }
    out
}

pub fn render_lists(set: &ConceptSet, lists: &BTreeMap<ConceptId, RankedList>) -> String {
    let mut out = String::new();
    for (x, list) in lists {
        out += set.surface(*x);
        for (y, c) in &list.targets {
            out += &format!("\t{} {c:.6}", set.surface(*y));
        }
        out += "\n";
    }
    out
}
