//! Synthetic catalogs, co-purchase logs and word vectors with a known latent
//! complement graph, for desk-scale end-to-end runs.
//!
//! Concepts are `{Item} {Category}` pairs. Every category is complementary to
//! a few other categories, and each concept is linked to a popularity-weighted
//! sample of concepts from those categories. Baskets follow the graph with
//! probability `1 - noise_rate` and pick a uniform concept otherwise. Word
//! vectors correlate within a category, so similarity and complementarity
//! disagree, as they do for real product concepts.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concept::ConceptSet;
use crate::dataset::{write_jsonl, BehaviorRecord, CatalogEntry};
use crate::embed::WordVectorTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldSpec {
    pub n_concepts: usize,
    pub n_categories: usize,
    pub baskets: usize,
    /// Fraction of the other concepts each concept is linked to.
    pub complement_graph_density: f64,
    pub noise_rate: f64,
    pub seed: u64,
    pub products_per_concept: usize,
    pub items_per_basket: usize,
    pub vector_dim: usize,
    /// Partners each concept must be able to rank.
    pub k_collect: usize,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            n_concepts: 200,
            n_categories: 20,
            baskets: 50_000,
            complement_graph_density: 0.075,
            noise_rate: 0.1,
            seed: 0,
            products_per_concept: 3,
            items_per_basket: 3,
            vector_dim: 16,
            k_collect: 10,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn degree(&self) -> usize {
        (self.complement_graph_density * (self.n_concepts.saturating_sub(1)) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_concepts", self.n_concepts),
            ("n_categories", self.n_categories),
            ("baskets", self.baskets),
            ("products_per_concept", self.products_per_concept),
            ("items_per_basket", self.items_per_basket),
            ("vector_dim", self.vector_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::invalid("noise_rate must lie in [0, 1)"));
        }
        if self.n_categories < 2 || self.n_categories > self.n_concepts {
            return Err(Error::invalid("need 2 <= n_categories <= n_concepts"));
        }
        let degree = self.degree();
        if degree < self.k_collect {
            return Err(Error::invalid(format!(
                "complement_graph_density {} gives {} partners per concept, fewer than k_collect = {}",
                self.complement_graph_density, degree, self.k_collect
            )));
        }
        if degree >= self.n_concepts - self.n_concepts.div_ceil(self.n_categories) {
            return Err(Error::invalid(format!(
                "complement_graph_density {} asks for more partners than other categories hold",
                self.complement_graph_density
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub spec: SyntheticWorldSpec,
    pub concepts: Vec<String>,
    pub categories: Vec<String>,
    pub concept_category: Vec<usize>,
    /// Complement categories of each category.
    pub category_complements: Vec<Vec<usize>>,
    /// Latent neighbors of each concept (indices into `concepts`), sorted.
    pub graph: Vec<Vec<usize>>,
    pub catalog: Vec<CatalogEntry>,
    pub behavior: Vec<BehaviorRecord>,
    pub vectors: WordVectorTable,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "ten", "vo", "sa", "di", "pel", "no", "fa", "gu", "ri", "zo", "be", "tas",
];

fn word(mut index: usize, syllables: usize, suffix: &str) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(SYLLABLES[index % SYLLABLES.len()]);
        index /= SYLLABLES.len();
    }
    let mut chars = w.chars();
    let first = chars.next().expect("non-empty word").to_ascii_uppercase();
    format!("{first}{}{suffix}", chars.as_str())
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl SyntheticWorld {
    pub fn generate(spec: &SyntheticWorldSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.n_concepts;
        let n_cat = spec.n_categories;
        let degree = spec.degree();

        let categories: Vec<String> = (0..n_cat).map(|c| word(c, 2, "s")).collect();
        let concept_category: Vec<usize> = (0..n).map(|i| i % n_cat).collect();
        let concepts: Vec<String> = (0..n)
            .map(|i| format!("{} {}", word(i, 3, "x"), categories[concept_category[i]]))
            .collect();
        let members: Vec<Vec<usize>> = (0..n_cat)
            .map(|c| (0..n).filter(|&i| concept_category[i] == c).collect())
            .collect();

        // popularity: a random rank order with a mild power law
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut popularity = vec![0.0; n];
        for (rank, &i) in order.iter().enumerate() {
            popularity[i] = 1.0 / ((rank + 1) as f64).powf(0.5);
        }

        let per_cat = n.div_ceil(n_cat);
        let mut category_complements = Vec::with_capacity(n_cat);
        for c in 0..n_cat {
            let mut others: Vec<usize> = (0..n_cat).filter(|&o| o != c).collect();
            others.shuffle(&mut rng);
            let mut chosen = Vec::new();
            let mut pool = 0;
            for o in others {
                // enough room for the degree plus some slack for the sampler
                if pool >= degree + per_cat / 2 {
                    break;
                }
                pool += members[o].len();
                chosen.push(o);
            }
            chosen.sort_unstable();
            category_complements.push(chosen);
        }

        let mut graph = Vec::with_capacity(n);
        let mut edge_weight = Vec::with_capacity(n);
        for x in 0..n {
            let pool: Vec<usize> = category_complements[concept_category[x]]
                .iter()
                .flat_map(|&c| members[c].iter().copied())
                .collect();
            if pool.len() < degree {
                return Err(Error::invalid(format!(
                    "concept {x}: complement pool of {} is smaller than degree {degree}",
                    pool.len()
                )));
            }
            let mut weights: Vec<f64> = pool.iter().map(|&y| popularity[y]).collect();
            let mut picked = BTreeSet::new();
            while picked.len() < degree {
                let dist = WeightedIndex::new(&weights).expect("positive weights");
                let i = dist.sample(&mut rng);
                picked.insert(pool[i]);
                weights[i] = 0.0;
            }
            let neighbors: Vec<usize> = picked.into_iter().collect();
            let weights: Vec<f64> = neighbors
                .iter()
                .map(|&y| popularity[y] * rng.gen_range(0.5..1.5))
                .collect();
            graph.push(neighbors);
            edge_weight.push(weights);
        }

        let product_id = |concept: usize, k: usize| format!("P{concept:05}-{k}");
        let mut catalog = Vec::with_capacity(n * spec.products_per_concept);
        for (i, surface) in concepts.iter().enumerate() {
            let cat = &categories[concept_category[i]];
            for k in 0..spec.products_per_concept {
                catalog.push(CatalogEntry {
                    product_id: product_id(i, k),
                    category: vec![
                        "Synthetic Store".to_string(),
                        format!("{cat} Department"),
                        surface.clone(),
                        format!("{surface} Model {k}"),
                    ],
                });
            }
        }

        let neighbor_dist: Vec<WeightedIndex<f64>> = edge_weight
            .iter()
            .map(|w| WeightedIndex::new(w).expect("positive weights"))
            .collect();
        let mut behavior = Vec::with_capacity(spec.baskets);
        for _ in 0..spec.baskets {
            let x = rng.gen_range(0..n);
            let mut also_buy = Vec::with_capacity(spec.items_per_basket);
            for _ in 0..spec.items_per_basket {
                let y = if rng.gen::<f64>() < spec.noise_rate {
                    let mut y = rng.gen_range(0..n - 1);
                    if y >= x {
                        y += 1;
                    }
                    y
                } else {
                    graph[x][neighbor_dist[x].sample(&mut rng)]
                };
                also_buy.push(product_id(y, rng.gen_range(0..spec.products_per_concept)));
            }
            behavior.push(BehaviorRecord {
                product_id: product_id(x, rng.gen_range(0..spec.products_per_concept)),
                also_buy,
            });
        }

        let mut vectors = WordVectorTable::new(spec.vector_dim, true)?;
        let scale = 1.0 / (spec.vector_dim as f64).sqrt();
        let mut category_vectors = Vec::with_capacity(n_cat);
        for name in &categories {
            let v: Vec<f64> = gaussian(&mut rng, spec.vector_dim).iter().map(|x| x * scale).collect();
            vectors.insert(name, v.clone())?;
            category_vectors.push(v);
        }
        for (i, surface) in concepts.iter().enumerate() {
            let item = surface.split(' ').next().expect("two-token surface");
            let noise = gaussian(&mut rng, spec.vector_dim);
            let base = &category_vectors[concept_category[i]];
            let v = base
                .iter()
                .zip(noise)
                .map(|(b, e)| 0.6 * b + 0.8 * e * scale)
                .collect();
            vectors.insert(item, v)?;
        }

        Ok(Self {
            spec: spec.clone(),
            concepts,
            categories,
            concept_category,
            category_complements,
            graph,
            catalog,
            behavior,
            vectors,
        })
    }

    pub fn concept_set(&self) -> Result<ConceptSet> {
        let mut set = ConceptSet::from_surfaces(&self.concepts)?;
        set.freeze();
        Ok(set)
    }

    /// All whitespace tokens of the concept surfaces, sorted.
    pub fn tokens(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .concepts
            .iter()
            .flat_map(|c| c.split(' ').map(str::to_string))
            .collect();
        set.into_iter().collect()
    }

    pub fn is_neighbor(&self, x: usize, y: usize) -> bool {
        self.graph[x].binary_search(&y).is_ok()
    }

    /// Writes `concepts.txt`, `catalog.jsonl`, `behavior.jsonl`,
    /// `vectors.txt`, `tokens.txt`, `graph.jsonl` and `world.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("concepts.txt", self.concepts.join("\n") + "\n")?;
        write_jsonl(dir.join("catalog.jsonl"), &self.catalog)?;
        write_jsonl(dir.join("behavior.jsonl"), &self.behavior)?;
        self.vectors.save_text(dir.join("vectors.txt"))?;
        write("tokens.txt", self.tokens().join("\n") + "\n")?;
        #[derive(Serialize)]
        struct Edge<'a> {
            concept: &'a str,
            neighbors: Vec<&'a str>,
        }
        let edges: Vec<Edge> = self
            .graph
            .iter()
            .enumerate()
            .map(|(x, ns)| Edge {
                concept: &self.concepts[x],
                neighbors: ns.iter().map(|&y| self.concepts[y].as_str()).collect(),
            })
            .collect();
        write_jsonl(dir.join("graph.jsonl"), &edges)?;
        write("world.json", serde_json::to_string_pretty(&self.spec)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_confidence_table, build_ranked_lists};

    fn small(noise: f64) -> SyntheticWorldSpec {
        SyntheticWorldSpec {
            n_concepts: 60,
            n_categories: 6,
            baskets: 6_000,
            complement_graph_density: 0.2,
            noise_rate: noise,
            seed: 11,
            ..SyntheticWorldSpec::default()
        }
    }

    #[test]
    fn noise_free_lists_only_contain_neighbors() {
        let world = SyntheticWorld::generate(&small(0.0)).unwrap();
        let set = world.concept_set().unwrap();
        let table = build_confidence_table(&world.catalog, &world.behavior, &set);
        let lists = build_ranked_lists(&table, 10, 20);
        assert!(lists.len() > 50);
        for (x, list) in &lists {
            for y in list.concepts() {
                assert!(world.is_neighbor(x.index(), y.index()));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = SyntheticWorld::generate(&small(0.1)).unwrap();
        let b = SyntheticWorld::generate(&small(0.1)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.behavior, b.behavior);
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        a.write(da.path()).unwrap();
        b.write(db.path()).unwrap();
        for name in ["concepts.txt", "catalog.jsonl", "behavior.jsonl", "vectors.txt", "graph.jsonl"] {
            assert_eq!(
                std::fs::read(da.path().join(name)).unwrap(),
                std::fs::read(db.path().join(name)).unwrap(),
                "{name} differs"
            );
        }
        let mut other = small(0.1);
        other.seed = 12;
        assert_ne!(SyntheticWorld::generate(&other).unwrap().behavior, a.behavior);
    }

    #[test]
    fn rejects_infeasible_specs() {
        let mut s = small(0.1);
        s.complement_graph_density = 0.05;
        let err = SyntheticWorld::generate(&s).unwrap_err().to_string();
        assert!(err.contains("k_collect"), "{err}");
        s = small(1.0);
        assert!(SyntheticWorld::generate(&s).is_err());
        s = small(0.1);
        s.baskets = 0;
        assert!(SyntheticWorld::generate(&s).is_err());
    }

    #[test]
    fn emitted_vectors_cover_all_tokens() {
        let world = SyntheticWorld::generate(&small(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        world.write(dir.path()).unwrap();
        let table = WordVectorTable::load(dir.path().join("vectors.txt"), true).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("tokens.txt")).unwrap();
        for tok in manifest.lines() {
            assert!(table.get(tok).is_some(), "{tok} missing");
        }
        assert_eq!(table.len(), manifest.lines().count());
    }
}
