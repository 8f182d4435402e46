//! Concept identities, the closed concept universe, and ranked complement lists.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Dense handle of a concept inside its [`ConceptSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Concept {
    pub id: ConceptId,
    pub surface: String,
    pub token_count: usize,
}

/// Trim and collapse internal whitespace runs to a single space.
pub fn normalize_surface(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn token_count(surface: &str) -> usize {
    surface.split_whitespace().count()
}

/// How surfaces are compared by [`ConceptSet::lookup_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CaseMode {
    #[default]
    Sensitive,
    Insensitive,
}

/// The closed candidate universe. Ids are assigned in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ConceptSet {
    concepts: Vec<Concept>,
    index: HashMap<String, ConceptId>,
    folded: HashMap<String, ConceptId>,
    frozen: bool,
}

impl ConceptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_surfaces<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for s in surfaces {
            set.intern(s.as_ref())?;
        }
        Ok(set)
    }

    /// Returns the existing concept for `surface` or appends a new one.
    pub fn intern(&mut self, surface: &str) -> Result<&Concept> {
        let normalized = normalize_surface(surface);
        if normalized.is_empty() {
            return Err(Error::EmptySurface);
        }
        if let Some(&id) = self.index.get(&normalized) {
            return Ok(&self.concepts[id.index()]);
        }
        if self.frozen {
            return Err(Error::invalid(format!(
                "cannot intern {normalized:?} into a frozen concept set"
            )));
        }
        let id = ConceptId(self.concepts.len() as u32);
        self.folded.entry(normalized.to_lowercase()).or_insert(id);
        self.index.insert(normalized.clone(), id);
        self.concepts.push(Concept {
            id,
            token_count: token_count(&normalized),
            surface: normalized,
        });
        Ok(&self.concepts[id.index()])
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Exact normalized-surface match, case-sensitive.
    pub fn lookup(&self, surface: &str) -> Option<&Concept> {
        self.lookup_with(surface, CaseMode::Sensitive)
    }

    pub fn lookup_with(&self, surface: &str, mode: CaseMode) -> Option<&Concept> {
        let normalized = normalize_surface(surface);
        let id = match mode {
            CaseMode::Sensitive => self.index.get(&normalized),
            CaseMode::Insensitive => self.folded.get(&normalized.to_lowercase()),
        }?;
        Some(&self.concepts[id.index()])
    }

    pub fn get(&self, id: ConceptId) -> Option<&Concept> {
        self.concepts.get(id.index())
    }

    /// Panics on an id from another set.
    pub fn surface(&self, id: ConceptId) -> &str {
        &self.concepts[id.index()].surface
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.concepts.iter().map(|c| c.id)
    }

    /// Reads a concept-set file: one surface per line, blank lines and
    /// `#` comments skipped. The returned set is frozen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut set = Self::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            set.intern(line)?;
        }
        set.freeze();
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&c.surface);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Serialize for ConceptSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.concepts.iter().map(|c| c.surface.as_str()))
    }
}

impl<'de> Deserialize<'de> for ConceptSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let surfaces = Vec::<String>::deserialize(deserializer)?;
        let n = surfaces.len();
        let mut set = ConceptSet::from_surfaces(&surfaces).map_err(serde::de::Error::custom)?;
        if set.len() != n {
            return Err(serde::de::Error::custom("duplicate surfaces in concept set"));
        }
        set.freeze();
        Ok(set)
    }
}

/// Ordered complements of one input concept with their confidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub input: ConceptId,
    pub targets: Vec<(ConceptId, f64)>,
}

impl RankedList {
    /// Checks non-increasing confidences in (0, 1], no duplicates and no self-reference.
    pub fn new(input: ConceptId, targets: Vec<(ConceptId, f64)>) -> Result<Self> {
        let list = Self { input, targets };
        list.validate()?;
        Ok(list)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, &(y, conf)) in self.targets.iter().enumerate() {
            if y == self.input {
                return Err(Error::Data(format!("list of {} contains its input", self.input)));
            }
            if !seen.insert(y) {
                return Err(Error::Data(format!("list of {} repeats {}", self.input, y)));
            }
            if !(conf > 0.0 && conf <= 1.0) {
                return Err(Error::Data(format!("confidence {conf} outside (0, 1]")));
            }
            if i > 0 && conf > self.targets[i - 1].1 {
                return Err(Error::Data(format!(
                    "list of {} is not sorted by confidence",
                    self.input
                )));
            }
        }
        Ok(())
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.targets.iter().map(|&(y, _)| y)
    }

    /// The first `n` targets (or fewer).
    pub fn top(&self, n: usize) -> Vec<ConceptId> {
        self.concepts().take(n).collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}
