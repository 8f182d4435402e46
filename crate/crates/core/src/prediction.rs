//! Prediction records and the line-delimited interchange format shared by
//! every generator and the evaluator.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::{CaseMode, ConceptId, ConceptSet};
use crate::error::{Error, Result};

/// One decoded list position. `concept` is `None` when the surface is not in
/// the concept set (the slot counts against the valid rate).
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub position: usize,
    pub surface: String,
    pub concept: Option<ConceptId>,
    pub explanation: Option<String>,
}

impl Slot {
    pub fn is_valid(&self) -> bool {
        self.concept.is_some()
    }
}

/// Decoded output of a generator for one input concept. Slots are kept
/// verbatim, duplicates included.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub input: String,
    pub slots: Vec<Slot>,
    pub raw_text: String,
    pub source: String,
    /// Number of leading slots that were given in the prompt rather than generated.
    pub prefix_len: usize,
    /// Set when decoding stopped before a complete sequence was produced.
    pub truncated: bool,
}

impl PredictionRecord {
    pub fn new(input: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            slots: Vec::new(),
            raw_text: String::new(),
            source: source.into(),
            prefix_len: 0,
            truncated: false,
        }
    }

    /// Builds a record directly from an ordered concept list.
    pub fn from_concepts(
        input: impl Into<String>,
        source: impl Into<String>,
        concepts: &[ConceptId],
        set: &ConceptSet,
    ) -> Self {
        let mut rec = Self::new(input, source);
        for (i, &c) in concepts.iter().enumerate() {
            rec.slots.push(Slot {
                position: i + 1,
                surface: set.surface(c).to_string(),
                concept: Some(c),
                explanation: None,
            });
        }
        rec.raw_text = rec
            .slots
            .iter()
            .map(|s| format!("{}) {}", s.position, s.surface))
            .collect::<Vec<_>>()
            .join(" ");
        rec
    }

    /// Concept (or `None` for invalid/missing) at 1-based position `m`.
    pub fn concept_at(&self, m: usize) -> Option<ConceptId> {
        self.slots.get(m.checked_sub(1)?).and_then(|s| s.concept)
    }

    pub fn concepts(&self) -> Vec<Option<ConceptId>> {
        self.slots.iter().map(|s| s.concept).collect()
    }

    pub fn validate(&self, set: &ConceptSet) -> Result<()> {
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.position != i + 1 {
                return Err(Error::Data(format!(
                    "record for {:?}: slot {} has position {}",
                    self.input,
                    i + 1,
                    slot.position
                )));
            }
            let resolved = set.lookup(&slot.surface).map(|c| c.id);
            if slot.concept.is_some() && resolved != slot.concept {
                return Err(Error::Data(format!(
                    "record for {:?}: slot {} marked valid but {:?} is not in the concept set",
                    self.input, slot.position, slot.surface
                )));
            }
        }
        if self.prefix_len > self.slots.len() {
            return Err(Error::Data(format!(
                "record for {:?}: prefix length {} exceeds slot count",
                self.input, self.prefix_len
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct WireSlot {
    position: usize,
    concept: String,
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    input: String,
    slots: Vec<WireSlot>,
    raw_text: String,
    source: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    prefix_len: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl PredictionRecord {
    pub fn to_json_line(&self) -> String {
        let wire = WireRecord {
            input: self.input.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| WireSlot {
                    position: s.position,
                    concept: s.surface.clone(),
                    valid: s.concept.is_some(),
                    explanation: s.explanation.clone(),
                })
                .collect(),
            raw_text: self.raw_text.clone(),
            source: self.source.clone(),
            prefix_len: self.prefix_len,
            truncated: self.truncated,
        };
        serde_json::to_string(&wire).expect("record serializes")
    }

    /// Parses one interchange line and resolves slot surfaces against `set`.
    /// A slot flagged valid whose surface is unknown is a schema error.
    pub fn from_json_line(line: &str, set: &ConceptSet, case: CaseMode) -> Result<Self> {
        let wire: WireRecord = serde_json::from_str(line)?;
        let mut slots = Vec::with_capacity(wire.slots.len());
        for (i, s) in wire.slots.into_iter().enumerate() {
            if s.position != i + 1 {
                return Err(Error::Data(format!(
                    "positions must increase from 1, found {} at slot {}",
                    s.position,
                    i + 1
                )));
            }
            let concept = set.lookup_with(&s.concept, case).map(|c| c.id);
            if s.valid && concept.is_none() {
                return Err(Error::Data(format!(
                    "slot {} marked valid but {:?} is not in the concept set",
                    s.position, s.concept
                )));
            }
            slots.push(Slot {
                position: s.position,
                surface: s.concept,
                concept: if s.valid { concept } else { None },
                explanation: s.explanation,
            });
        }
        let rec = PredictionRecord {
            input: wire.input,
            slots,
            raw_text: wire.raw_text,
            source: wire.source,
            prefix_len: wire.prefix_len,
            truncated: wire.truncated,
        };
        if rec.prefix_len > rec.slots.len() {
            return Err(Error::Data("prefix_len exceeds slot count".into()));
        }
        Ok(rec)
    }
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for rec in records {
        writeln!(out, "{}", rec.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(
    path: impl AsRef<Path>,
    set: &ConceptSet,
    case: CaseMode,
) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = PredictionRecord::from_json_line(&line, set, case)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
