//! The list grammar.
//!
//! A list for input `x` is written as
//! `[SOS] x are purchased with 1) y1 2) y2 ... k) yk [EOS]`, optionally with
//! an explanation after each concept (`1) y1: e1 2) y2: e2 ...`). Prompts for
//! generation stop after the relation phrase or after an open marker `n)`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{normalize_surface, CaseMode, ConceptSet};
use crate::error::{Error, Result};
use crate::prediction::{PredictionRecord, Slot};

pub const SOS: &str = "[SOS]";
pub const EOS: &str = "[EOS]";
pub const DEFAULT_RELATION: &str = "are purchased with";
pub const EXPLANATION_DELIMITER: &str = ": ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Ordered,
    Permuted,
    Explained,
    SingleTarget,
    PrefixPrompt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedExample {
    pub text: String,
    pub kind: ExampleKind,
    pub input: String,
}

/// `Some(m)` when `token` is a serial marker such as `3)`.
pub fn marker_number(token: &str) -> Option<usize> {
    let digits = token.strip_suffix(')')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn is_reserved_token(token: &str) -> bool {
    token == SOS || token == EOS || marker_number(token).is_some()
}

/// Rejects surfaces that would make the grammar ambiguous: serial markers,
/// sequence delimiters, or the explanation delimiter.
pub fn check_surface(surface: &str) -> Result<()> {
    let normalized = normalize_surface(surface);
    if normalized.is_empty() {
        return Err(Error::EmptySurface);
    }
    if let Some(tok) = normalized.split(' ').find(|t| is_reserved_token(t)) {
        return Err(Error::Data(format!(
            "concept {normalized:?} contains reserved token {tok:?}"
        )));
    }
    if normalized.contains(EXPLANATION_DELIMITER) || normalized.ends_with(':') {
        return Err(Error::Data(format!(
            "concept {normalized:?} contains the explanation delimiter"
        )));
    }
    Ok(())
}

/// Strips serial markers and sequence delimiters from free text, truncates at
/// the first blank line and collapses whitespace.
pub fn sanitize_explanation(text: &str) -> String {
    let mut kept = String::new();
    for line in text.trim_start().lines() {
        if line.trim().is_empty() {
            break;
        }
        kept.push_str(line);
        kept.push(' ');
    }
    kept.split_whitespace()
        .filter(|t| !is_reserved_token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Prompt template shared by encoding and decoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub relation: String,
}

impl Default for Grammar {
    fn default() -> Self {
        Self {
            relation: DEFAULT_RELATION.to_string(),
        }
    }
}

impl Grammar {
    pub fn new(relation: impl Into<String>) -> Self {
        Self {
            relation: normalize_surface(&relation.into()),
        }
    }

    fn header(&self, x: &str) -> String {
        format!("{SOS} {} {}", normalize_surface(x), self.relation)
    }

    pub fn encode_ordered<S: AsRef<str>>(&self, x: &str, targets: &[S]) -> Result<SerializedExample> {
        if targets.is_empty() {
            return Err(Error::invalid("cannot encode an empty target list"));
        }
        let mut text = self.header(x);
        for (i, y) in targets.iter().enumerate() {
            let y = normalize_surface(y.as_ref());
            if y.is_empty() {
                return Err(Error::EmptySurface);
            }
            text.push_str(&format!(" {}) {}", i + 1, y));
        }
        text.push(' ');
        text.push_str(EOS);
        Ok(SerializedExample {
            text,
            kind: ExampleKind::Ordered,
            input: normalize_surface(x),
        })
    }

    pub fn encode_with_explanations<S: AsRef<str>, E: AsRef<str>>(
        &self,
        x: &str,
        targets: &[S],
        explanations: &[E],
    ) -> Result<SerializedExample> {
        if targets.is_empty() {
            return Err(Error::invalid("cannot encode an empty target list"));
        }
        if targets.len() != explanations.len() {
            return Err(Error::invalid(format!(
                "{} targets but {} explanations",
                targets.len(),
                explanations.len()
            )));
        }
        let mut text = self.header(x);
        for (i, (y, e)) in targets.iter().zip(explanations).enumerate() {
            let y = normalize_surface(y.as_ref());
            if y.is_empty() {
                return Err(Error::EmptySurface);
            }
            let e = sanitize_explanation(e.as_ref());
            if e.is_empty() {
                return Err(Error::invalid(format!("empty explanation for {y:?}")));
            }
            text.push_str(&format!(" {}) {}{}{}", i + 1, y, EXPLANATION_DELIMITER, e));
        }
        text.push(' ');
        text.push_str(EOS);
        Ok(SerializedExample {
            text,
            kind: ExampleKind::Explained,
            input: normalize_surface(x),
        })
    }

    /// `[SOS] x are purchased with y [EOS]`: one target, no marker.
    pub fn encode_single_target(&self, x: &str, y: &str) -> Result<SerializedExample> {
        let y = normalize_surface(y);
        if y.is_empty() {
            return Err(Error::EmptySurface);
        }
        Ok(SerializedExample {
            text: format!("{} {} {}", self.header(x), y, EOS),
            kind: ExampleKind::SingleTarget,
            input: normalize_surface(x),
        })
    }

    /// Generation prompt. With a non-empty prefix the prompt ends with the
    /// next open marker; otherwise it ends after the relation phrase.
    pub fn build_prefix_prompt<S: AsRef<str>>(&self, x: &str, given: &[S]) -> SerializedExample {
        let mut text = self.header(x);
        for (i, g) in given.iter().enumerate() {
            text.push_str(&format!(" {}) {}", i + 1, normalize_surface(g.as_ref())));
        }
        if !given.is_empty() {
            text.push_str(&format!(" {})", given.len() + 1));
        }
        SerializedExample {
            text,
            kind: ExampleKind::PrefixPrompt,
            input: normalize_surface(x),
        }
    }

    pub fn sample_permutations<S: AsRef<str>>(
        &self,
        x: &str,
        targets: &[S],
        n: usize,
        seed: u64,
    ) -> Result<PermutationBatch> {
        let k = targets.len();
        if k < 2 {
            return Err(Error::invalid("need at least 2 targets to permute"));
        }
        let total = (1..=k as u64).try_fold(1u64, |acc, i| acc.checked_mul(i));
        if let Some(total) = total {
            if n as u64 > total {
                return Err(Error::invalid(format!(
                    "requested {n} distinct permutations of {k} targets ({total} exist)"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut orders = Vec::with_capacity(n);
        let mut order: Vec<usize> = (0..k).collect();
        while orders.len() < n {
            order.shuffle(&mut rng);
            if seen.insert(order.clone()) {
                orders.push(order.clone());
            }
        }
        let permutations = orders
            .iter()
            .map(|o| {
                let permuted: Vec<&str> = o.iter().map(|&i| targets[i].as_ref()).collect();
                let mut ex = self.encode_ordered(x, &permuted)?;
                ex.kind = ExampleKind::Permuted;
                Ok(ex)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PermutationBatch { orders, permutations })
    }

    /// Parses generated text back into slots. Never fails: text after the
    /// last well-formed marker is dropped, as is anything after `[EOS]`.
    pub fn decode_list(&self, text: &str, set: &ConceptSet, opts: &DecodeOptions) -> PredictionRecord {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.first() == Some(&SOS) {
            tokens.remove(0);
        }
        let complete = tokens.contains(&EOS);
        if let Some(end) = tokens.iter().position(|t| *t == EOS) {
            tokens.truncate(end);
        }
        let first_marker = tokens.iter().position(|t| marker_number(t) == Some(1));
        let header = &tokens[..first_marker.unwrap_or(tokens.len())];
        let input = self.input_from_header(header);

        let mut rec = PredictionRecord::new(input, opts.source.clone());
        rec.raw_text = normalize_surface(text);
        rec.truncated = !complete;
        let Some(start) = first_marker else {
            return rec;
        };

        let mut segments: Vec<Vec<&str>> = Vec::new();
        let mut expected = 1;
        for tok in &tokens[start..] {
            match marker_number(tok) {
                Some(m) if m == expected => {
                    if opts.max_slots.is_some_and(|max| segments.len() == max) {
                        break;
                    }
                    segments.push(Vec::new());
                    expected += 1;
                }
                Some(_) => break,
                None => segments.last_mut().expect("marker seen").push(tok),
            }
        }
        for (i, seg) in segments.into_iter().enumerate() {
            let joined = seg.join(" ");
            let (surface, explanation) = if opts.expect_explanations {
                split_explanation(&joined)
            } else {
                (joined, None)
            };
            let concept = set.lookup_with(&surface, opts.case).map(|c| c.id);
            rec.slots.push(Slot {
                position: i + 1,
                surface,
                concept,
                explanation,
            });
        }
        rec
    }

    /// Decoder for single-target outputs: everything after the relation
    /// phrase up to `[EOS]` is one concept.
    pub fn decode_single(&self, text: &str, set: &ConceptSet, opts: &DecodeOptions) -> PredictionRecord {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.first() == Some(&SOS) {
            tokens.remove(0);
        }
        let complete = tokens.contains(&EOS);
        if let Some(end) = tokens.iter().position(|t| *t == EOS) {
            tokens.truncate(end);
        }
        let rel: Vec<&str> = self.relation.split(' ').collect();
        let split = tokens
            .windows(rel.len())
            .position(|w| w == rel.as_slice())
            .map(|p| p + rel.len());
        let (header, body) = match split {
            Some(p) => (&tokens[..p], &tokens[p..]),
            None => (&tokens[..], &tokens[tokens.len()..]),
        };
        let mut rec = PredictionRecord::new(self.input_from_header(header), opts.source.clone());
        rec.raw_text = normalize_surface(text);
        rec.truncated = !complete;
        if !body.is_empty() {
            let surface = body.join(" ");
            rec.slots.push(Slot {
                position: 1,
                concept: set.lookup_with(&surface, opts.case).map(|c| c.id),
                surface,
                explanation: None,
            });
        }
        rec
    }

    fn input_from_header(&self, header: &[&str]) -> String {
        let joined = header.join(" ");
        match joined.strip_suffix(&self.relation) {
            Some(x) => x.trim_end().to_string(),
            None => joined,
        }
    }
}

fn split_explanation(segment: &str) -> (String, Option<String>) {
    if let Some(idx) = segment.find(EXPLANATION_DELIMITER) {
        let concept = segment[..idx].to_string();
        let explanation = segment[idx + EXPLANATION_DELIMITER.len()..].to_string();
        (concept, Some(explanation))
    } else if let Some(concept) = segment.strip_suffix(':') {
        (concept.to_string(), Some(String::new()))
    } else {
        (segment.to_string(), None)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DecodeOptions {
    pub expect_explanations: bool,
    pub case: CaseMode,
    pub max_slots: Option<usize>,
    pub source: String,
}

impl DecodeOptions {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn explained() -> Self {
        Self {
            expect_explanations: true,
            ..Self::default()
        }
    }
}

/// Distinct re-orderings of one target list, each re-encoded with markers 1..k.
#[derive(Clone, Debug)]
pub struct PermutationBatch {
    /// `orders[i][j]` is the source index placed at position `j`.
    pub orders: Vec<Vec<usize>>,
    pub permutations: Vec<SerializedExample>,
}

impl PermutationBatch {
    pub fn len(&self) -> usize {
        self.permutations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutations.is_empty()
    }
}

pub fn encode_ordered<S: AsRef<str>>(x: &str, targets: &[S]) -> Result<SerializedExample> {
    Grammar::default().encode_ordered(x, targets)
}

pub fn encode_with_explanations<S: AsRef<str>, E: AsRef<str>>(
    x: &str,
    targets: &[S],
    explanations: &[E],
) -> Result<SerializedExample> {
    Grammar::default().encode_with_explanations(x, targets, explanations)
}

pub fn build_prefix_prompt<S: AsRef<str>>(x: &str, given: &[S]) -> SerializedExample {
    Grammar::default().build_prefix_prompt(x, given)
}

pub fn decode_list(text: &str, set: &ConceptSet, expect_explanations: bool) -> PredictionRecord {
    let opts = DecodeOptions {
        expect_explanations,
        ..DecodeOptions::default()
    };
    Grammar::default().decode_list(text, set, &opts)
}

pub fn sample_permutations<S: AsRef<str>>(
    x: &str,
    targets: &[S],
    n: usize,
    seed: u64,
) -> Result<PermutationBatch> {
    Grammar::default().sample_permutations(x, targets, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::ConceptId;

    const CAMERA_LIST: [&str; 5] = [
        "Camera Lenses",
        "Batteries",
        "Camera Cases",
        "Memory Cards",
        "Battery Chargers",
    ];
    const CAMERA_TEXT: &str = "[SOS] Digital Cameras are purchased with 1) Camera Lenses 2) Batteries 3) Camera Cases 4) Memory Cards 5) Battery Chargers [EOS]";

    fn camera_set() -> ConceptSet {
        let mut surfaces = vec!["Digital Cameras"];
        surfaces.extend(CAMERA_LIST);
        ConceptSet::from_surfaces(surfaces).unwrap()
    }

    #[test]
    fn worked_example_encodes_exactly() {
        let ex = encode_ordered("Digital Cameras", &CAMERA_LIST).unwrap();
        assert_eq!(ex.text, CAMERA_TEXT);
        assert_eq!(ex.kind, ExampleKind::Ordered);
    }

    #[test]
    fn worked_example_decodes_in_order() {
        let set = camera_set();
        let rec = decode_list(CAMERA_TEXT, &set, false);
        assert_eq!(rec.input, "Digital Cameras");
        assert!(!rec.truncated);
        let got: Vec<_> = rec.slots.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(got, CAMERA_LIST);
        assert!(rec.slots.iter().all(|s| s.is_valid()));
        assert_eq!(rec.slots[4].position, 5);
    }

    #[test]
    fn single_target_and_empty_list() {
        assert_eq!(
            encode_ordered("X", &["Y"]).unwrap().text,
            "[SOS] X are purchased with 1) Y [EOS]"
        );
        assert!(encode_ordered::<&str>("X", &[]).is_err());
    }

    #[test]
    fn explained_example() {
        let ex = encode_with_explanations(
            "Digital Cameras",
            &["Camera Lenses", "Battery Chargers"],
            &[
                "The camera lens is the part of the camera that focuses the light from the object into a picture.",
                "Battery Chargers ... are needed to recharge the batteries that are used in Digital Cameras.",
            ],
        )
        .unwrap();
        assert_eq!(
            ex.text,
            "[SOS] Digital Cameras are purchased with 1) Camera Lenses: The camera lens is the part of the camera that focuses the light from the object into a picture. 2) Battery Chargers: Battery Chargers ... are needed to recharge the batteries that are used in Digital Cameras. [EOS]"
        );
        let rec = decode_list(&ex.text, &camera_set(), true);
        assert_eq!(rec.slots.len(), 2);
        assert_eq!(rec.slots[1].surface, "Battery Chargers");
        assert!(rec.slots[0].explanation.as_deref().unwrap().starts_with("The camera lens"));
        assert!(encode_with_explanations("X", &["A", "B"], &["e"]).is_err());
    }

    #[test]
    fn unknown_surface_is_invalid_slot() {
        let set = camera_set();
        let rec = decode_list(
            "[SOS] Digital Cameras are purchased with 1) Camera Lenses 2) Flux Capacitors 3) Batteries [EOS]",
            &set,
            false,
        );
        assert_eq!(rec.slots.len(), 3);
        assert!(rec.slots[0].is_valid());
        assert!(!rec.slots[1].is_valid());
        assert_eq!(rec.slots[1].surface, "Flux Capacitors");
    }

    #[test]
    fn duplicates_are_preserved() {
        let set = camera_set();
        let rec = decode_list(
            "[SOS] Camera Cases are purchased with 1) Batteries 2) Memory Cards 3) Camera Lenses 4) Memory Cards [EOS]",
            &set,
            false,
        );
        assert_eq!(rec.slots[1].concept, rec.slots[3].concept);
        assert_eq!(rec.slots[3].concept, Some(ConceptId(4)));
    }

    #[test]
    fn malformed_text_never_panics() {
        let set = camera_set();
        for text in [
            "",
            "[SOS]",
            "[EOS]",
            "1)",
            "garbage without markers",
            "[SOS] X are purchased with 2) Batteries",
            "[SOS] X are purchased with 1) Batteries 3) Memory Cards 2) Camera Cases",
            "[SOS] X are purchased with 1) 2) 3)",
        ] {
            let _ = decode_list(text, &set, false);
            let _ = decode_list(text, &set, true);
        }
        let rec = decode_list("[SOS] X are purchased with 1) Batteries 3) Memory Cards 2) Camera Cases", &set, false);
        assert_eq!(rec.slots.len(), 1);
        assert!(rec.truncated);
        let rec = decode_list("[SOS] X are purchased with 1) 2) Batteries [EOS]", &set, false);
        assert_eq!(rec.slots.len(), 2);
        assert!(!rec.slots[0].is_valid());
    }

    #[test]
    fn max_slots_discards_remainder() {
        let set = camera_set();
        let opts = DecodeOptions {
            max_slots: Some(2),
            ..DecodeOptions::default()
        };
        let rec = Grammar::default().decode_list(CAMERA_TEXT, &set, &opts);
        assert_eq!(rec.slots.len(), 2);
    }

    #[test]
    fn prefix_prompts() {
        assert_eq!(
            build_prefix_prompt("Digital Cameras", &["Batteries"]).text,
            "[SOS] Digital Cameras are purchased with 1) Batteries 2)"
        );
        assert!(build_prefix_prompt("Digital Cameras", &CAMERA_LIST).text.ends_with(" 6)"));
        assert_eq!(
            build_prefix_prompt::<&str>("x", &[]).text,
            "[SOS] x are purchased with"
        );
    }

    #[test]
    fn single_target_round_trip() {
        let set = camera_set();
        let g = Grammar::default();
        let ex = g.encode_single_target("Digital Cameras", "Memory Cards").unwrap();
        assert_eq!(ex.text, "[SOS] Digital Cameras are purchased with Memory Cards [EOS]");
        let rec = g.decode_single(&ex.text, &set, &DecodeOptions::default());
        assert_eq!(rec.slots.len(), 1);
        assert_eq!(rec.slots[0].concept, Some(ConceptId(4)));
    }

    #[test]
    fn permutations_are_distinct_and_complete() {
        let batch = sample_permutations("Digital Cameras", &CAMERA_LIST, 10, 3).unwrap();
        assert_eq!(batch.len(), 10);
        let set = camera_set();
        let texts: HashSet<_> = batch.permutations.iter().map(|p| p.text.clone()).collect();
        assert_eq!(texts.len(), 10);
        for p in &batch.permutations {
            let rec = decode_list(&p.text, &set, false);
            let mut got: Vec<_> = rec.slots.iter().map(|s| s.surface.clone()).collect();
            got.sort();
            let mut want: Vec<_> = CAMERA_LIST.iter().map(|s| s.to_string()).collect();
            want.sort();
            assert_eq!(got, want);
        }
        let again = sample_permutations("Digital Cameras", &CAMERA_LIST, 10, 3).unwrap();
        assert_eq!(batch.orders, again.orders);

        let both = sample_permutations("X", &["A", "B"], 2, 0).unwrap();
        let mut orders = both.orders.clone();
        orders.sort();
        assert_eq!(orders, vec![vec![0, 1], vec![1, 0]]);
        assert!(sample_permutations("X", &["A", "B"], 3, 0).is_err());
        assert!(sample_permutations("X", &["A"], 1, 0).is_err());
    }

    #[test]
    fn surface_checks() {
        assert!(check_surface("Camera Mounts & Clamps").is_ok());
        assert!(check_surface("Step 2) Widgets").is_err());
        assert!(check_surface("Widgets: Large").is_err());
        assert!(check_surface("[EOS] Widgets").is_err());
    }

    #[test]
    fn sanitizer_removes_markers_and_stops_at_blank_line() {
        assert_eq!(
            sanitize_explanation("  They go 2) together [EOS] well.\n\nQ: next question"),
            "They go together well."
        );
    }
}
