//! Clinical note ingestion and per-code dataset assembly.
//!
//! Notes are split into header-delimited sections without losing a byte of
//! the original text, sections are segmented into sentences, coder
//! annotations are projected onto the sentences they overlap (gold
//! positives), and negatives are sampled from the remaining sentences.
//! [`assemble_dataset`] then combines gold, synthetic and negative examples
//! at a target positive fraction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint;
use crate::jsonl;
use crate::text::normalize;

/// Title given to text that precedes the first detected header.
pub const PREAMBLE: &str = "preamble";

/// Note id used for synthetic stand-in sentences.
pub const SYNTHETIC_NOTE_ID: &str = "synthetic";

/// Tokens ending in `.` that never terminate a sentence. Compared case-insensitively.
pub const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Pt.", "etc.", "e.g.", "i.e.", "vs.",
];

const MAX_HEADER_CHARS: usize = 48;

pub const DEFAULT_TARGET_POSITIVE_FRACTION: f64 = 1.0 / 3.0;
pub const DEFAULT_RATIO_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate note id {0:?}")]
    DuplicateNoteId(String),
    #[error("annotation references unknown note {note_id:?} (code {code_id})")]
    MissingNote { note_id: String, code_id: String },
    #[error("evidence {evidence_text:?} not found in note {note_id:?} (code {code_id})")]
    EvidenceNotFound {
        note_id: String,
        code_id: String,
        evidence_text: String,
    },
    #[error("{code_id}: need {needed} negatives but only {available} eligible sentences")]
    InsufficientNegatives {
        code_id: String,
        needed: usize,
        available: usize,
    },
    #[error("{code_id}: positive fraction {achieved:.4} cannot reach target {target:.4} ± {tolerance}")]
    RatioUnreachable {
        code_id: String,
        achieved: f64,
        target: f64,
        tolerance: f64,
    },
    #[error("expected code {expected:?} but found {found:?}")]
    CodeMismatch { expected: String, found: String },
    #[error("{code_id}: example {text:?} has label {label} which contradicts its source {origin}")]
    LabelSourceConflict {
        code_id: String,
        text: String,
        label: bool,
        origin: Source,
    },
    #[error("{code_id}: duplicate example {text:?}")]
    DuplicateExample { code_id: String, text: String },
    #[error("invalid code registry: {0}")]
    Registry(String),
}

// ---------------------------------------------------------------------------
// Notes and sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// Header text with surrounding whitespace and the trailing colon removed.
    pub title: String,
    /// The raw header line including its line terminator; `None` for the preamble.
    pub header: Option<String>,
    pub body: String,
    /// Byte offset of `body` within the note's raw text.
    pub body_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedicalNote {
    pub note_id: String,
    pub raw_text: String,
    pub sections: Vec<Section>,
}

impl MedicalNote {
    /// Concatenate headers and bodies back into the original text.
    pub fn restore(&self) -> String {
        let mut out = String::with_capacity(self.raw_text.len());
        for s in &self.sections {
            if let Some(h) = &s.header {
                out.push_str(h);
            }
            out.push_str(&s.body);
        }
        out
    }

    pub fn section(&self, title: &str) -> Option<&Section> {
        self.sections
            .iter()
            .find(|s| canonical_title(&s.title) == canonical_title(title))
    }
}

fn canonical_title(title: &str) -> String {
    title.trim().trim_end_matches(':').trim().to_lowercase()
}

/// Title of a header line, if the line is one: a short line ending in `:`
/// whose title contains a letter and no further colon.
fn header_title(line: &str) -> Option<&str> {
    let trimmed = line.trim();
    let title = trimmed.strip_suffix(':')?.trim();
    if title.is_empty()
        || title.contains(':')
        || title.chars().count() > MAX_HEADER_CHARS
        || !title.chars().any(char::is_alphabetic)
    {
        return None;
    }
    Some(title)
}

/// Split a note into sections at header lines.
pub fn parse_note(note_id: impl Into<String>, raw_text: &str) -> MedicalNote {
    let mut sections = Vec::new();
    // (title, header line) of the section currently being filled, plus where its body starts
    let mut current: Option<(String, String)> = None;
    let mut body_start = 0;
    let mut pos = 0;

    for line in raw_text.split_inclusive('\n') {
        if let Some(title) = header_title(line) {
            let body = &raw_text[body_start..pos];
            match current.take() {
                Some((t, h)) => sections.push(Section {
                    title: t,
                    header: Some(h),
                    body: body.to_string(),
                    body_offset: body_start,
                }),
                None if !body.is_empty() => sections.push(Section {
                    title: PREAMBLE.to_string(),
                    header: None,
                    body: body.to_string(),
                    body_offset: body_start,
                }),
                None => {}
            }
            current = Some((title.to_string(), line.to_string()));
            body_start = pos + line.len();
        }
        pos += line.len();
    }

    let body = &raw_text[body_start..];
    match current {
        Some((t, h)) => sections.push(Section {
            title: t,
            header: Some(h),
            body: body.to_string(),
            body_offset: body_start,
        }),
        None if !body.is_empty() => sections.push(Section {
            title: PREAMBLE.to_string(),
            header: None,
            body: body.to_string(),
            body_offset: body_start,
        }),
        None => {}
    }

    MedicalNote {
        note_id: note_id.into(),
        raw_text: raw_text.to_string(),
        sections,
    }
}

pub fn has_social_history(note: &MedicalNote) -> bool {
    note.sections
        .iter()
        .any(|s| canonical_title(&s.title) == "social history")
}

// ---------------------------------------------------------------------------
// Sentences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub note_id: String,
    pub index: usize,
    pub text: String,
    /// Byte span of `text` in the note's raw text; empty for synthetic sentences.
    pub span: Range<usize>,
}

impl Sentence {
    pub fn synthetic(seq: usize, text: impl Into<String>) -> Self {
        Sentence {
            note_id: SYNTHETIC_NOTE_ID.to_string(),
            index: seq,
            text: text.into(),
            span: 0..0,
        }
    }
}

/// Which part of a note gets segmented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentScope {
    #[default]
    FullNote,
    SocialHistory,
}

fn is_abbreviation(token: &str) -> bool {
    let token = token.trim_start_matches(['(', '[', '"', '\'']);
    ABBREVIATIONS.iter().any(|a| a.eq_ignore_ascii_case(token))
}

/// Byte ranges of trimmed, non-empty sentences in `text`.
///
/// A sentence ends at a run of `.`, `!` or `?` (optionally followed by closing
/// quotes or brackets) that is followed by whitespace, unless the run is a
/// single `.` closing a guarded abbreviation. Trailing unpunctuated text is
/// its own sentence.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;

    let push = |from: usize, to: usize, spans: &mut Vec<Range<usize>>| {
        let frag = &text[from..to];
        let lead = frag.len() - frag.trim_start().len();
        let trimmed = frag.trim();
        if !trimmed.is_empty() {
            spans.push(from + lead..from + lead + trimmed.len());
        }
    };

    while i < bytes.len() {
        if !matches!(bytes[i], b'.' | b'!' | b'?') {
            i += 1;
            continue;
        }
        let punct_start = i;
        while i < bytes.len() && matches!(bytes[i], b'.' | b'!' | b'?') {
            i += 1;
        }
        let punct_end = i;
        while i < bytes.len() && matches!(bytes[i], b'"' | b'\'' | b')' | b']') {
            i += 1;
        }
        let next_is_space = text[i..].chars().next().is_some_and(char::is_whitespace);
        if !next_is_space {
            continue;
        }
        if punct_end - punct_start == 1 && bytes[punct_start] == b'.' {
            let token_start = text[..punct_start]
                .rfind(char::is_whitespace)
                .map(|p| p + text[p..].chars().next().map_or(1, char::len_utf8))
                .unwrap_or(0);
            if is_abbreviation(&text[token_start..punct_end]) {
                continue;
            }
        }
        push(start, i, &mut spans);
        start = i;
    }
    push(start, text.len(), &mut spans);
    spans
}

/// Segment the whole note (every section body; header lines are excluded).
pub fn segment_sentences(note: &MedicalNote) -> Vec<Sentence> {
    segment_sentences_in(note, SegmentScope::FullNote)
}

pub fn segment_sentences_in(note: &MedicalNote, scope: SegmentScope) -> Vec<Sentence> {
    let mut out = Vec::new();
    for section in &note.sections {
        if scope == SegmentScope::SocialHistory && canonical_title(&section.title) != "social history"
        {
            continue;
        }
        for span in sentence_spans(&section.body) {
            let text = section.body[span.clone()].to_string();
            let abs = section.body_offset + span.start..section.body_offset + span.end;
            out.push(Sentence {
                note_id: note.note_id.clone(),
                index: out.len(),
                text,
                span: abs,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus and annotations
// ---------------------------------------------------------------------------

/// Input record for a note.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoteRecord {
    pub note_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub note_id: String,
    pub code_id: String,
    pub evidence_text: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    notes: Vec<MedicalNote>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(notes: Vec<MedicalNote>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(notes.len());
        for (i, n) in notes.iter().enumerate() {
            if by_id.insert(n.note_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateNoteId(n.note_id.clone()));
            }
        }
        Ok(Corpus { notes, by_id })
    }

    pub fn from_records(records: &[NoteRecord]) -> Result<Self, CorpusError> {
        Corpus::new(
            records
                .iter()
                .map(|r| parse_note(r.note_id.clone(), &r.text))
                .collect(),
        )
    }

    pub fn notes(&self) -> &[MedicalNote] {
        &self.notes
    }

    pub fn get(&self, note_id: &str) -> Option<&MedicalNote> {
        self.by_id.get(note_id).map(|&i| &self.notes[i])
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Keep only notes with a Social History section.
    pub fn with_social_history(&self) -> Corpus {
        let notes: Vec<_> = self
            .notes
            .iter()
            .filter(|n| has_social_history(n))
            .cloned()
            .collect();
        Corpus::new(notes).expect("subset of unique ids is unique")
    }

    /// All sentences of all notes, in corpus order.
    pub fn sentences(&self, scope: SegmentScope) -> Vec<Sentence> {
        self.notes
            .iter()
            .flat_map(|n| segment_sentences_in(n, scope))
            .collect()
    }
}

/// Result of projecting annotations onto sentences. Bad annotations are
/// reported in `errors` without stopping the others.
#[derive(Debug, Clone, Default)]
pub struct MergeOutcome {
    pub gold: Vec<LabeledSentence>,
    pub errors: Vec<CorpusError>,
}

pub fn merge_annotations(
    corpus: &Corpus,
    annotations: &[Annotation],
    scope: SegmentScope,
) -> MergeOutcome {
    let mut out = MergeOutcome::default();
    let mut segmented: HashMap<&str, Vec<Sentence>> = HashMap::new();
    let mut seen: HashSet<(String, usize, String)> = HashSet::new();

    for ann in annotations {
        let Some(note) = corpus.get(&ann.note_id) else {
            out.errors.push(CorpusError::MissingNote {
                note_id: ann.note_id.clone(),
                code_id: ann.code_id.clone(),
            });
            continue;
        };
        let found = if ann.evidence_text.is_empty() {
            None
        } else {
            note.raw_text.find(&ann.evidence_text)
        };
        let Some(start) = found else {
            out.errors.push(CorpusError::EvidenceNotFound {
                note_id: ann.note_id.clone(),
                code_id: ann.code_id.clone(),
                evidence_text: ann.evidence_text.clone(),
            });
            continue;
        };
        let evidence = start..start + ann.evidence_text.len();
        let sentences = segmented
            .entry(note.note_id.as_str())
            .or_insert_with(|| segment_sentences_in(note, scope));
        for s in sentences.iter() {
            let overlaps = s.span.start < evidence.end && evidence.start < s.span.end;
            if overlaps && seen.insert((s.note_id.clone(), s.index, ann.code_id.clone())) {
                out.gold.push(LabeledSentence::gold(s.clone(), &ann.code_id));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Codes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdohCode {
    pub code_id: String,
    pub keyword_phrase: String,
}

impl SdohCode {
    pub fn new(code_id: impl Into<String>, keyword_phrase: impl Into<String>) -> Self {
        SdohCode {
            code_id: code_id.into(),
            keyword_phrase: keyword_phrase.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeRegistry {
    codes: Vec<SdohCode>,
}

impl CodeRegistry {
    pub fn new(codes: Vec<SdohCode>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for c in &codes {
            if c.code_id.trim().is_empty() {
                return Err(CorpusError::Registry("empty code_id".into()));
            }
            if c.keyword_phrase.trim().is_empty() {
                return Err(CorpusError::Registry(format!(
                    "code {} has an empty keyword phrase",
                    c.code_id
                )));
            }
            if !ids.insert(c.code_id.as_str()) {
                return Err(CorpusError::Registry(format!(
                    "duplicate code_id {}",
                    c.code_id
                )));
            }
        }
        Ok(CodeRegistry { codes })
    }

    /// The seven SDOH factors studied: housing, food, incarceration, income,
    /// marital estrangement, relatives needing care, employment.
    pub fn standard() -> Self {
        CodeRegistry::new(vec![
            SdohCode::new("homelessness", "homelessness"),
            SdohCode::new("food_insecurity", "food insecurity"),
            SdohCode::new("imprisonment", "imprisonment or other incarceration"),
            SdohCode::new("low_income", "low income"),
            SdohCode::new("marital_estrangement", "marital estrangement"),
            SdohCode::new("relative_needing_care", "relative needing care"),
            SdohCode::new("unemployment", "unemployment"),
        ])
        .expect("standard registry is valid")
    }

    pub fn get(&self, code_id: &str) -> Option<&SdohCode> {
        self.codes.iter().find(|c| c.code_id == code_id)
    }

    /// Resolve a code id or keyword phrase by exact case-insensitive match.
    /// Anything else is rejected; there is no fuzzy matching.
    pub fn resolve(&self, input: &str) -> Option<&SdohCode> {
        let needle = input.trim().to_lowercase();
        self.codes
            .iter()
            .find(|c| c.code_id.to_lowercase() == needle)
            .or_else(|| {
                self.codes
                    .iter()
                    .find(|c| c.keyword_phrase.trim().to_lowercase() == needle)
            })
    }

    pub fn codes(&self) -> &[SdohCode] {
        &self.codes
    }

    pub fn iter(&self) -> impl Iterator<Item = &SdohCode> {
        self.codes.iter()
    }
}

// ---------------------------------------------------------------------------
// Labeled examples and datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gold,
    Synthetic,
    Negative,
}

impl Source {
    pub fn label(self) -> bool {
        !matches!(self, Source::Negative)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Gold => "gold",
            Source::Synthetic => "synthetic",
            Source::Negative => "negative",
        })
    }
}

/// A sentence labeled for one code. The label is implied by the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub code_id: String,
    pub source: Source,
}

impl LabeledSentence {
    pub fn gold(sentence: Sentence, code_id: &str) -> Self {
        LabeledSentence {
            sentence,
            code_id: code_id.to_string(),
            source: Source::Gold,
        }
    }

    pub fn synthetic(seq: usize, text: impl Into<String>, code_id: &str) -> Self {
        LabeledSentence {
            sentence: Sentence::synthetic(seq, text),
            code_id: code_id.to_string(),
            source: Source::Synthetic,
        }
    }

    pub fn negative(sentence: Sentence, code_id: &str) -> Self {
        LabeledSentence {
            sentence,
            code_id: code_id.to_string(),
            source: Source::Negative,
        }
    }

    pub fn label(&self) -> bool {
        self.source.label()
    }

    pub fn text(&self) -> &str {
        &self.sentence.text
    }

    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            code_id: self.code_id.clone(),
            text: self.sentence.text.clone(),
            label: self.label(),
            source: self.source,
            note_id: self.sentence.note_id.clone(),
            index: self.sentence.index,
        }
    }
}

/// On-disk form of a labeled example. Field order is part of the file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub code_id: String,
    pub text: String,
    pub label: bool,
    pub source: Source,
    pub note_id: String,
    pub index: usize,
}

impl TryFrom<DatasetRecord> for LabeledSentence {
    type Error = CorpusError;

    fn try_from(r: DatasetRecord) -> Result<Self, Self::Error> {
        if r.label != r.source.label() {
            return Err(CorpusError::LabelSourceConflict {
                code_id: r.code_id,
                text: r.text,
                label: r.label,
                origin: r.source,
            });
        }
        Ok(LabeledSentence {
            sentence: Sentence {
                note_id: r.note_id,
                index: r.index,
                text: r.text,
                span: 0..0,
            },
            code_id: r.code_id,
            source: r.source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub code_id: String,
    pub examples: Vec<LabeledSentence>,
    /// Seed used by the sampling that produced this dataset; `None` when loaded from disk.
    pub seed: Option<u64>,
}

impl Dataset {
    /// Build a dataset, checking that all examples share `code_id`, that no
    /// `(text, label)` pair repeats and that no text is both positive and negative.
    pub fn new(
        code_id: impl Into<String>,
        examples: Vec<LabeledSentence>,
        seed: Option<u64>,
    ) -> Result<Self, CorpusError> {
        let code_id = code_id.into();
        let mut seen: HashMap<String, bool> = HashMap::new();
        for ex in &examples {
            if ex.code_id != code_id {
                return Err(CorpusError::CodeMismatch {
                    expected: code_id,
                    found: ex.code_id.clone(),
                });
            }
            if seen.insert(normalize(ex.text()), ex.label()).is_some() {
                return Err(CorpusError::DuplicateExample {
                    code_id,
                    text: ex.text().to_string(),
                });
            }
        }
        Ok(Dataset {
            code_id,
            examples,
            seed,
        })
    }

    pub fn from_records(
        code_id: impl Into<String>,
        records: Vec<DatasetRecord>,
    ) -> Result<Self, CorpusError> {
        let examples = records
            .into_iter()
            .map(LabeledSentence::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(code_id, examples, None)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.examples.iter().filter(|e| e.source == source).count()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label()).count()
    }

    pub fn positive_fraction(&self) -> Option<f64> {
        (!self.examples.is_empty()).then(|| self.positives() as f64 / self.len() as f64)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(LabeledSentence::label).collect()
    }

    pub fn to_records(&self) -> Vec<DatasetRecord> {
        self.examples.iter().map(LabeledSentence::to_record).collect()
    }

    /// SHA-256 of the canonical JSONL serialization.
    pub fn fingerprint(&self) -> String {
        fingerprint::sha256_hex(jsonl::to_string(&self.to_records()).as_bytes())
    }
}

/// Uniformly sample `n` distinct negatives for `code_id`.
///
/// Eligible sentences are those that are not gold positives for the code and
/// whose normalized text differs from every gold text; repeated texts are
/// counted once. The selection is returned in corpus order.
pub fn sample_negatives(
    corpus_sentences: &[Sentence],
    code_id: &str,
    gold: &[LabeledSentence],
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    let gold: Vec<_> = gold.iter().filter(|g| g.code_id == code_id).collect();
    let gold_keys: HashSet<(&str, usize)> = gold
        .iter()
        .map(|g| (g.sentence.note_id.as_str(), g.sentence.index))
        .collect();
    let mut texts: HashSet<String> = gold.iter().map(|g| normalize(g.text())).collect();

    let eligible: Vec<&Sentence> = corpus_sentences
        .iter()
        .filter(|s| !gold_keys.contains(&(s.note_id.as_str(), s.index)))
        .filter(|s| texts.insert(normalize(&s.text)))
        .collect();

    if eligible.len() < n {
        return Err(CorpusError::InsufficientNegatives {
            code_id: code_id.to_string(),
            needed: n,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, eligible.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| LabeledSentence::negative(eligible[i].clone(), code_id))
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub target_positive_fraction: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            target_positive_fraction: DEFAULT_TARGET_POSITIVE_FRACTION,
            tolerance: DEFAULT_RATIO_TOLERANCE,
            seed: 0,
        }
    }
}

/// Combine positives (gold then synthetic) with negatives at the target ratio.
///
/// All negatives are kept when that already lands within tolerance. When
/// negatives are oversupplied they are truncated, by seeded sampling, to the
/// count closest to the exact target. Texts are deduplicated under
/// [`normalize`]; a negative whose text matches a positive is discarded.
pub fn assemble_dataset(
    code_id: &str,
    gold: &[LabeledSentence],
    synthetic: &[LabeledSentence],
    negatives: &[LabeledSentence],
    opts: AssembleOptions,
) -> Result<Dataset, CorpusError> {
    for ex in gold.iter().chain(synthetic).chain(negatives) {
        if ex.code_id != code_id {
            return Err(CorpusError::CodeMismatch {
                expected: code_id.to_string(),
                found: ex.code_id.clone(),
            });
        }
    }
    for (ex, want) in gold
        .iter()
        .map(|e| (e, true))
        .chain(synthetic.iter().map(|e| (e, true)))
        .chain(negatives.iter().map(|e| (e, false)))
    {
        if ex.label() != want {
            return Err(CorpusError::LabelSourceConflict {
                code_id: code_id.to_string(),
                text: ex.text().to_string(),
                label: want,
                origin: ex.source,
            });
        }
    }

    let mut seen = HashSet::new();
    let positives: Vec<LabeledSentence> = gold
        .iter()
        .chain(synthetic)
        .filter(|e| seen.insert(normalize(e.text())))
        .cloned()
        .collect();
    let negatives: Vec<&LabeledSentence> = negatives
        .iter()
        .filter(|e| seen.insert(normalize(e.text())))
        .collect();

    let target = opts.target_positive_fraction;
    let p = positives.len();
    let fraction = |n_neg: usize| {
        if p + n_neg == 0 {
            0.0
        } else {
            p as f64 / (p + n_neg) as f64
        }
    };
    let within = |n_neg: usize| p > 0 && (fraction(n_neg) - target).abs() <= opts.tolerance + 1e-12;

    let all = negatives.len();
    let n_neg = if within(all) {
        all
    } else {
        let ideal = if target > 0.0 {
            (p as f64 * (1.0 - target) / target).round() as usize
        } else {
            usize::MAX
        };
        if ideal <= all && within(ideal) {
            ideal
        } else {
            return Err(CorpusError::RatioUnreachable {
                code_id: code_id.to_string(),
                achieved: fraction(all),
                target,
                tolerance: opts.tolerance,
            });
        }
    };

    let kept: Vec<LabeledSentence> = if n_neg == all {
        negatives.into_iter().cloned().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = index::sample(&mut rng, all, n_neg).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| negatives[i].clone()).collect()
    };

    let mut examples = positives;
    examples.extend(kept);
    Dataset::new(code_id, examples, Some(opts.seed))
}
