//! Documents, event triggers, argument spans and gold links.
//!
//! Spans are inclusive token ranges `[start, end]` throughout. The canonical
//! on-disk form is JSON Lines with one document per line.

mod rams;
mod synth;

pub use rams::{import_rams, parse_rams_line, RamsError};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpus, SynthError};

use crate::ontology::{EventKey, Ontology};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Number of sentences on each side of the trigger sentence that belong to
/// its context window.
pub const WINDOW_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub event_id: String,
    pub trigger: Span,
    #[serde(rename = "type")]
    pub gold_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLink {
    pub event_id: String,
    pub role: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentence_starts: Vec<usize>,
    pub events: Vec<EventMention>,
    pub given_arguments: Option<Vec<Span>>,
    pub gold_links: Vec<GoldLink>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("span {span} lies outside the context window of its trigger")]
    OutsideWindow { span: Span },
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_starts.len()
    }

    /// Token range `[start, end)` of sentence `s`.
    pub fn sentence_bounds(&self, s: usize) -> (usize, usize) {
        let start = self.sentence_starts[s];
        let end = self
            .sentence_starts
            .get(s + 1)
            .copied()
            .unwrap_or(self.tokens.len());
        (start, end)
    }

    /// Sentence index containing token `t`.
    pub fn sentence_of(&self, t: usize) -> usize {
        self.sentence_starts.partition_point(|&s| s <= t) - 1
    }

    pub fn event(&self, event_id: &str) -> Option<&EventMention> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }

    pub fn links_for<'a>(&'a self, event_id: &'a str) -> impl Iterator<Item = &'a GoldLink> + 'a {
        self.gold_links.iter().filter(move |l| l.event_id == event_id)
    }

    /// Checks every structural invariant. `ontology`, when given, must know
    /// every gold role.
    pub fn validate(&self, ontology: Option<&Ontology>) -> Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("document has no tokens".into());
        }
        if self.sentence_starts.first() != Some(&0) {
            return Err("sentence_starts must begin at 0".into());
        }
        for w in self.sentence_starts.windows(2) {
            if w[0] >= w[1] {
                return Err("sentence_starts must be strictly increasing".into());
            }
        }
        if *self.sentence_starts.last().unwrap() >= n {
            return Err("sentence start beyond the last token".into());
        }
        let check = |what: &str, s: Span| -> Result<(), String> {
            if s.start > s.end {
                return Err(format!("{what} {s} has end before start"));
            }
            if s.end >= n {
                return Err(format!("{what} {s} out of bounds for {n} tokens"));
            }
            if self.sentence_of(s.start) != self.sentence_of(s.end) {
                return Err(format!("{what} {s} crosses a sentence boundary"));
            }
            Ok(())
        };
        let mut ids = BTreeSet::new();
        for e in &self.events {
            if !ids.insert(e.event_id.as_str()) {
                return Err(format!("duplicate event_id `{}`", e.event_id));
            }
            check("trigger", e.trigger)?;
            if let (Some(o), Some(t)) = (ontology, &e.gold_type) {
                if o.event_type(t).is_none() {
                    return Err(format!("unknown event type `{t}`"));
                }
            }
        }
        for s in self.given_arguments.iter().flatten() {
            check("given argument", *s)?;
        }
        for l in &self.gold_links {
            if !ids.contains(l.event_id.as_str()) {
                return Err(format!("gold link refers to unknown event `{}`", l.event_id));
            }
            check("argument", l.span)?;
            if let Some(o) = ontology {
                if o.role_index(&l.role).is_none() {
                    return Err(format!("unknown role `{}`", l.role));
                }
            }
        }
        Ok(())
    }

    pub fn event_types(&self) -> impl Iterator<Item = (EventKey, &str)> {
        self.events.iter().filter_map(|e| {
            e.gold_type
                .as_deref()
                .map(|t| (EventKey::new(&self.doc_id, &e.event_id), t))
        })
    }
}

/// Gold event types keyed by (document, event), for type-constrained decoding.
pub fn gold_types(docs: &[Document]) -> BTreeMap<EventKey, String> {
    docs.iter()
        .flat_map(|d| d.event_types().map(|(k, t)| (k, t.to_string())))
        .collect()
}

pub fn read_jsonl<R: BufRead>(
    reader: R,
    ontology: Option<&Ontology>,
) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_no,
                source,
            })?;
        doc.validate(ontology).map_err(|message| CorpusError::Invalid {
            line: line_no,
            message,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_jsonl(
    path: impl AsRef<Path>,
    ontology: Option<&Ontology>,
) -> Result<Vec<Document>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(BufReader::new(file), ontology)
}

pub fn write_jsonl<W: Write>(docs: &[Document], mut out: W) -> std::io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(docs: &[Document], path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(docs, &mut w)?;
    w.flush()
}

/// First and last sentence index (inclusive) of the window around `trigger`.
pub fn context_window(doc: &Document, trigger: Span) -> (usize, usize) {
    let s = doc.sentence_of(trigger.start);
    let first = s.saturating_sub(WINDOW_RADIUS);
    let last = (s + WINDOW_RADIUS).min(doc.num_sentences() - 1);
    (first, last)
}

/// Token distance between trigger and argument; zero when they overlap.
pub fn trigger_arg_distance(trigger: Span, arg: Span) -> usize {
    let before = trigger.start as i64 - arg.end as i64;
    let after = arg.start as i64 - trigger.end as i64;
    before.max(after).max(0) as usize
}

/// Signed sentence offset of `arg` relative to `trigger`; negative when the
/// argument precedes the trigger.
pub fn sentence_distance(doc: &Document, trigger: Span, arg: Span) -> Result<i32, CorpusError> {
    let d = doc.sentence_of(arg.start) as i32 - doc.sentence_of(trigger.start) as i32;
    if d.unsigned_abs() as usize > WINDOW_RADIUS {
        return Err(CorpusError::OutsideWindow { span: arg });
    }
    Ok(d)
}

/// Keeps whole sentences from the start of the document while the token
/// count stays within `max_tokens` (the first sentence is always kept).
/// Events, links and given arguments past the cut are dropped.
pub fn truncate_document(doc: &Document, max_tokens: usize) -> Document {
    if doc.tokens.len() <= max_tokens {
        return doc.clone();
    }
    let mut keep_sentences = 1;
    while keep_sentences < doc.num_sentences() && doc.sentence_bounds(keep_sentences).1 <= max_tokens
    {
        keep_sentences += 1;
    }
    let cut = doc.sentence_bounds(keep_sentences - 1).1;
    let inside = |s: &Span| s.end < cut;
    let events: Vec<EventMention> = doc
        .events
        .iter()
        .filter(|e| inside(&e.trigger))
        .cloned()
        .collect();
    let kept: BTreeSet<&str> = events.iter().map(|e| e.event_id.as_str()).collect();
    Document {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens[..cut].to_vec(),
        sentence_starts: doc.sentence_starts[..keep_sentences].to_vec(),
        given_arguments: doc
            .given_arguments
            .as_ref()
            .map(|g| g.iter().copied().filter(inside).collect()),
        gold_links: doc
            .gold_links
            .iter()
            .filter(|l| inside(&l.span) && kept.contains(l.event_id.as_str()))
            .cloned()
            .collect(),
        events,
    }
}

/// Restricts a single-event document to the context window around its
/// trigger, re-indexing every span. Multi-event documents are returned as is.
pub fn crop_to_window(doc: &Document) -> Document {
    if doc.events.len() != 1 {
        return doc.clone();
    }
    let (first, last) = context_window(doc, doc.events[0].trigger);
    if first == 0 && last + 1 == doc.num_sentences() {
        return doc.clone();
    }
    let lo = doc.sentence_bounds(first).0;
    let hi = doc.sentence_bounds(last).1;
    let shift = |s: &Span| Span::new(s.start - lo, s.end - lo);
    let inside = |s: &Span| s.start >= lo && s.end < hi;
    Document {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens[lo..hi].to_vec(),
        sentence_starts: doc.sentence_starts[first..=last]
            .iter()
            .map(|s| s - lo)
            .collect(),
        events: doc
            .events
            .iter()
            .map(|e| EventMention {
                trigger: shift(&e.trigger),
                ..e.clone()
            })
            .collect(),
        given_arguments: doc
            .given_arguments
            .as_ref()
            .map(|g| g.iter().filter(|s| inside(s)).map(shift).collect()),
        gold_links: doc
            .gold_links
            .iter()
            .filter(|l| inside(&l.span))
            .map(|l| GoldLink {
                span: shift(&l.span),
                ..l.clone()
            })
            .collect(),
    }
}
