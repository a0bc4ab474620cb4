//! Scorers: exact-match triple P/R/F1, sentence-distance breakdown, aligned
//! role confusion, role-embedding similarity and slot-string matching.

use crate::corpus::{sentence_distance, Document, Span};
use crate::decoder::LinkPrediction;
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const MISSED: &str = "<missed>";
pub const SPURIOUS: &str = "<none>";

/// A (document, event, role, span) triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub doc_id: String,
    pub event_id: String,
    pub role: String,
    pub span: Span,
}

impl From<&LinkPrediction> for Triple {
    fn from(p: &LinkPrediction) -> Self {
        Triple {
            doc_id: p.doc_id.clone(),
            event_id: p.event_id.clone(),
            role: p.role.clone(),
            span: p.span,
        }
    }
}

pub fn prediction_triples(preds: &[LinkPrediction]) -> Vec<Triple> {
    preds.iter().map(Triple::from).collect()
}

pub fn gold_triples(docs: &[Document]) -> Vec<Triple> {
    docs.iter()
        .flat_map(|d| {
            d.gold_links.iter().map(move |l| Triple {
                doc_id: d.doc_id.clone(),
                event_id: l.event_id.clone(),
                role: l.role.clone(),
                span: l.span,
            })
        })
        .collect()
}

/// Precision, recall and F1 in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// Zero predictions (or zero gold) give 0 rather than an undefined ratio.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleScore {
    #[serde(flatten)]
    pub prf: Prf,
    /// Repeated predicted triples that were counted once.
    pub duplicate_predictions: usize,
}

/// Exact-match triple scoring. Duplicates on either side count once.
pub fn score_triples(predicted: &[Triple], gold: &[Triple]) -> TripleScore {
    let pred: BTreeSet<&Triple> = predicted.iter().collect();
    let gold: BTreeSet<&Triple> = gold.iter().collect();
    let correct = pred.intersection(&gold).count();
    TripleScore {
        prf: Prf::from_counts(correct, pred.len(), gold.len()),
        duplicate_predictions: predicted.len() - pred.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    /// Sentence offset of the argument relative to the trigger; `None` for
    /// triples outside the context window.
    pub distance: Option<i32>,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("triple refers to unknown event `{event_id}` in document `{doc_id}`")]
    UnknownEvent { doc_id: String, event_id: String },
}

fn triple_distance(
    t: &Triple,
    docs: &BTreeMap<&str, &Document>,
) -> Result<Option<i32>, EvalError> {
    let unknown = || EvalError::UnknownEvent {
        doc_id: t.doc_id.clone(),
        event_id: t.event_id.clone(),
    };
    let doc = docs.get(t.doc_id.as_str()).ok_or_else(unknown)?;
    let ev = doc.event(&t.event_id).ok_or_else(unknown)?;
    if t.span.end >= doc.len() {
        return Ok(None);
    }
    Ok(sentence_distance(doc, ev.trigger, t.span).ok())
}

/// One row per sentence offset −2..=+2, plus an outside-window row when any
/// triple falls there. A prediction is placed by its own span; correct
/// predictions share the distance of the gold triple they match.
pub fn distance_breakdown(
    predicted: &[Triple],
    gold: &[Triple],
    docs: &[Document],
) -> Result<Vec<DistanceRow>, EvalError> {
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let pred: BTreeSet<&Triple> = predicted.iter().collect();
    let gold: BTreeSet<&Triple> = gold.iter().collect();
    // (correct, predicted, gold) per distance
    let mut counts: BTreeMap<Option<i32>, (usize, usize, usize)> = BTreeMap::new();
    for d in -2..=2 {
        counts.insert(Some(d), (0, 0, 0));
    }
    for t in &pred {
        let c = counts.entry(triple_distance(t, &by_id)?).or_default();
        c.1 += 1;
        if gold.contains(t) {
            c.0 += 1;
        }
    }
    for t in &gold {
        counts.entry(triple_distance(t, &by_id)?).or_default().2 += 1;
    }
    let mut rows: Vec<DistanceRow> = counts
        .iter()
        .filter(|(d, _)| d.is_some())
        .map(|(&distance, &(c, p, g))| DistanceRow {
            distance,
            prf: Prf::from_counts(c, p, g),
        })
        .collect();
    if let Some(&(c, p, g)) = counts.get(&None) {
        rows.push(DistanceRow {
            distance: None,
            prf: Prf::from_counts(c, p, g),
        });
    }
    Ok(rows)
}

/// Sums rows back into an overall score.
pub fn breakdown_total(rows: &[DistanceRow]) -> Prf {
    let (c, p, g) = rows.iter().fold((0, 0, 0), |acc, r| {
        (acc.0 + r.prf.correct, acc.1 + r.prf.predicted, acc.2 + r.prf.gold)
    });
    Prf::from_counts(c, p, g)
}

/// Role confusion after aligning exact matches first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// (gold role, predicted role) → count, including matches on the diagonal.
    pub cells: BTreeMap<String, BTreeMap<String, usize>>,
    /// Gold roles left without any prediction on the same span.
    pub missed: BTreeMap<String, usize>,
    /// Predicted roles on spans with no remaining gold role.
    pub spurious: BTreeMap<String, usize>,
}

impl Confusion {
    pub fn matched(&self) -> usize {
        self.cells
            .iter()
            .map(|(g, row)| row.get(g).copied().unwrap_or(0))
            .sum()
    }

    pub fn errors(&self) -> usize {
        self.cells
            .iter()
            .map(|(g, row)| row.iter().filter(|(p, _)| *p != g).map(|(_, &n)| n).sum::<usize>())
            .sum()
    }

    pub fn missed_total(&self) -> usize {
        self.missed.values().sum()
    }

    pub fn spurious_total(&self) -> usize {
        self.spurious.values().sum()
    }

    /// Roles that appear as a prediction anywhere.
    pub fn predicted_roles(&self) -> BTreeSet<&str> {
        self.cells
            .values()
            .flat_map(|row| row.keys().map(String::as_str))
            .chain(self.spurious.keys().map(String::as_str))
            .collect()
    }

    /// Row-normalized matrix. Rows are gold roles that were ever predicted
    /// (plus a spurious row), columns are predicted roles plus a missed
    /// column.
    pub fn normalized(&self) -> (Vec<String>, Vec<String>, Vec<Vec<f64>>) {
        let predicted = self.predicted_roles();
        let mut cols: Vec<String> = predicted.iter().map(|s| s.to_string()).collect();
        cols.push(MISSED.to_string());
        let gold_roles: BTreeSet<&str> = self
            .cells
            .keys()
            .map(String::as_str)
            .chain(self.missed.keys().map(String::as_str))
            .filter(|r| predicted.contains(r))
            .collect();
        let mut rows: Vec<String> = gold_roles.iter().map(|s| s.to_string()).collect();
        let mut values = Vec::new();
        for g in &rows {
            let row = self.cells.get(g);
            let mut v: Vec<f64> = predicted
                .iter()
                .map(|p| row.and_then(|r| r.get(*p)).copied().unwrap_or(0) as f64)
                .collect();
            v.push(self.missed.get(g).copied().unwrap_or(0) as f64);
            values.push(v);
        }
        if !self.spurious.is_empty() {
            rows.push(SPURIOUS.to_string());
            let mut v: Vec<f64> = predicted
                .iter()
                .map(|p| self.spurious.get(*p).copied().unwrap_or(0) as f64)
                .collect();
            v.push(0.0);
            values.push(v);
        }
        for v in &mut values {
            let s: f64 = v.iter().sum();
            if s > 0.0 {
                v.iter_mut().for_each(|x| *x /= s);
            }
        }
        (rows, cols, values)
    }

    pub fn to_csv(&self) -> String {
        let (rows, cols, values) = self.normalized();
        let mut out = String::from("gold");
        for c in &cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (r, v) in rows.iter().zip(values) {
            out.push_str(&csv_field(r));
            for x in v {
                let _ = write!(out, ",{x:.6}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// For every (event, span): exact role matches are taken first, the
/// remaining gold and predicted roles are paired off in sorted order as
/// errors, and whatever is left goes to the missed or spurious tallies.
pub fn confusion_matrix(predicted: &[Triple], gold: &[Triple]) -> Confusion {
    type Key<'a> = (&'a str, &'a str, Span);
    let mut groups: BTreeMap<Key, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for t in gold {
        groups
            .entry((&t.doc_id, &t.event_id, t.span))
            .or_default()
            .0
            .push(&t.role);
    }
    for t in predicted {
        groups
            .entry((&t.doc_id, &t.event_id, t.span))
            .or_default()
            .1
            .push(&t.role);
    }
    let mut out = Confusion::default();
    let mut bump = |g: &str, p: &str| {
        *out.cells
            .entry(g.to_string())
            .or_default()
            .entry(p.to_string())
            .or_default() += 1;
    };
    let mut missed: BTreeMap<String, usize> = BTreeMap::new();
    let mut spurious: BTreeMap<String, usize> = BTreeMap::new();
    for (_, (mut g, mut p)) in groups {
        g.sort_unstable();
        p.sort_unstable();
        let mut rest_g = Vec::new();
        for role in g {
            if let Some(i) = p.iter().position(|&x| x == role) {
                p.remove(i);
                bump(role, role);
            } else {
                rest_g.push(role);
            }
        }
        let paired = rest_g.len().min(p.len());
        for (gr, pr) in rest_g.iter().zip(&p) {
            bump(gr, pr);
        }
        for gr in &rest_g[paired..] {
            *missed.entry(gr.to_string()).or_default() += 1;
        }
        for pr in &p[paired..] {
            *spurious.entry(pr.to_string()).or_default() += 1;
        }
    }
    out.missed = missed;
    out.spurious = spurious;
    out
}

/// Cosine similarity between rows. Rows with zero norm give `None` entries.
pub fn role_similarity(table: &Tensor) -> Vec<Vec<Option<f64>>> {
    let norms: Vec<f64> = (0..table.rows)
        .map(|i| table.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    (0..table.rows)
        .map(|i| {
            (0..table.rows)
                .map(|j| {
                    if norms[i] == 0.0 || norms[j] == 0.0 {
                        return None;
                    }
                    let dot: f64 = table.row(i).iter().zip(table.row(j)).map(|(a, b)| a * b).sum();
                    Some(if i == j { 1.0 } else { dot / (norms[i] * norms[j]) })
                })
                .collect()
        })
        .collect()
}

pub fn similarity_csv(roles: &[String], matrix: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("role");
    for r in roles {
        out.push(',');
        out.push_str(&csv_field(r));
    }
    out.push('\n');
    for (r, row) in roles.iter().zip(matrix) {
        out.push_str(&csv_field(r));
        for v in row {
            match v {
                Some(x) => {
                    let _ = write!(out, ",{x:.6}");
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Strict,
    Approximate,
}

pub fn strings_match(pred: &str, gold: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Strict => pred == gold,
        MatchMode::Approximate => pred.contains(gold) || gold.contains(pred),
    }
}

/// Per-slot scores; each gold string can be credited to one prediction.
pub fn string_match_score(
    predicted: &BTreeMap<String, Vec<String>>,
    gold: &BTreeMap<String, Vec<String>>,
    mode: MatchMode,
) -> BTreeMap<String, Prf> {
    let slots: BTreeSet<&String> = predicted.keys().chain(gold.keys()).collect();
    let empty = Vec::new();
    slots
        .into_iter()
        .map(|slot| {
            let p = predicted.get(slot).unwrap_or(&empty);
            let g = gold.get(slot).unwrap_or(&empty);
            let mut used = vec![false; g.len()];
            let mut correct = 0;
            for ps in p {
                if let Some(i) = (0..g.len()).find(|&i| !used[i] && strings_match(ps, &g[i], mode)) {
                    used[i] = true;
                    correct += 1;
                }
            }
            (slot.clone(), Prf::from_counts(correct, p.len(), g.len()))
        })
        .collect()
}

/// Predicted and gold argument strings per role (the slot), across a corpus.
pub fn slot_strings(
    predicted: &[Triple],
    docs: &[Document],
) -> (BTreeMap<String, Vec<String>>, BTreeMap<String, Vec<String>>) {
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut pred: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in predicted {
        if let Some(d) = by_id.get(t.doc_id.as_str()) {
            if t.span.end < d.len() {
                pred.entry(t.role.clone()).or_default().push(d.span_text(t.span));
            }
        }
    }
    let mut gold: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in docs {
        for l in &d.gold_links {
            gold.entry(l.role.clone()).or_default().push(d.span_text(l.span));
        }
    }
    (pred, gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matched: usize,
    pub errors: usize,
    pub missed: usize,
    pub spurious: usize,
    pub matrix: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: TripleScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<Vec<DistanceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub string_match: Option<BTreeMap<String, BTreeMap<String, Prf>>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    pub distance: bool,
    pub confusion: bool,
    pub string_match: bool,
}

pub fn evaluate(
    predictions: &[LinkPrediction],
    docs: &[Document],
    options: ReportOptions,
) -> Result<EvalReport, EvalError> {
    let pred = prediction_triples(predictions);
    let gold = gold_triples(docs);
    let distance = if options.distance {
        Some(distance_breakdown(&pred, &gold, docs)?)
    } else {
        None
    };
    let confusion = options.confusion.then(|| {
        let m = confusion_matrix(&pred, &gold);
        ConfusionSummary {
            matched: m.matched(),
            errors: m.errors(),
            missed: m.missed_total(),
            spurious: m.spurious_total(),
            matrix: m,
        }
    });
    let string_match = options.string_match.then(|| {
        let (p, g) = slot_strings(&pred, docs);
        [("strict", MatchMode::Strict), ("approximate", MatchMode::Approximate)]
            .into_iter()
            .map(|(name, mode)| (name.to_string(), string_match_score(&p, &g, mode)))
            .collect()
    });
    Ok(EvalReport {
        overall: score_triples(&pred, &gold),
        distance,
        confusion,
        string_match,
    })
}
