//! Candidate argument spans and the two pruning stages.

use crate::config::ModelConfig;
use crate::corpus::{Document, Span};
use crate::nn::layers::{Ffnn, Linear, Mode};
use crate::nn::params::uniform;
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// Pruning results for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub enumerated: Vec<Span>,
    /// Spans surviving unary pruning, in position order.
    pub spans: Vec<Span>,
    /// Unary scores of `spans` (absent when the spans were given).
    pub unary: Option<Vec<f64>>,
    /// Per-event shortlist, sorted by coarse score descending.
    pub shortlists: BTreeMap<String, Vec<(Span, f64)>>,
}

/// Every within-sentence span of at most `max_width` tokens that is not an
/// event trigger, ordered by (start, end).
pub fn enumerate_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    let triggers: BTreeSet<Span> = doc.events.iter().map(|e| e.trigger).collect();
    let mut out = Vec::new();
    for s in 0..doc.num_sentences() {
        let (lo, hi) = doc.sentence_bounds(s);
        for start in lo..hi {
            for end in start..hi.min(start + max_width) {
                let span = Span::new(start, end);
                if !triggers.contains(&span) {
                    out.push(span);
                }
            }
        }
    }
    out
}

/// The given argument spans (sorted, deduplicated) when the document has
/// them, otherwise the enumeration.
pub fn candidate_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    match &doc.given_arguments {
        Some(given) => {
            let mut spans = given.clone();
            spans.sort();
            spans.dedup();
            spans
        }
        None => enumerate_spans(doc, max_width),
    }
}

/// `⌈λ·n⌉`, computed so that products that are integral in exact arithmetic
/// (0.4 · 10) are not pushed up by rounding noise.
pub fn unary_budget(lambda: f64, n_tokens: usize) -> usize {
    let x = lambda * n_tokens as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Descending score, then span position.
fn ranked(spans: &[Span], scores: &[f64]) -> Vec<usize> {
    assert_eq!(spans.len(), scores.len());
    let mut idx: Vec<usize> = (0..spans.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| spans[a].cmp(&spans[b]))
    });
    idx
}

/// Indices of the spans kept by unary pruning, in position order. With
/// `given` set the stage is skipped and every span is kept.
pub fn prune_unary_indices(
    spans: &[Span],
    scores: &[f64],
    lambda: f64,
    n_tokens: usize,
    given: bool,
) -> Vec<usize> {
    if given {
        return (0..spans.len()).collect();
    }
    let mut keep = ranked(spans, scores);
    keep.truncate(unary_budget(lambda, n_tokens));
    keep.sort_by_key(|&i| spans[i]);
    keep
}

pub fn prune_unary(spans: &[Span], scores: &[f64], lambda: f64, n_tokens: usize, given: bool) -> Vec<Span> {
    prune_unary_indices(spans, scores, lambda, n_tokens, given)
        .into_iter()
        .map(|i| spans[i])
        .collect()
}

/// Indices of the top-`k` candidates by coarse score, best first.
pub fn shortlist_indices(spans: &[Span], scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx = ranked(spans, scores);
    idx.truncate(k);
    idx
}

pub fn shortlist(spans: &[Span], scores: &[f64], k: usize) -> Vec<(Span, f64)> {
    shortlist_indices(spans, scores, k)
        .into_iter()
        .map(|i| (spans[i], scores[i]))
        .collect()
}

/// `eᵀ W a + s_A + s_E + φ`, on plain values. Unary terms are optional
/// because they are left out when arguments are given.
pub fn coarse_score(
    event: &[f64],
    arg: &[f64],
    bilinear: &Tensor,
    unary_arg: Option<f64>,
    unary_event: Option<f64>,
    feature: f64,
) -> f64 {
    assert_eq!(bilinear.shape(), (event.len(), arg.len()));
    let mut s = 0.0;
    for (i, &e) in event.iter().enumerate() {
        for (j, &a) in arg.iter().enumerate() {
            s += e * bilinear.get(i, j) * a;
        }
    }
    s + unary_arg.unwrap_or(0.0) + unary_event.unwrap_or(0.0) + feature
}

/// Parameters of the unary (`s_A`, `s_E`) and coarse (`s_c`) scorers.
#[derive(Debug, Clone)]
pub struct CandidateScorer {
    pub arg_ffnn: Ffnn,
    pub arg_head: Linear,
    pub event_ffnn: Ffnn,
    pub event_head: Linear,
    pub bilinear: ParamId,
    pub distance_ffnn: Ffnn,
    pub distance_head: Linear,
}

impl CandidateScorer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        span_dim: usize,
    ) -> Self {
        let ffnn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize| {
            Ffnn::new(store, rng, name, &[d], cfg.ffnn_size, cfg.ffnn_layers, cfg.ffnn_dropout)
        };
        let arg_ffnn = ffnn(store, rng, "unary_arg", span_dim);
        let arg_head = Linear::new(store, rng, "unary_arg.head", cfg.ffnn_size, 1, true);
        let event_ffnn = ffnn(store, rng, "unary_event", span_dim);
        let event_head = Linear::new(store, rng, "unary_event.head", cfg.ffnn_size, 1, true);
        let limit = 1.0 / (span_dim as f64);
        let bilinear = store.add("coarse.bilinear", uniform(rng, span_dim, span_dim, limit));
        let distance_ffnn = ffnn(store, rng, "coarse.distance", cfg.feature_size);
        let distance_head = Linear::new(store, rng, "coarse.distance.head", cfg.ffnn_size, 1, true);
        CandidateScorer {
            arg_ffnn,
            arg_head,
            event_ffnn,
            event_head,
            bilinear,
            distance_ffnn,
            distance_head,
        }
    }

    /// `s_A` for each row of `spans` (`m × 1`).
    pub fn unary_arg(&self, g: &mut Graph, spans: Var, mode: &mut Mode) -> Var {
        let h = self.arg_ffnn.forward(g, &[spans], mode);
        self.arg_head.forward(g, h)
    }

    /// `s_E` for each row of `events`.
    pub fn unary_event(&self, g: &mut Graph, events: Var, mode: &mut Mode) -> Var {
        let h = self.event_ffnn.forward(g, &[events], mode);
        self.event_head.forward(g, h)
    }

    /// `φ_c` from distance-bucket embedding rows (`m × feature_size`).
    pub fn distance_feature(&self, g: &mut Graph, features: Var, mode: &mut Mode) -> Var {
        let h = self.distance_ffnn.forward(g, &[features], mode);
        self.distance_head.forward(g, h)
    }

    /// Coarse scores (`m × 1`) of every row of `args` against one event
    /// (`1 × D`). Optional terms are added when present.
    pub fn coarse(
        &self,
        g: &mut Graph,
        event: Var,
        args: Var,
        unary_arg: Option<Var>,
        unary_event: Option<Var>,
        feature: Option<Var>,
    ) -> Var {
        let w = g.param(self.bilinear);
        let ew = g.matmul(event, w);
        let prod = g.pair_mul(args, ew);
        let d = g.shape(args).1;
        let ones = g.constant(Tensor::filled(d, 1, 1.0));
        let mut s = g.matmul(prod, ones);
        if let Some(u) = unary_arg {
            s = g.add(s, u);
        }
        if let Some(u) = unary_event {
            s = g.add_broadcast(s, u);
        }
        if let Some(f) = feature {
            s = g.add(s, f);
        }
        s
    }
}
