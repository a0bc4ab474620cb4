//! Deterministic synthetic corpora for desk-scale training runs.
//!
//! Every document has one trigger word that names its event type. Each role
//! of that type is filled by a two-token span `marker entity`, where the
//! marker word depends on the role's slot position (shared across types), so
//! telling roles of different types apart requires looking at the trigger.
//! Fillers land in the trigger's sentence with probability
//! `same_sentence_prob`, otherwise at a uniformly chosen non-zero sentence
//! offset. Distractor spans without a marker are added to the given
//! arguments.

use super::{Document, EventMention, GoldLink, Span, WINDOW_RADIUS};
use crate::ontology::{EventType, Ontology, RoleSlot};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_event_types: usize,
    pub roles_per_type: usize,
    /// Inclusive range of signed sentence offsets for fillers.
    pub sentence_offset_range: (i32, i32),
    pub same_sentence_prob: f64,
    pub vocab_size: usize,
    pub n_entities: usize,
    pub sentences_per_doc: (usize, usize),
    pub tokens_per_sentence: (usize, usize),
    pub distractors_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 50,
            n_event_types: 5,
            roles_per_type: 2,
            sentence_offset_range: (-2, 2),
            same_sentence_prob: 0.82,
            vocab_size: 200,
            n_entities: 40,
            sentences_per_doc: (5, 5),
            tokens_per_sentence: (6, 12),
            distractors_per_doc: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("document {doc}: could not place every filler after {attempts} attempts")]
    Placement { doc: usize, attempts: usize },
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let (lo, hi) = self.sentence_offset_range;
        let radius = WINDOW_RADIUS as i32;
        if lo > hi || lo < -radius || hi > radius {
            return bad("sentence_offset_range must lie within the context window");
        }
        if !(0.0..=1.0).contains(&self.same_sentence_prob) {
            return bad("same_sentence_prob must be a probability");
        }
        if self.n_event_types == 0 || self.roles_per_type == 0 {
            return bad("need at least one event type and one role per type");
        }
        if self.vocab_size == 0 || self.n_entities == 0 {
            return bad("vocabularies must be non-empty");
        }
        let (smin, smax) = self.sentences_per_doc;
        let (tmin, tmax) = self.tokens_per_sentence;
        if smin == 0 || smin > smax || tmin == 0 || tmin > tmax {
            return bad("document shape ranges must be non-empty and positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub ontology: Ontology,
    pub documents: Vec<Document>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

struct Lexicon {
    triggers: Vec<String>,
    markers: Vec<String>,
    entities: Vec<String>,
    fillers: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if rng.random_bool(0.5) {
            w.push_str(ONSETS[rng.random_range(0..12)]);
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

impl Lexicon {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut taken = BTreeSet::new();
        let mut words = |n: usize| -> Vec<String> {
            (0..n).map(|_| pseudo_word(rng, &mut taken)).collect()
        };
        Lexicon {
            triggers: words(cfg.n_event_types),
            markers: words(cfg.roles_per_type),
            entities: words(cfg.n_entities),
            fillers: words(cfg.vocab_size),
        }
    }
}

pub fn role_name(event_type: usize, slot: usize) -> String {
    format!("type{event_type}_role{slot}")
}

pub fn type_name(event_type: usize) -> String {
    format!("synth.type{event_type}")
}

#[derive(Clone, Copy, PartialEq)]
enum ItemKind {
    Trigger,
    Filler(usize),
    Distractor,
}

enum Piece {
    Word(String),
    Item(ItemKind, Vec<String>),
}

/// Generates the corpus described by `cfg`; a pure function of the config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::new(cfg, &mut rng);

    let types = (0..cfg.n_event_types)
        .map(|t| EventType {
            name: type_name(t),
            roles: (0..cfg.roles_per_type)
                .map(|j| RoleSlot {
                    name: role_name(t, j),
                    multiplicity: 1,
                })
                .collect(),
        })
        .collect();
    let ontology = Ontology::new(types).map_err(|e| SynthError::Config(e.to_string()))?;

    let documents = (0..cfg.n_docs)
        .map(|i| generate_document(cfg, &lex, &mut rng, i))
        .collect::<Result<_, _>>()?;
    Ok(SynthCorpus {
        ontology,
        documents,
    })
}

fn sample_offset(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> i32 {
    let (lo, hi) = cfg.sentence_offset_range;
    let nonzero: Vec<i32> = (lo..=hi).filter(|&o| o != 0).collect();
    let zero_allowed = lo <= 0 && hi >= 0;
    if nonzero.is_empty() || (zero_allowed && rng.random_bool(cfg.same_sentence_prob)) {
        0
    } else {
        nonzero[rng.random_range(0..nonzero.len())]
    }
}

const MAX_ATTEMPTS: usize = 100;

fn generate_document(
    cfg: &SynthConfig,
    lex: &Lexicon,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<Document, SynthError> {
    let event_type = rng.random_range(0..cfg.n_event_types);
    let n_sent = rng.random_range(cfg.sentences_per_doc.0..=cfg.sentences_per_doc.1);
    let (lo, hi) = cfg.sentence_offset_range;

    // Prefer trigger positions where the whole offset range fits.
    let fitting: Vec<usize> = (0..n_sent)
        .filter(|&s| s as i32 + lo >= 0 && s as i32 + hi < n_sent as i32)
        .collect();
    let mut placement = None;
    for _ in 0..MAX_ATTEMPTS {
        let trig_sent = if fitting.is_empty() {
            rng.random_range(0..n_sent)
        } else {
            fitting[rng.random_range(0..fitting.len())]
        };
        let mut slots = Vec::with_capacity(cfg.roles_per_type);
        for _ in 0..cfg.roles_per_type {
            let mut placed = None;
            for _ in 0..MAX_ATTEMPTS {
                let s = trig_sent as i32 + sample_offset(cfg, rng);
                if (0..n_sent as i32).contains(&s) {
                    placed = Some(s as usize);
                    break;
                }
            }
            match placed {
                Some(s) => slots.push(s),
                None => break,
            }
        }
        if slots.len() == cfg.roles_per_type {
            placement = Some((trig_sent, slots));
            break;
        }
    }
    let (trig_sent, filler_sents) = placement.ok_or(SynthError::Placement {
        doc: index,
        attempts: MAX_ATTEMPTS,
    })?;

    let mut sentences: Vec<Vec<Piece>> = (0..n_sent)
        .map(|_| {
            let len = rng.random_range(cfg.tokens_per_sentence.0..=cfg.tokens_per_sentence.1);
            (0..len)
                .map(|_| Piece::Word(lex.fillers[rng.random_range(0..lex.fillers.len())].clone()))
                .collect()
        })
        .collect();
    let mut insert = |rng: &mut ChaCha8Rng, s: usize, kind: ItemKind, words: Vec<String>| {
        let at = rng.random_range(0..=sentences[s].len());
        sentences[s].insert(at, Piece::Item(kind, words));
    };
    insert(
        rng,
        trig_sent,
        ItemKind::Trigger,
        vec![lex.triggers[event_type].clone()],
    );
    for (slot, &s) in filler_sents.iter().enumerate() {
        let entity = lex.entities[rng.random_range(0..lex.entities.len())].clone();
        insert(
            rng,
            s,
            ItemKind::Filler(slot),
            vec![lex.markers[slot].clone(), entity],
        );
    }
    let radius = WINDOW_RADIUS as i32;
    let window: Vec<usize> = (0..n_sent)
        .filter(|&s| (s as i32 - trig_sent as i32).abs() <= radius)
        .collect();
    for _ in 0..cfg.distractors_per_doc {
        let s = *window.choose(rng).expect("window contains the trigger sentence");
        let words = vec![
            lex.fillers[rng.random_range(0..lex.fillers.len())].clone(),
            lex.entities[rng.random_range(0..lex.entities.len())].clone(),
        ];
        insert(rng, s, ItemKind::Distractor, words);
    }

    let mut tokens = Vec::new();
    let mut sentence_starts = Vec::new();
    let mut trigger = None;
    let mut given = Vec::new();
    let mut gold_links = Vec::new();
    for sentence in sentences {
        sentence_starts.push(tokens.len());
        for piece in sentence {
            match piece {
                Piece::Word(w) => tokens.push(w),
                Piece::Item(kind, words) => {
                    let span = Span::new(tokens.len(), tokens.len() + words.len() - 1);
                    tokens.extend(words);
                    match kind {
                        ItemKind::Trigger => trigger = Some(span),
                        ItemKind::Filler(slot) => {
                            given.push(span);
                            gold_links.push(GoldLink {
                                event_id: "e0".into(),
                                role: role_name(event_type, slot),
                                span,
                            });
                        }
                        ItemKind::Distractor => given.push(span),
                    }
                }
            }
        }
    }
    given.sort();
    gold_links.sort_by(|a, b| a.role.cmp(&b.role));
    Ok(Document {
        doc_id: format!("synth-{index:05}"),
        tokens,
        sentence_starts,
        events: vec![EventMention {
            event_id: "e0".into(),
            trigger: trigger.expect("trigger inserted"),
            gold_type: Some(type_name(event_type)),
        }],
        given_arguments: Some(given),
        gold_links,
    })
}
