//! The full linking model: encoder, pruning and link scoring for a document.

use crate::candidates::{candidate_spans, prune_unary_indices, shortlist_indices, CandidateScorer, CandidateSet};
use crate::config::ModelConfig;
use crate::corpus::{trigger_arg_distance, Document, Span};
use crate::decoder::RoleScores;
use crate::encoder::{ContextualLayers, Encoder, EncoderError, TokenSources, WordVectors};
use crate::linker::LinkScorer;
use crate::nn::layers::Mode;
use crate::nn::{Gradients, Graph, ParamStore, Var};
use crate::ontology::Ontology;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("document `{doc_id}`: {message}")]
    Data { doc_id: String, message: String },
    #[error("{0}")]
    Config(String),
}

/// Result of one document forward pass.
pub struct Forward {
    pub table: Vec<RoleScores>,
    pub candidates: CandidateSet,
    /// Summed NLL over `terms` supervision terms (absent when not supervised
    /// or when there is nothing to supervise).
    pub loss: Option<Var>,
    pub terms: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    ontology: Ontology,
    params: ParamStore,
    encoder: Encoder,
    scorer: CandidateScorer,
    linker: LinkScorer,
    words: Option<Arc<WordVectors>>,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(
        config: ModelConfig,
        ontology: Ontology,
        words: Option<Arc<WordVectors>>,
    ) -> Result<Self, ModelError> {
        config.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        if ontology.num_roles() == 0 {
            return Err(ModelError::Config("ontology defines no roles".into()));
        }
        if config.word_vectors.is_some() != words.is_some() {
            return Err(ModelError::Config(
                "word vectors must be supplied exactly when the config names a file".into(),
            ));
        }
        let word_dim = words.as_ref().map_or(0, |w| w.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, &config, word_dim);
        let span_dim = encoder.span_dim();
        let scorer = CandidateScorer::new(&mut params, &mut rng, &config, span_dim);
        let linker = LinkScorer::new(&mut params, &mut rng, &config, span_dim, ontology.num_roles());
        Ok(Model {
            config,
            ontology,
            params,
            encoder,
            scorer,
            linker,
            words,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn candidate_scorer(&self) -> &CandidateScorer {
        &self.scorer
    }

    pub fn linker(&self) -> &LinkScorer {
        &self.linker
    }

    pub fn word_vectors(&self) -> Option<&Arc<WordVectors>> {
        self.words.as_ref()
    }

    pub fn word_dim(&self) -> usize {
        self.encoder.word_dim
    }

    /// Replaces options that do not change the parameter layout.
    pub fn set_training_options(&mut self, other: &ModelConfig) -> Result<(), ModelError> {
        let c = &mut self.config;
        c.lstm_dropout = other.lstm_dropout;
        c.lexical_dropout = other.lexical_dropout;
        c.ffnn_dropout = other.ffnn_dropout;
        c.k = other.k;
        c.lambda_a = other.lambda_a;
        c.max_span_width = other.max_span_width;
        c.max_train_doc_tokens = other.max_train_doc_tokens;
        c.batch_size = other.batch_size;
        c.learning_rate = other.learning_rate;
        c.decay_rate = other.decay_rate;
        c.decay_steps = other.decay_steps;
        c.patience = other.patience;
        c.max_epochs = other.max_epochs;
        c.clip_gradients = other.clip_gradients;
        c.use_s_er = other.use_s_er;
        c.use_s_ar = other.use_s_ar;
        c.use_s_l = other.use_s_l;
        c.use_s_c = other.use_s_c;
        c.use_distance = other.use_distance;
        c.restrict_roles_to_type = other.restrict_roles_to_type;
        c.eps_for_unfilled_roles = other.eps_for_unfilled_roles;
        c.dev_decoding = other.dev_decoding;
        c.seed = other.seed;
        c.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        self.apply_dropout_and_toggles();
        Ok(())
    }

    fn apply_dropout_and_toggles(&mut self) {
        let c = &self.config;
        self.encoder.lstm.dropout = c.lstm_dropout;
        self.encoder.lexical_dropout = c.lexical_dropout;
        for f in [
            &mut self.scorer.arg_ffnn,
            &mut self.scorer.event_ffnn,
            &mut self.scorer.distance_ffnn,
            &mut self.linker.event_role_ffnn,
            &mut self.linker.er_ffnn,
            &mut self.linker.ar_ffnn,
            &mut self.linker.link_ffnn,
        ] {
            f.dropout = c.ffnn_dropout;
        }
        self.linker.toggles = crate::linker::Toggles::from_config(c);
    }

    /// Role indices scored for an event: its type's roles when restricted
    /// and the type is known, otherwise every role.
    pub fn role_set(&self, gold_type: Option<&str>) -> Vec<usize> {
        if self.config.restrict_roles_to_type {
            if let Some(t) = gold_type.and_then(|t| self.ontology.event_type(t)) {
                let mut idx: Vec<usize> = t
                    .roles
                    .iter()
                    .filter_map(|r| self.ontology.role_index(&r.name))
                    .collect();
                idx.sort_unstable();
                return idx;
            }
        }
        (0..self.ontology.num_roles()).collect()
    }

    fn sources<'a>(&'a self, contextual: Option<&'a ContextualLayers>) -> TokenSources<'a> {
        TokenSources {
            words: self.words.as_deref(),
            contextual,
        }
    }

    /// Scores every (event, role, shortlisted span) of `doc`. With
    /// `supervise`, gold spans are forced through both pruning stages and the
    /// NLL is added to the graph.
    pub fn forward(
        &self,
        g: &mut Graph,
        doc: &Document,
        contextual: Option<&ContextualLayers>,
        mode: &mut Mode,
        supervise: bool,
    ) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        let data_err = |message: String| ModelError::Data {
            doc_id: doc.doc_id.clone(),
            message,
        };
        let given = doc.given_arguments.is_some();
        let enumerated = candidate_spans(doc, cfg.max_span_width);
        let position: BTreeMap<Span, usize> =
            enumerated.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut gold_idx = Vec::new();
        if supervise {
            for l in &doc.gold_links {
                match position.get(&l.span) {
                    Some(&i) => gold_idx.push(i),
                    None => {
                        return Err(data_err(format!(
                            "gold argument {} of `{}` is not a candidate span",
                            l.span, l.event_id
                        )))
                    }
                }
            }
        }

        let enc = self.encoder.encode(g, doc, self.sources(contextual), mode)?;
        let all_reprs = self.encoder.span_representations(g, &enc, &enumerated);

        let (kept, unary) = if given || enumerated.is_empty() {
            ((0..enumerated.len()).collect::<Vec<_>>(), None)
        } else {
            let s = self.scorer.unary_arg(g, all_reprs, mode);
            let scores = g.value(s).data.clone();
            let mut keep =
                prune_unary_indices(&enumerated, &scores, cfg.lambda_a, doc.len(), false);
            if supervise {
                keep.extend(gold_idx.iter().copied());
                keep.sort_by_key(|&i| enumerated[i]);
                keep.dedup();
            }
            let kept_scores = g.gather_rows(s, &keep);
            (keep, Some((kept_scores, scores)))
        };
        let spans: Vec<Span> = kept.iter().map(|&i| enumerated[i]).collect();
        let kept_pos: BTreeMap<Span, usize> = spans.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let args = g.gather_rows(all_reprs, &kept);
        let unary_arg = unary.as_ref().map(|u| u.0);

        let triggers: Vec<Span> = doc.events.iter().map(|e| e.trigger).collect();
        let event_reprs = (!triggers.is_empty()).then(|| self.encoder.span_representations(g, &enc, &triggers));
        let unary_event = match (given, event_reprs) {
            (false, Some(t)) => Some(self.scorer.unary_event(g, t, mode)),
            _ => None,
        };

        let mut table = Vec::new();
        let mut shortlists = BTreeMap::new();
        let mut losses = Vec::new();
        let mut terms_total = 0;
        for (ei, ev) in doc.events.iter().enumerate() {
            let roles = self.role_set(ev.gold_type.as_deref());
            let role_names: Vec<&str> = roles
                .iter()
                .map(|&r| self.ontology.role_name(r).expect("role index"))
                .collect();
            if spans.is_empty() {
                for name in &role_names {
                    table.push(RoleScores {
                        doc_id: doc.doc_id.clone(),
                        event_id: ev.event_id.clone(),
                        role: name.to_string(),
                        candidates: vec![],
                    });
                }
                shortlists.insert(ev.event_id.clone(), vec![]);
                continue;
            }
            let event_reprs = event_reprs.expect("events have representations");
            let e = g.gather_rows(event_reprs, &[ei]);
            let ue = unary_event.map(|u| g.gather_rows(u, &[ei]));
            let distances: Vec<usize> = spans.iter().map(|&s| trigger_arg_distance(ev.trigger, s)).collect();
            let feature = cfg.use_distance.then(|| {
                let f = self.linker.distance_features(g, &distances);
                self.scorer.distance_feature(g, f, mode)
            });
            let coarse = self.scorer.coarse(g, e, args, unary_arg, ue, feature);
            let coarse_values = g.value(coarse).data.clone();
            let mut idx = shortlist_indices(&spans, &coarse_values, cfg.k);
            let golds: Vec<(&str, usize)> = if supervise {
                doc.links_for(&ev.event_id)
                    .map(|l| (l.role.as_str(), kept_pos[&l.span]))
                    .collect()
            } else {
                vec![]
            };
            for &(_, i) in &golds {
                if !idx.contains(&i) {
                    idx.push(i);
                }
            }
            shortlists.insert(
                ev.event_id.clone(),
                idx.iter().map(|&i| (spans[i], coarse_values[i])).collect(),
            );
            let a_e = g.gather_rows(args, &idx);
            let c_e = g.gather_rows(coarse, &idx);
            let d_e: Vec<usize> = idx.iter().map(|&i| distances[i]).collect();
            let scores = self.linker.scores(g, e, a_e, &roles, &d_e, Some(c_e), mode);
            let sv = g.value(scores).clone();
            for (j, name) in role_names.iter().enumerate() {
                table.push(RoleScores {
                    doc_id: doc.doc_id.clone(),
                    event_id: ev.event_id.clone(),
                    role: name.to_string(),
                    candidates: idx
                        .iter()
                        .enumerate()
                        .map(|(row, &i)| (spans[i], sv.get(row, j)))
                        .collect(),
                });
            }
            if supervise {
                let mut terms = Vec::new();
                for (j, name) in role_names.iter().enumerate() {
                    let mut filled = false;
                    for &(role, i) in &golds {
                        if role == *name {
                            let row = idx.iter().position(|&x| x == i).expect("gold forced in");
                            terms.push((j, Some(row)));
                            filled = true;
                        }
                    }
                    if !filled && cfg.eps_for_unfilled_roles {
                        terms.push((j, None));
                    }
                }
                if !terms.is_empty() {
                    terms_total += terms.len();
                    losses.push(g.eps_nll(scores, terms));
                }
            }
        }

        let loss = match losses.len() {
            0 => None,
            1 => Some(losses[0]),
            _ => {
                let stacked = g.concat_rows(&losses);
                Some(g.sum(stacked))
            }
        };
        let candidates = CandidateSet {
            enumerated,
            spans,
            unary: unary.map(|(_, all)| kept.iter().map(|&i| all[i]).collect()),
            shortlists,
        };
        Ok(Forward {
            table,
            candidates,
            loss,
            terms: terms_total,
        })
    }

    /// Evaluation-mode score table for a document.
    pub fn score_document(
        &self,
        doc: &Document,
        contextual: Option<&ContextualLayers>,
    ) -> Result<Vec<RoleScores>, ModelError> {
        let mut g = Graph::new(&self.params);
        Ok(self.forward(&mut g, doc, contextual, &mut Mode::Eval, false)?.table)
    }

    pub fn candidate_set(
        &self,
        doc: &Document,
        contextual: Option<&ContextualLayers>,
    ) -> Result<CandidateSet, ModelError> {
        let mut g = Graph::new(&self.params);
        Ok(self.forward(&mut g, doc, contextual, &mut Mode::Eval, false)?.candidates)
    }

    /// Mean NLL per supervision term and its gradients. `rng` enables
    /// training-mode dropout. `None` when the document has no terms.
    pub fn loss_and_gradients(
        &self,
        doc: &Document,
        contextual: Option<&ContextualLayers>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Option<(f64, Gradients)>, ModelError> {
        let mut mode = match rng {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, doc, contextual, &mut mode, true)?;
        let Some(loss) = out.loss else { return Ok(None) };
        let mean = g.scale(loss, 1.0 / out.terms as f64);
        let value = g.value(mean).item();
        Ok(Some((value, g.backward(mean))))
    }

    /// Evaluation-mode mean NLL.
    pub fn loss(&self, doc: &Document, contextual: Option<&ContextualLayers>) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, doc, contextual, &mut Mode::Eval, true)?;
        Ok(out.loss.map_or(0.0, |l| g.value(l).item() / out.terms as f64))
    }
}
