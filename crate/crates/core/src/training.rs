//! Optimization loop with dev-based early stopping.

use crate::corpus::{truncate_document, Document};
use crate::encoder::{ContextualSource, EncoderError};
use crate::evaluation::{gold_triples, prediction_triples, score_triples};
use crate::model::{Model, ModelError};
use crate::nn::optim::Adam;
use crate::nn::Gradients;
use crate::pipeline::{predict, PredictError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub dev_f1: f64,
    pub learning_rate: f64,
    pub skipped_documents: usize,
    pub improved: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss {value} at epoch {epoch}, step {step}, document `{doc_id}`")]
    NonFiniteLoss {
        epoch: usize,
        step: u64,
        doc_id: String,
        value: f64,
    },
    #[error("no usable training documents")]
    NoTrainingData,
    #[error("the dev corpus is empty")]
    NoDevData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("dev evaluation failed: {0}")]
    Predict(#[from] PredictError),
}

pub struct TrainOutcome {
    /// Best model by dev F1, with parameters rounded to `f32` exactly as a
    /// checkpoint stores them.
    pub model: Model,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Messages for documents skipped because of data errors.
    pub skipped: Vec<String>,
}

/// Dev F1 of a model under its configured decoding.
pub fn dev_f1(
    model: &Model,
    dev: &[Document],
    contextual: &dyn ContextualSource,
    jobs: usize,
) -> Result<f64, PredictError> {
    let preds = predict(model, dev, contextual, model.config().dev_decoding, jobs)?;
    Ok(score_triples(&prediction_triples(&preds), &gold_triples(dev)).prf.f1)
}

fn rounded(model: &Model) -> Model {
    let mut m = model.clone();
    m.params_mut().round_to_f32();
    m
}

/// Trains `model` (fresh or loaded for fine-tuning) on `train`, evaluating
/// on `dev` after every epoch. Runs single-threaded apart from dev scoring,
/// which uses `jobs` workers and does not affect results.
pub fn train(
    mut model: Model,
    train: &[Document],
    dev: &[Document],
    contextual: &dyn ContextualSource,
    jobs: usize,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    if dev.is_empty() {
        return Err(TrainError::NoDevData);
    }
    let cfg = model.config().clone();
    let docs: Vec<(Document, usize)> = train
        .iter()
        .map(|d| (truncate_document(d, cfg.max_train_doc_tokens), d.len()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(model.params(), cfg.learning_rate, cfg.decay_rate, cfg.decay_steps);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut history = Vec::new();
    let mut skipped = Vec::new();
    let mut best: Option<(Model, f64, usize)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut loss_docs, mut skipped_now) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Gradients> = None;
            let mut used = 0;
            for &i in batch {
                let (doc, original_len) = &docs[i];
                let ctx = contextual.layers_for(doc)?;
                let ctx = ctx.map(|c| if doc.len() < *original_len { c.truncate(doc.len()) } else { c });
                match model.loss_and_gradients(doc, ctx.as_ref(), Some(&mut rng)) {
                    Ok(Some((loss, g))) => {
                        if !loss.is_finite() {
                            return Err(TrainError::NonFiniteLoss {
                                epoch,
                                step: adam.steps_taken(),
                                doc_id: doc.doc_id.clone(),
                                value: loss,
                            });
                        }
                        loss_sum += loss;
                        loss_docs += 1;
                        used += 1;
                        match grads.as_mut() {
                            Some(acc) => acc.merge(&g),
                            None => grads = Some(g),
                        }
                    }
                    Ok(None) => {}
                    Err(ModelError::Data { doc_id, message }) => {
                        skipped_now += 1;
                        if epoch == 1 {
                            skipped.push(format!("{doc_id}: {message}"));
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let Some(mut grads) = grads else { continue };
            if used > 1 {
                grads.scale(1.0 / used as f64);
            }
            if let Some(limit) = cfg.clip_gradients {
                let norm = grads.global_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            adam.update(model.params_mut(), &grads);
        }
        if loss_docs == 0 {
            return Err(TrainError::NoTrainingData);
        }

        let snapshot = rounded(&model);
        let f1 = dev_f1(&snapshot, dev, contextual, jobs)?;
        let improved = best.as_ref().is_none_or(|b| f1 > b.1);
        let record = EpochRecord {
            epoch,
            steps: adam.steps_taken(),
            mean_loss: loss_sum / loss_docs as f64,
            dev_f1: f1,
            learning_rate: adam.current_rate(),
            skipped_documents: skipped_now,
            improved,
        };
        progress(&record);
        history.push(record);
        if improved {
            best = Some((snapshot, f1, epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_dev_f1, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_dev_f1,
        best_epoch,
        history,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::encoder::NoContextual;

    fn setup(n_docs: usize) -> (Vec<Document>, Model) {
        let synth = generate_synthetic(&SynthConfig {
            n_docs,
            n_event_types: 2,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            lstm_size: 8,
            lstm_layers: 1,
            ffnn_size: 16,
            char_filters: 4,
            max_epochs: 2,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, synth.ontology, None).unwrap();
        (synth.documents, model)
    }

    #[test]
    fn loss_on_fixed_batch_decreases_for_five_steps() {
        let (docs, mut model) = setup(1);
        let mut adam = Adam::new(model.params(), 0.001, 0.999, 100);
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            let (loss, g) = model.loss_and_gradients(&docs[0], None, None).unwrap().unwrap();
            assert!(loss < last, "{loss} !< {last}");
            last = loss;
            adam.update(model.params_mut(), &g);
        }
    }

    #[test]
    fn training_is_deterministic_and_returns_rounded_best() {
        let (docs, model) = setup(6);
        let (train_docs, dev) = docs.split_at(4);
        let run = || {
            train(model.clone(), train_docs, dev, &NoContextual, 2, &mut |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params(), b.model.params());
        assert!(a
            .model
            .params()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|&v| v == v as f32 as f64)));
        assert_eq!(a.history.len(), 2);
        assert_eq!(a.history[1].steps, 8);
    }

    #[test]
    fn fine_tuning_updates_every_parameter() {
        let (mut docs, model) = setup(4);
        // every score component on, spans enumerated: the loss reaches all parameters
        docs.iter_mut().for_each(|d| d.given_arguments = None);
        let mut cfg = model.config().clone();
        cfg.use_s_er = true;
        cfg.use_s_c = true;
        let mut init = rounded(&model);
        init.set_training_options(&cfg).unwrap();
        let (train_docs, dev) = docs.split_at(3);
        let out = train(init.clone(), train_docs, dev, &NoContextual, 1, &mut |_| {}).unwrap();
        for ((_, name, before), (_, _, after)) in init.params().iter().zip(out.model.params().iter()) {
            assert_ne!(before, after, "{name} unchanged");
        }
    }

    #[test]
    fn empty_corpora_are_rejected() {
        let (docs, model) = setup(2);
        assert!(matches!(
            train(model.clone(), &[], &docs, &NoContextual, 1, &mut |_| {}),
            Err(TrainError::NoTrainingData)
        ));
        assert!(matches!(
            train(model, &docs, &[], &NoContextual, 1, &mut |_| {}),
            Err(TrainError::NoDevData)
        ));
    }
}
