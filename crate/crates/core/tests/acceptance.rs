//! Acceptance suite. Prints one line per criterion and a summary.
//!
//! Exits 0 after reporting; set `ACCEPTANCE_STRICT=1` to exit 1 when any
//! criterion fails.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolelink::candidates::enumerate_spans;
use rolelink::config::ModelConfig;
use rolelink::corpus::{generate_synthetic, Document, EventMention, GoldLink, Span, SynthConfig};
use rolelink::decoder::{
    decode_argmax, decode_greedy, decode_type_constrained, write_predictions, Decoding, LinkPrediction,
    RoleScores,
};
use rolelink::encoder::NoContextual;
use rolelink::evaluation::{
    confusion_matrix, distance_breakdown, gold_triples, prediction_triples, score_triples, Prf, Triple,
};
use rolelink::linker::link_prob;
use rolelink::model::Model;
use rolelink::ontology::{EventKey, EventType, Ontology, RoleSlot};
use rolelink::pipeline::predict;
use rolelink::training::{train, TrainOutcome};
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn within(limit_secs: u64, started: Instant, detail: String, ok: bool) -> Outcome {
    let took = started.elapsed();
    let detail = format!("{detail} [{:.1}s, limit {limit_secs}s]", took.as_secs_f64());
    if ok && took < Duration::from_secs(limit_secs) {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        role_size: 6,
        feature_size: 4,
        width_feature_size: 4,
        char_embedding_size: 4,
        char_filters: 5,
        lstm_size: 6,
        lstm_layers: 1,
        ffnn_size: 8,
        seed,
        ..ModelConfig::default()
    }
}

fn one_type_ontology(roles: &[&str]) -> Ontology {
    Ontology::new(vec![EventType {
        name: "toy.event".into(),
        roles: roles
            .iter()
            .map(|r| RoleSlot {
                name: r.to_string(),
                multiplicity: 1,
            })
            .collect(),
    }])
    .unwrap()
}

fn words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const POOL: &[&str] = &["the", "town", "was", "shelled", "by", "rebels", "on", "monday", "near", "border"];
    (0..n).map(|_| POOL[rng.random_range(0..POOL.len())].to_string()).collect()
}

fn softmax_normalization() -> Outcome {
    let started = Instant::now();
    let ontology = one_type_ontology(&["attacker", "target", "place"]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut tables = 0;
    for draw in 0..1000u64 {
        let mut model = Model::new(tiny_config(draw), ontology.clone(), None).unwrap();
        // spread the score magnitudes across draws
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            model.params_mut().get_mut(id).data.iter_mut().for_each(|v| *v *= scale);
        }
        let tokens = words(12, &mut rng);
        let trigger = Span::new(5, 5);
        let doc_shape = Document {
            doc_id: format!("d{draw}"),
            tokens,
            sentence_starts: vec![0, 6],
            events: vec![EventMention {
                event_id: "e".into(),
                trigger,
                gold_type: None,
            }],
            given_arguments: Some(vec![]),
            gold_links: vec![],
        };
        let mut pool = enumerate_spans(&doc_shape, 3);
        pool.shuffle(&mut rng);
        let size = rng.random_range(0..=10);
        let doc = Document {
            given_arguments: Some(pool[..size].to_vec()),
            ..doc_shape
        };
        for rs in model.score_document(&doc, None).unwrap() {
            if rs.candidates.len() != size {
                return Outcome::Fail(format!("draw {draw}: {} candidates for |A_e| = {size}", rs.candidates.len()));
            }
            let scores: Vec<f64> = rs.candidates.iter().map(|c| c.1).collect();
            let p = link_prob(&scores).unwrap();
            let total: f64 = p.candidates.iter().sum::<f64>() + p.epsilon;
            worst = worst.max((total - 1.0).abs());
            tables += 1;
        }
    }
    within(
        10,
        started,
        format!("{tables} (event, role) distributions, max |sum - 1| = {worst:.2e}"),
        worst <= 1e-6,
    )
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let ontology = one_type_ontology(&["attacker", "target"]);
    let doc = Document {
        doc_id: "toy".into(),
        tokens: ["rebels", "shelled", "the", "town", "yesterday"].map(String::from).to_vec(),
        sentence_starts: vec![0],
        events: vec![EventMention {
            event_id: "e".into(),
            trigger: Span::new(1, 1),
            gold_type: Some("toy.event".into()),
        }],
        given_arguments: Some(vec![Span::new(0, 0), Span::new(2, 3)]),
        gold_links: vec![GoldLink {
            event_id: "e".into(),
            role: "target".into(),
            span: Span::new(2, 3),
        }],
    };
    let cfg = ModelConfig {
        use_s_er: true,
        use_s_c: true,
        ..tiny_config(11)
    };
    let mut model = Model::new(cfg, ontology, None).unwrap();
    // move every parameter off zero so no unit sits exactly on a ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<_> = model.params().ids().collect();
    for &id in &ids {
        for v in model.params_mut().get_mut(id).data.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let (_, grads) = model.loss_and_gradients(&doc, None, None).unwrap().unwrap();
    let h = 1e-4;
    let (mut checked, mut agreed, mut nonzero) = (0usize, 0usize, 0usize);
    let mut worst = (0.0f64, String::new());
    for &id in &ids {
        let n = model.params().get(id).data.len();
        let mut picks: Vec<usize> = (0..n).collect();
        picks.shuffle(&mut rng);
        picks.truncate(40);
        for k in picks {
            let orig = model.params().get(id).data[k];
            model.params_mut().get_mut(id).data[k] = orig + h;
            let up = model.loss(&doc, None).unwrap();
            model.params_mut().get_mut(id).data[k] = orig - h;
            let down = model.loss(&doc, None).unwrap();
            model.params_mut().get_mut(id).data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data[k]);
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale < 1e-8 { 0.0 } else { (numeric - analytic).abs() / scale };
            checked += 1;
            if scale >= 1e-8 {
                nonzero += 1;
            }
            if rel <= 1e-3 {
                agreed += 1;
            }
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]", model.params().name(id)));
            }
        }
    }
    let share = agreed as f64 / checked as f64;
    within(
        60,
        started,
        format!(
            "{agreed}/{checked} sampled parameters within 1e-3 ({:.2}%), {nonzero} with non-zero gradient, worst {:.1e} at {}",
            100.0 * share,
            worst.0,
            worst.1
        ),
        share >= 0.99 && nonzero > checked / 4,
    )
}

fn random_table(rng: &mut ChaCha8Rng, events: &[String], roles: &[String]) -> Vec<RoleScores> {
    let mut table = Vec::new();
    for ev in events {
        let n_roles = rng.random_range(1..=4.min(roles.len()));
        let mut rs: Vec<&String> = roles.iter().collect();
        rs.shuffle(rng);
        for role in rs.into_iter().take(n_roles) {
            let n = rng.random_range(0..=6);
            let mut spans = BTreeSet::new();
            while spans.len() < n {
                let start = rng.random_range(0..8);
                spans.insert(Span::new(start, start + rng.random_range(0..3)));
            }
            table.push(RoleScores {
                doc_id: "doc".into(),
                event_id: ev.clone(),
                role: role.clone(),
                candidates: spans
                    .into_iter()
                    .map(|s| {
                        // coarse grid so exact ties and exact zeros occur
                        let score = (rng.random_range(-6..=6) as f64) * 0.5;
                        (s, score)
                    })
                    .collect(),
            });
        }
    }
    table
}

fn link_set(preds: &[LinkPrediction]) -> BTreeSet<(String, String, Span)> {
    preds
        .iter()
        .map(|p| (p.event_id.clone(), p.role.clone(), p.span))
        .collect()
}

fn decoder_oracles() -> Outcome {
    let started = Instant::now();
    let ontology = Ontology::new(vec![
        EventType {
            name: "conflict.attack".into(),
            roles: vec![
                RoleSlot { name: "attacker".into(), multiplicity: 2 },
                RoleSlot { name: "target".into(), multiplicity: 1 },
                RoleSlot { name: "place".into(), multiplicity: 1 },
            ],
        },
        EventType {
            name: "movement.transport".into(),
            roles: vec![
                RoleSlot { name: "passenger".into(), multiplicity: 3 },
                RoleSlot { name: "origin".into(), multiplicity: 1 },
                RoleSlot { name: "place".into(), multiplicity: 1 },
            ],
        },
    ])
    .unwrap();
    let roles = ontology.roles().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut problems = Vec::new();
    let (mut argmax_links, mut greedy_links, mut tcd_links) = (0, 0, 0);
    for case in 0..500 {
        let events: Vec<String> = (0..rng.random_range(1..=2)).map(|i| format!("e{i}")).collect();
        let table = random_table(&mut rng, &events, &roles);

        // exhaustive max: best score, smallest span among ties, kept only above ε
        let mut expected_argmax = BTreeSet::new();
        for rs in &table {
            let mut best: Option<(Span, f64)> = None;
            for &(s, v) in &rs.candidates {
                best = match best {
                    Some((bs, bv)) if bv > v || (bv == v && bs < s) => Some((bs, bv)),
                    _ => Some((s, v)),
                };
            }
            if let Some((s, v)) = best {
                if v > 0.0 {
                    expected_argmax.insert((rs.event_id.clone(), rs.role.clone(), s));
                }
            }
        }
        let argmax = decode_argmax(&table);
        argmax_links += argmax.len();
        if link_set(&argmax) != expected_argmax || argmax.len() != expected_argmax.len() {
            problems.push(format!("case {case}: argmax"));
        }

        // greedy by repeated selection of the best remaining admissible candidate
        let mut expected_greedy = BTreeSet::new();
        for rs in &table {
            let mut remaining = rs.candidates.clone();
            let mut taken: Vec<Span> = Vec::new();
            loop {
                let admissible = remaining
                    .iter()
                    .copied()
                    .filter(|(s, v)| *v > 0.0 && taken.iter().all(|t| t.end < s.start || s.end < t.start));
                let Some(pick) = admissible.fold(None::<(Span, f64)>, |acc, c| match acc {
                    Some(a) if a.1 > c.1 || (a.1 == c.1 && a.0 < c.0) => Some(a),
                    _ => Some(c),
                }) else {
                    break;
                };
                taken.push(pick.0);
                remaining.retain(|c| c.0 != pick.0);
                expected_greedy.insert((rs.event_id.clone(), rs.role.clone(), pick.0));
            }
        }
        let greedy = decode_greedy(&table);
        greedy_links += greedy.len();
        if link_set(&greedy) != expected_greedy || greedy.len() != expected_greedy.len() {
            problems.push(format!("case {case}: greedy"));
        }
        if !link_set(&argmax).is_subset(&link_set(&greedy)) {
            problems.push(format!("case {case}: argmax not within greedy"));
        }

        let types: BTreeMap<EventKey, String> = events
            .iter()
            .map(|e| {
                let t = &ontology.types()[rng.random_range(0..ontology.types().len())];
                (EventKey::new("doc", e), t.name.clone())
            })
            .collect();
        let tcd = decode_type_constrained(&greedy, &ontology, &types).unwrap();
        tcd_links += tcd.len();
        let violations = ontology.violations(&tcd, &types);
        if !violations.is_empty() {
            problems.push(format!("case {case}: {} violations after TCD", violations.len()));
        }
        if !link_set(&tcd).is_subset(&link_set(&greedy)) {
            problems.push(format!("case {case}: TCD not within greedy"));
        }
    }
    within(
        30,
        started,
        format!(
            "500 tables: {argmax_links} argmax, {greedy_links} greedy, {tcd_links} TCD links; {} mismatches{}",
            problems.len(),
            problems.first().map(|p| format!(", first: {p}")).unwrap_or_default()
        ),
        problems.is_empty(),
    )
}

/// `⌈p·n/q⌉` in integers.
fn ceil_ratio(p: usize, q: usize, n: usize) -> usize {
    (p * n).div_ceil(q)
}

fn pruning_invariants() -> Outcome {
    let started = Instant::now();
    let synth = generate_synthetic(&SynthConfig {
        n_docs: 12,
        seed: 23,
        ..SynthConfig::default()
    })
    .unwrap();
    let docs: Vec<Document> = synth
        .documents
        .into_iter()
        .map(|d| Document {
            given_arguments: None,
            ..d
        })
        .collect();
    let mut problems = Vec::new();
    let mut full_setting = (0usize, 0usize);
    let mut runs = 0;
    for (p, q, k) in [(1, 4, 10), (2, 5, 10), (4, 5, 10), (1, 1, 100)] {
        let lambda = p as f64 / q as f64;
        let cfg = ModelConfig {
            lambda_a: lambda,
            k,
            ..tiny_config(31)
        };
        let model = Model::new(cfg, synth.ontology.clone(), None).unwrap();
        for doc in &docs {
            runs += 1;
            let set = model.candidate_set(doc, None).unwrap();
            let enumerated: BTreeSet<Span> = set.enumerated.iter().copied().collect();
            let pruned: BTreeSet<Span> = set.spans.iter().copied().collect();
            if enumerated != enumerate_spans(doc, 5).into_iter().collect() {
                problems.push(format!("{}: enumeration differs", doc.doc_id));
            }
            if !pruned.is_subset(&enumerated) {
                problems.push(format!("{} λ={lambda}: pruned ⊄ enumerated", doc.doc_id));
            }
            let expected = ceil_ratio(p, q, doc.len()).min(enumerated.len());
            if pruned.len() != expected {
                problems.push(format!("{} λ={lambda}: |pruned| {} ≠ {expected}", doc.doc_id, pruned.len()));
            }
            for (ev, list) in &set.shortlists {
                let shortlisted: BTreeSet<Span> = list.iter().map(|x| x.0).collect();
                if !shortlisted.is_subset(&pruned) {
                    problems.push(format!("{} {ev}: A_e ⊄ pruned", doc.doc_id));
                }
                if shortlisted.len() != k.min(pruned.len()) {
                    problems.push(format!("{} {ev}: |A_e| {} with k={k}", doc.doc_id, shortlisted.len()));
                }
            }
            if p == q {
                full_setting.0 += pruned.len();
                full_setting.1 += enumerated.len();
            }
        }
    }
    let nothing_pruned = full_setting.0 == full_setting.1;
    let mut detail = format!(
        "{runs} documents x settings, {} subset/size mismatches; λ=1.0, k=100 keeps {} of {} enumerated spans",
        problems.len(),
        full_setting.0,
        full_setting.1
    );
    if !nothing_pruned {
        detail.push_str(
            " (the budget is λ times the token count, so with spans up to 5 tokens λ=1.0 still prunes)",
        );
    }
    if let Some(p) = problems.first() {
        detail.push_str(&format!("; first: {p}"));
    }
    within(10, started, detail, problems.is_empty() && nothing_pruned)
}

struct OverfitRun {
    outcome: TrainOutcome,
    dev: Vec<Document>,
    predictions: Vec<u8>,
    elapsed: Duration,
}

fn overfit_run(jobs: usize) -> OverfitRun {
    let started = Instant::now();
    let synth = generate_synthetic(&SynthConfig {
        n_docs: 60,
        n_event_types: 5,
        roles_per_type: 2,
        sentence_offset_range: (-2, 2),
        seed: 17,
        ..SynthConfig::default()
    })
    .unwrap();
    let (train_docs, dev) = synth.documents.split_at(50);
    let cfg = ModelConfig {
        lstm_size: 50,
        lstm_layers: 1,
        max_epochs: 30,
        // every synthetic role takes exactly one filler
        dev_decoding: Decoding::Argmax,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, synth.ontology, None).unwrap();
    let outcome = train(model, train_docs, dev, &NoContextual, jobs, &mut |_| {}).unwrap();
    let preds = predict(&outcome.model, dev, &NoContextual, Decoding::Argmax, jobs).unwrap();
    let mut predictions = Vec::new();
    write_predictions(&preds, &mut predictions).unwrap();
    OverfitRun {
        outcome,
        dev: dev.to_vec(),
        predictions,
        elapsed: started.elapsed(),
    }
}

fn pooled_cross_sentence(preds: &[LinkPrediction], dev: &[Document]) -> Prf {
    let rows = distance_breakdown(&prediction_triples(preds), &gold_triples(dev), dev).unwrap();
    let (c, p, g) = rows
        .iter()
        .filter(|r| r.distance.is_some_and(|d| d != 0))
        .fold((0, 0, 0), |a, r| (a.0 + r.prf.correct, a.1 + r.prf.predicted, a.2 + r.prf.gold));
    Prf::from_counts(c, p, g)
}

fn synthetic_overfit(run: &OverfitRun) -> Outcome {
    let out = &run.outcome;
    let model = &out.model;
    let preds = predict(model, &run.dev, &NoContextual, Decoding::Argmax, 1).unwrap();
    let cross = pooled_cross_sentence(&preds, &run.dev);
    let greedy = predict(model, &run.dev, &NoContextual, Decoding::Greedy, 1).unwrap();
    let greedy_f1 = score_triples(&prediction_triples(&greedy), &gold_triples(&run.dev)).prf.f1;
    let took = run.elapsed;
    let detail = format!(
        "best dev F1 {:.1} at epoch {} of {}; cross-sentence F1 {:.1} ({}/{} correct of {} gold); greedy dev F1 {greedy_f1:.1} [{:.1}s, limit 600s]",
        out.best_dev_f1,
        out.best_epoch,
        out.history.len(),
        cross.f1,
        cross.correct,
        cross.predicted,
        cross.gold,
        took.as_secs_f64()
    );
    if out.best_dev_f1 >= 95.0 && out.best_epoch <= 30 && cross.f1 >= 85.0 && took < Duration::from_secs(600) {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn triple(event: &str, role: &str, start: usize, end: usize) -> Triple {
    Triple {
        doc_id: "d".into(),
        event_id: event.into(),
        role: role.into(),
        span: Span::new(start, end),
    }
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let gold = vec![
        triple("e", "attacker", 0, 1),
        triple("e", "target", 3, 3),
        triple("e", "instrument", 5, 6),
        triple("e", "place", 8, 8),
    ];
    let predicted = vec![
        triple("e", "attacker", 0, 1),
        triple("e", "target", 3, 3),
        triple("e", "place", 5, 6),
    ];
    let s = score_triples(&predicted, &gold).prf;
    let r1 = |x: f64| (x * 10.0).round() / 10.0;
    let prf_ok = (r1(s.precision), r1(s.recall), r1(s.f1)) == (66.7, 50.0, 57.1);

    let gold_roles = vec![triple("e", "destination", 2, 4), triple("e", "origin", 2, 4)];
    let pred_roles = vec![triple("e", "origin", 2, 4), triple("e", "place", 2, 4)];
    let c = confusion_matrix(&pred_roles, &gold_roles);
    let cell = |g: &str, p: &str| c.cells.get(g).and_then(|row| row.get(p)).copied().unwrap_or(0);
    let confusion_ok = c.errors() == 1
        && cell("destination", "place") == 1
        && c.matched() == 1
        && cell("origin", "origin") == 1
        && c.missed_total() == 0
        && c.spurious_total() == 0;
    within(
        10,
        started,
        format!(
            "P/R/F1 = {:.1}/{:.1}/{:.1}; confusion: {} matched, {} error (destination→place: {})",
            s.precision,
            s.recall,
            s.f1,
            c.matched(),
            c.errors(),
            cell("destination", "place")
        ),
        prf_ok && confusion_ok,
    )
}

fn tcd_noise() -> Outcome {
    let started = Instant::now();
    let synth = generate_synthetic(&SynthConfig {
        n_docs: 200,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let ontology = &synth.ontology;
    let docs = &synth.documents;
    let types = rolelink::corpus::gold_types(docs);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut clean: Vec<LinkPrediction> = Vec::new();
    for d in docs {
        for l in &d.gold_links {
            clean.push(LinkPrediction {
                doc_id: d.doc_id.clone(),
                event_id: l.event_id.clone(),
                role: l.role.clone(),
                span: l.span,
                score: rng.random_range(0.1..5.0),
            });
        }
    }
    let n_noise = clean.len() / 4; // 20% of the noisy set
    let mut noisy = clean.clone();
    let mut displaced = 0;
    for i in 0..n_noise {
        let base = &clean[rng.random_range(0..clean.len())];
        let doc = docs.iter().find(|d| d.doc_id == base.doc_id).unwrap();
        let own_type = &types[&EventKey::new(&base.doc_id, &base.event_id)];
        let mut noise = base.clone();
        noise.score = rng.random_range(0.1..5.0);
        if i % 2 == 0 {
            // a role the event's type does not have
            let foreign: Vec<&String> = ontology
                .roles()
                .iter()
                .filter(|r| ontology.event_type(own_type).unwrap().role(r).is_none())
                .collect();
            noise.role = foreign[rng.random_range(0..foreign.len())].clone();
        } else {
            // a second argument for a single-argument role
            let spans = doc.given_arguments.as_ref().unwrap();
            let others: Vec<Span> = spans
                .iter()
                .copied()
                .filter(|s| !noisy.iter().any(|p| p.doc_id == base.doc_id && p.role == base.role && p.span == *s))
                .collect();
            let Some(&s) = others.first() else { continue };
            noise.span = s;
            if noise.score > base.score {
                displaced += 1;
            }
        }
        noisy.push(noise);
    }
    noisy.shuffle(&mut rng);
    let gold = gold_triples(docs);
    let before = score_triples(&prediction_triples(&noisy), &gold).prf;
    let violations_before = ontology.violations(&noisy, &types).len();
    let filtered = decode_type_constrained(&noisy, ontology, &types).unwrap();
    let after = score_triples(&prediction_triples(&filtered), &gold).prf;
    let noise_share = (noisy.len() - clean.len()) as f64 / noisy.len() as f64;
    let ok = after.precision > before.precision
        && after.correct + displaced >= before.correct
        && ontology.violations(&filtered, &types).is_empty();
    within(
        10,
        started,
        format!(
            "{:.0}% noise, {violations_before} violations; precision {:.1} → {:.1}; correct {} → {} ({displaced} outscored by noise in a capped role)",
            100.0 * noise_share,
            before.precision,
            after.precision,
            before.correct,
            after.correct
        ),
        ok,
    )
}

fn determinism(first: &OverfitRun) -> Outcome {
    let second = overfit_run(4);
    let same_history = first.outcome.history == second.outcome.history;
    let same_bytes = first.predictions == second.predictions;
    let f1s: Vec<String> = first.outcome.history.iter().map(|r| format!("{:.1}", r.dev_f1)).collect();
    let detail = format!(
        "dev F1 trajectories {} ({} epochs: {}); prediction files {} ({} bytes)",
        if same_history { "identical" } else { "differ" },
        f1s.len(),
        f1s.join(" "),
        if same_bytes { "byte-identical" } else { "differ" },
        first.predictions.len()
    );
    if same_history && same_bytes {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Outcome::Fail(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {n}: {name}: {detail}");
        results.push((n, name, o));
    };

    report(
        1,
        "full-scale results on the annotated corpus",
        Outcome::Skip(
            "non-gating; needs the RAMS release and precomputed contextual vectors (see README, long-running reproduction)"
                .into(),
        ),
    );
    let checks: [(usize, &str, Check); 4] = [
        (2, "softmax normalization", softmax_normalization),
        (3, "gradient correctness", gradient_check),
        (4, "decoder oracles", decoder_oracles),
        (5, "pruning invariants", pruning_invariants),
    ];
    for (n, name, f) in checks {
        report(n, name, guarded(f));
    }
    let run = catch_unwind(|| overfit_run(1));
    match &run {
        Ok(r) => report(6, "synthetic overfit", guarded(|| synthetic_overfit(r))),
        Err(_) => report(6, "synthetic overfit", Outcome::Fail("training panicked".into())),
    }
    report(7, "metric oracle", guarded(metric_oracle));
    report(8, "type-constrained decoding under noise", guarded(tcd_noise));
    match &run {
        Ok(r) => report(9, "determinism", guarded(|| determinism(r))),
        Err(_) => report(9, "determinism", Outcome::Fail("first training run panicked".into())),
    }

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| matches!(r.2, Outcome::Fail(_)))
        .map(|r| r.0)
        .collect();
    let passed = results.iter().filter(|r| matches!(r.2, Outcome::Pass(_))).count();
    let skipped = results.iter().filter(|r| matches!(r.2, Outcome::Skip(_))).count();
    println!(
        "acceptance: {passed} passed, {} failed{}, {skipped} skipped",
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
