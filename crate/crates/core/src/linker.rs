//! Event-role representations, link scores and the ε-thresholded softmax.

use crate::config::ModelConfig;
use crate::nn::graph::softmax;
use crate::nn::layers::{Ffnn, Linear, Mode};
use crate::nn::params::uniform;
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub const DISTANCE_BUCKETS: usize = 10;

/// Buckets {0,1,2,3,4,5–7,8–15,16–31,32–63,≥64}.
pub fn bucket_distance(d: usize) -> usize {
    match d {
        0..=4 => d,
        5..=7 => 5,
        8..=15 => 6,
        16..=31 => 7,
        32..=63 => 8,
        _ => 9,
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LinkError {
    #[error("non-finite link score {0}")]
    NonFinite(f64),
}

/// Outcome probabilities for one (event, role).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkProbs {
    pub candidates: Vec<f64>,
    pub epsilon: f64,
}

/// Softmax over the candidates plus ε, whose logit is fixed at 0.
pub fn link_prob(scores: &[f64]) -> Result<LinkProbs, LinkError> {
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(LinkError::NonFinite(bad));
    }
    let mut logits = scores.to_vec();
    logits.push(0.0);
    let mut p = softmax(&logits);
    let epsilon = p.pop().unwrap_or(1.0);
    Ok(LinkProbs {
        candidates: p,
        epsilon,
    })
}

/// `−log P(target)`; `None` targets ε.
pub fn nll(scores: &[f64], target: Option<usize>) -> Result<f64, LinkError> {
    let p = link_prob(scores)?;
    let pt = match target {
        Some(i) => p.candidates[i],
        None => p.epsilon,
    };
    Ok(-pt.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub event_role: bool,
    pub arg_role: bool,
    pub link: bool,
    pub coarse: bool,
    pub distance: bool,
}

impl Toggles {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Toggles {
            event_role: cfg.use_s_er,
            arg_role: cfg.use_s_ar,
            link: cfg.use_s_l,
            coarse: cfg.use_s_c,
            distance: cfg.use_distance,
        }
    }
}

/// Per-component score matrices (`m × p` after broadcasting); disabled
/// components are `None`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreParts {
    pub event_role: Option<Var>,
    pub arg_role: Option<Var>,
    pub link: Option<Var>,
    pub coarse: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct LinkScorer {
    pub role_embedding: ParamId,
    pub distance_embedding: ParamId,
    pub event_role_ffnn: Ffnn,
    pub er_ffnn: Ffnn,
    pub er_head: Linear,
    pub ar_ffnn: Ffnn,
    pub ar_head: Linear,
    pub arg_projection: Linear,
    pub link_ffnn: Ffnn,
    pub link_head: Linear,
    pub toggles: Toggles,
}

impl LinkScorer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        span_dim: usize,
        num_roles: usize,
    ) -> Self {
        let h = cfg.ffnn_size;
        let ffnn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, blocks: &[usize]| {
            Ffnn::new(store, rng, name, blocks, h, cfg.ffnn_layers, cfg.ffnn_dropout)
        };
        let role_embedding = store.add("role.embedding", uniform(rng, num_roles, cfg.role_size, 0.1));
        let distance_embedding = store.add(
            "distance.embedding",
            uniform(rng, DISTANCE_BUCKETS, cfg.feature_size, 0.1),
        );
        let event_role_ffnn = ffnn(store, rng, "event_role", &[span_dim, cfg.role_size]);
        let er_ffnn = ffnn(store, rng, "s_er", &[span_dim, cfg.role_size]);
        let er_head = Linear::new(store, rng, "s_er.head", h, 1, true);
        let ar_ffnn = ffnn(store, rng, "s_ar", &[span_dim, cfg.role_size]);
        let ar_head = Linear::new(store, rng, "s_ar.head", h, 1, true);
        let arg_projection = Linear::new(store, rng, "s_l.arg_projection", span_dim, h, true);
        let link_ffnn = ffnn(store, rng, "s_l", &[h, h, h, cfg.feature_size]);
        let link_head = Linear::new(store, rng, "s_l.head", h, 1, true);
        LinkScorer {
            role_embedding,
            distance_embedding,
            event_role_ffnn,
            er_ffnn,
            er_head,
            ar_ffnn,
            ar_head,
            arg_projection,
            link_ffnn,
            link_head,
            toggles: Toggles::from_config(cfg),
        }
    }

    /// Distance-bucket embedding rows for token distances.
    pub fn distance_features(&self, g: &mut Graph, distances: &[usize]) -> Var {
        let table = g.param(self.distance_embedding);
        let idx: Vec<usize> = distances.iter().map(|&d| bucket_distance(d)).collect();
        g.gather_rows(table, &idx)
    }

    /// `ã` for one event (`1 × D`) and each listed role: `p × ffnn_size`.
    pub fn event_role_repr(&self, g: &mut Graph, event: Var, roles: &[usize], mode: &mut Mode) -> Var {
        let table = g.param(self.role_embedding);
        let r = g.gather_rows(table, roles);
        pair_input(g, &self.event_role_ffnn, event, r, mode)
    }

    /// Score components for every (argument, role) pair. `args` is `m × D`,
    /// `distances` holds one trigger-argument token distance per argument,
    /// `coarse` is the `m × 1` coarse score.
    pub fn components(
        &self,
        g: &mut Graph,
        event: Var,
        args: Var,
        roles: &[usize],
        distances: &[usize],
        coarse: Option<Var>,
        mode: &mut Mode,
    ) -> ScoreParts {
        let m = g.shape(args).0;
        let p = roles.len();
        let t = self.toggles;
        let table = g.param(self.role_embedding);
        let role_rows = g.gather_rows(table, roles);

        let event_role = t.event_role.then(|| {
            let hid = pair_input(g, &self.er_ffnn, event, role_rows, mode);
            let s = self.er_head.forward(g, hid);
            g.reshape(s, 1, p)
        });

        let arg_role = t.arg_role.then(|| {
            let a = self.ar_ffnn.project(g, 0, args);
            let r = self.ar_ffnn.project(g, 1, role_rows);
            let pre = g.pair_sum(a, r);
            let hid = self.ar_ffnn.finish(g, pre, mode);
            let s = self.ar_head.forward(g, hid);
            g.reshape(s, m, p)
        });

        let link = t.link.then(|| {
            let tilde = self.event_role_repr(g, event, roles, mode);
            let ap = self.arg_projection.forward(g, args);
            let mut left = self.link_ffnn.project(g, 0, ap);
            if t.distance {
                let phi = self.distance_features(g, distances);
                let phi = self.link_ffnn.project(g, 3, phi);
                left = g.add(left, phi);
            }
            let right = self.link_ffnn.project(g, 1, tilde);
            let prod = g.pair_mul(ap, tilde);
            let prod = self.link_ffnn.project(g, 2, prod);
            let pre = g.pair_sum(left, right);
            let pre = g.add(pre, prod);
            let hid = self.link_ffnn.finish(g, pre, mode);
            let s = self.link_head.forward(g, hid);
            g.reshape(s, m, p)
        });

        ScoreParts {
            event_role,
            arg_role,
            link,
            coarse: if t.coarse { coarse } else { None },
        }
    }

    /// Sum of the enabled components as an `m × p` matrix.
    pub fn combine(&self, g: &mut Graph, parts: &ScoreParts, m: usize, p: usize) -> Var {
        let mut total = g.constant(Tensor::zeros(m, p));
        for part in [parts.event_role, parts.arg_role, parts.link, parts.coarse]
            .into_iter()
            .flatten()
        {
            total = g.add_broadcast(total, part);
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scores(
        &self,
        g: &mut Graph,
        event: Var,
        args: Var,
        roles: &[usize],
        distances: &[usize],
        coarse: Option<Var>,
        mode: &mut Mode,
    ) -> Var {
        let parts = self.components(g, event, args, roles, distances, coarse, mode);
        let m = g.shape(args).0;
        self.combine(g, &parts, m, roles.len())
    }
}

/// First layer over `[x; r_j]` for one row `x` and each row `r_j`.
fn pair_input(g: &mut Graph, ffnn: &Ffnn, x: Var, rows: Var, mode: &mut Mode) -> Var {
    let a = ffnn.project(g, 0, x);
    let b = ffnn.project(g, 1, rows);
    let pre = g.add_broadcast(b, a);
    ffnn.finish(g, pre, mode)
}
