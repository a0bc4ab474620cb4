//! Feed-forward and recurrent building blocks on top of the tape.

use super::graph::{Graph, Var};
use super::params::{glorot, ParamId, ParamStore};
use super::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode. Training mode owns the dropout RNG stream.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout on individual entries.
pub fn dropout(g: &mut Graph, x: Var, p: f64, mode: &mut Mode) -> Var {
    let Mode::Train(rng) = mode else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = g.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    g.mul_const(x, Tensor::from_vec(r, c, mask))
}

/// Inverted dropout of whole rows (every feature of a token at once).
pub fn row_dropout(g: &mut Graph, x: Var, p: f64, mode: &mut Mode) -> Var {
    let Mode::Train(rng) = mode else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = g.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mut mask = Vec::with_capacity(r * c);
    for _ in 0..r {
        let m = if rng.random::<f64>() < p { 0.0 } else { keep };
        mask.extend(std::iter::repeat_n(m, c));
    }
    g.mul_const(x, Tensor::from_vec(r, c, mask))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, input, output));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, output)));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_broadcast(y, b)
            }
            None => y,
        }
    }
}

/// Feed-forward net with ReLU hidden layers whose first layer takes a
/// concatenation of several input blocks. The first layer keeps one weight
/// block per input so callers can project blocks separately (for example to
/// score every (argument, role) pair without materializing the
/// concatenation).
#[derive(Debug, Clone)]
pub struct Ffnn {
    pub first_blocks: Vec<ParamId>,
    pub first_bias: ParamId,
    pub rest: Vec<Linear>,
    pub dropout: f64,
}

impl Ffnn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_blocks: &[usize],
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Self {
        assert!(layers >= 1, "feed-forward net needs at least one layer");
        let fan_in: usize = input_blocks.iter().sum();
        let limit = (6.0 / (fan_in + hidden) as f64).sqrt();
        let first_blocks = input_blocks
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                store.add(
                    format!("{name}.0.weight.{k}"),
                    super::params::uniform(rng, d, hidden, limit),
                )
            })
            .collect();
        let first_bias = store.add(format!("{name}.0.bias"), Tensor::zeros(1, hidden));
        let rest = (1..layers)
            .map(|l| Linear::new(store, rng, &format!("{name}.{l}"), hidden, hidden, true))
            .collect();
        Ffnn {
            first_blocks,
            first_bias,
            rest,
            dropout,
        }
    }

    /// `x · W_k` for input block `k`, without bias.
    pub fn project(&self, g: &mut Graph, block: usize, x: Var) -> Var {
        let w = g.param(self.first_blocks[block]);
        g.matmul(x, w)
    }

    /// Complete the network from a first-layer pre-activation (sum of block
    /// projections).
    pub fn finish(&self, g: &mut Graph, pre: Var, mode: &mut Mode) -> Var {
        let b = g.param(self.first_bias);
        let mut h = g.add_broadcast(pre, b);
        h = g.relu(h);
        h = dropout(g, h, self.dropout, mode);
        for layer in &self.rest {
            h = layer.forward(g, h);
            h = g.relu(h);
            h = dropout(g, h, self.dropout, mode);
        }
        h
    }

    /// Forward over already-concatenated blocks, given one `Var` per block.
    pub fn forward(&self, g: &mut Graph, blocks: &[Var], mode: &mut Mode) -> Var {
        assert_eq!(blocks.len(), self.first_blocks.len());
        let mut pre = self.project(g, 0, blocks[0]);
        for (k, &b) in blocks.iter().enumerate().skip(1) {
            let p = self.project(g, k, b);
            pre = g.add(pre, p);
        }
        self.finish(g, pre, mode)
    }
}

/// Single-direction LSTM with gate order (input, forget, output, candidate).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let w_input = store.add(format!("{name}.w_input"), glorot(rng, input, 4 * hidden));
        let w_hidden = store.add(format!("{name}.w_hidden"), glorot(rng, hidden, 4 * hidden));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, 4 * hidden));
        Lstm {
            w_input,
            w_hidden,
            bias,
            hidden,
        }
    }

    /// Runs over the rows of `x` (T×d) and returns T×H hidden states in the
    /// original row order.
    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let steps = g.shape(x).0;
        let hsz = self.hidden;
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let xw = g.matmul(x, wx);
        let xw = g.add_broadcast(xw, b);
        let mut h = g.constant(Tensor::zeros(1, hsz));
        let mut c = g.constant(Tensor::zeros(1, hsz));
        let mut outputs = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.gather_rows(xw, &[t]);
            let hw = g.matmul(h, wh);
            let gates = g.add(xt, hw);
            let i = g.slice_cols(gates, 0, hsz);
            let i = g.sigmoid(i);
            let f = g.slice_cols(gates, hsz, hsz);
            let f = g.sigmoid(f);
            let o = g.slice_cols(gates, 2 * hsz, hsz);
            let o = g.sigmoid(o);
            let cand = g.slice_cols(gates, 3 * hsz, hsz);
            let cand = g.tanh(cand);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let ct = g.tanh(c);
            h = g.mul(o, ct);
            outputs[t] = h;
        }
        g.concat_rows(&outputs)
    }
}

/// Stacked bidirectional LSTM; each layer's output is `[forward; backward]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub layers: Vec<(Lstm, Lstm)>,
    pub dropout: f64,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { input } else { 2 * hidden };
                (
                    Lstm::new(store, rng, &format!("{name}.{l}.fwd"), d, hidden),
                    Lstm::new(store, rng, &format!("{name}.{l}.bwd"), d, hidden),
                )
            })
            .collect();
        BiLstm { layers, dropout }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers.last().map_or(0, |(f, _)| f.hidden)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mode: &mut Mode) -> Var {
        let mut h = x;
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(g, h, false);
            let b = bwd.forward(g, h, true);
            h = g.concat_cols(&[f, b]);
            h = dropout(g, h, self.dropout, mode);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::sigmoid;
    use rand::SeedableRng;

    #[test]
    fn lstm_at_zero_weights_follows_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, &mut rng, "l", 3, 2);
        store.get_mut(lstm.w_input).data.fill(0.0);
        store.get_mut(lstm.w_hidden).data.fill(0.0);
        // gate biases: input, forget, output, candidate
        let bias = [0.3, -0.2, 0.0, 1.0, 0.5, 0.5, -0.7, 0.2];
        store.get_mut(lstm.bias).data.copy_from_slice(&bias);

        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(4, 3));
        let out = lstm.forward(&mut g, x, false);
        let out = g.value(out).clone();

        let mut c = [0.0f64; 2];
        for t in 0..4 {
            for k in 0..2 {
                let i = sigmoid(bias[k]);
                let f = sigmoid(bias[2 + k]);
                let o = sigmoid(bias[4 + k]);
                let cand = bias[6 + k].tanh();
                c[k] = f * c[k] + i * cand;
                let h = o * c[k].tanh();
                assert!((out.get(t, k) - h).abs() < 1e-12);
            }
        }

        store.get_mut(lstm.bias).data.fill(0.0);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(4, 3));
        let out = lstm.forward(&mut g, x, true);
        assert!(g.value(out).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_dropout_zeroes_whole_rows() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mode = Mode::Train(&mut rng);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::filled(200, 4, 1.0));
        let y = row_dropout(&mut g, x, 0.5, &mut mode);
        let v = g.value(y);
        let mut dropped = 0;
        for r in 0..v.rows {
            let row = v.row(r);
            assert!(row.iter().all(|&e| e == row[0]));
            assert!(row[0] == 0.0 || row[0] == 2.0);
            if row[0] == 0.0 {
                dropped += 1;
            }
        }
        assert!((60..140).contains(&dropped));
    }
}
