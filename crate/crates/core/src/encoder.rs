//! Token embeddings, per-sentence BiLSTM encoding and span representations.

use crate::config::ModelConfig;
use crate::corpus::{Document, Span};
use crate::nn::graph::softmax;
use crate::nn::layers::{row_dropout, BiLstm, Linear, Mode};
use crate::nn::params::{glorot, uniform};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Character vocabulary: 0 is padding, Latin-1 code points map to `cp + 1`,
/// everything else is hashed into the upper half.
pub const CHAR_VOCAB: usize = 512;

/// Width buckets {1,2,3,4,5–7,8–15,16–31,32+}.
pub const WIDTH_BUCKETS: usize = 8;

const CTXE_MAGIC: &[u8; 4] = b"CTXE";
const CTXE_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("document `{doc_id}` has {expected} tokens but its contextual layers cover {found}")]
    Alignment {
        doc_id: String,
        expected: usize,
        found: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EncoderError + '_ {
    move |source| EncoderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Width bucket index for a span of `width` tokens.
pub fn width_bucket(width: usize) -> usize {
    match width {
        0 | 1 => 0,
        2..=4 => width - 1,
        5..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        _ => 7,
    }
}

pub fn char_id(c: char) -> usize {
    let cp = c as usize;
    if cp < 255 {
        cp + 1
    } else {
        256 + cp % 256
    }
}

/// Character ids of `token`, right-padded with 0 to at least `min_len`.
pub fn char_ids(token: &str, min_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = token.chars().map(char_id).collect();
    if ids.len() < min_len {
        ids.resize(min_len, 0);
    }
    ids
}

/// Fixed word vectors read from a whitespace-separated text file.
#[derive(Debug, Clone, Default)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim);
        self.vectors.insert(word.into(), vector);
    }

    /// Parses `word v1 ... vd` lines. A leading `count dim` header line is
    /// skipped. With `vocab`, only listed words (or their lowercase forms)
    /// are kept.
    pub fn read<R: BufRead>(reader: R, vocab: Option<&HashSet<String>>) -> Result<Self, EncoderError> {
        let mut out = WordVectors::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EncoderError::Format(format!("word vectors: {e}")))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if i == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() {
                continue;
            }
            if out.dim == 0 {
                out.dim = rest.len();
            }
            if rest.len() != out.dim || out.dim == 0 {
                return Err(EncoderError::Format(format!(
                    "word vectors line {}: expected {} values, found {}",
                    i + 1,
                    out.dim,
                    rest.len()
                )));
            }
            if vocab.is_some_and(|v| !v.contains(word)) {
                continue;
            }
            let values = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EncoderError::Format(format!("word vectors line {}: {e}", i + 1)))?;
            out.vectors.entry(word.to_string()).or_insert(values);
        }
        if out.dim == 0 {
            return Err(EncoderError::Format("word vector file is empty".into()));
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, vocab: Option<&HashSet<String>>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read(std::io::BufReader::new(file), vocab)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact form first, then lowercase.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }
}

/// Token forms (and lowercase forms) of a corpus, for filtering word vectors.
pub fn vocabulary<'a>(docs: impl IntoIterator<Item = &'a Document>) -> HashSet<String> {
    let mut vocab = HashSet::new();
    for d in docs {
        for t in &d.tokens {
            vocab.insert(t.clone());
            vocab.insert(t.to_lowercase());
        }
    }
    vocab
}

/// Precomputed contextual layers for one document: `L` tensors of `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualLayers {
    pub layers: Arc<Vec<Tensor>>,
}

impl ContextualLayers {
    pub fn new(layers: Vec<Tensor>) -> Result<Self, EncoderError> {
        let first = layers
            .first()
            .ok_or_else(|| EncoderError::Shape("at least one contextual layer is required".into()))?
            .shape();
        if layers.iter().any(|l| l.shape() != first) {
            return Err(EncoderError::Shape("contextual layers differ in shape".into()));
        }
        Ok(ContextualLayers {
            layers: Arc::new(layers),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.layers[0].rows
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols
    }

    /// First `n` token rows of every layer.
    pub fn truncate(&self, n: usize) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let n = n.min(l.rows);
                Tensor::from_vec(n, l.cols, l.data[..n * l.cols].to_vec())
            })
            .collect();
        ContextualLayers {
            layers: Arc::new(layers),
        }
    }

    /// Joins per-segment stacks along the token axis.
    pub fn concat(parts: &[ContextualLayers]) -> Result<Self, EncoderError> {
        let first = parts
            .first()
            .ok_or_else(|| EncoderError::Shape("no contextual segments".into()))?;
        let (nl, d) = (first.num_layers(), first.dim());
        if parts.iter().any(|p| p.num_layers() != nl || p.dim() != d) {
            return Err(EncoderError::Shape("contextual segments differ in layers or width".into()));
        }
        let layers = (0..nl)
            .map(|l| {
                let data: Vec<f64> = parts.iter().flat_map(|p| p.layers[l].data.iter().copied()).collect();
                Tensor::from_vec(data.len() / d, d, data)
            })
            .collect();
        ContextualLayers::new(layers)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(CTXE_MAGIC)?;
        out.write_all(&CTXE_VERSION.to_le_bytes())?;
        out.write_all(&(self.num_layers() as u16).to_le_bytes())?;
        out.write_all(&(self.num_tokens() as u32).to_le_bytes())?;
        out.write_all(&(self.dim() as u32).to_le_bytes())?;
        for l in self.layers.iter() {
            for &v in &l.data {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, EncoderError> {
        let fmt = |m: &str| EncoderError::Format(format!("contextual file: {m}"));
        let mut header = [0u8; 16];
        input
            .read_exact(&mut header)
            .map_err(|_| fmt("truncated header"))?;
        if &header[..4] != CTXE_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != CTXE_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let nl = u16::from_le_bytes([header[6], header[7]]) as usize;
        let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; nl * n * d * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| fmt("truncated data"))?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let layers = values
            .chunks(n * d.max(1))
            .take(nl)
            .map(|c| Tensor::from_vec(n, d, c.to_vec()))
            .collect();
        ContextualLayers::new(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        self.write(&mut f).map_err(io_err(path))?;
        f.flush().map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Splits a document into token ranges of at most `limit` tokens, cutting
/// only at sentence boundaries. A sentence longer than `limit` becomes a
/// segment of its own.
pub fn segment_document(doc: &Document, limit: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for s in 0..doc.num_sentences() {
        let (lo, hi) = doc.sentence_bounds(s);
        if hi - start > limit && lo > start {
            out.push((start, lo));
            start = lo;
        }
    }
    if start < doc.len() || out.is_empty() {
        out.push((start, doc.len()));
    }
    out
}

/// File stem used for a document's contextual features.
pub fn contextual_file_stem(doc_id: &str) -> String {
    doc_id
        .chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect()
}

/// Where contextual layers come from at training and prediction time.
pub trait ContextualSource: Sync {
    fn layers_for(&self, doc: &Document) -> Result<Option<ContextualLayers>, EncoderError>;
}

pub struct NoContextual;

impl ContextualSource for NoContextual {
    fn layers_for(&self, _doc: &Document) -> Result<Option<ContextualLayers>, EncoderError> {
        Ok(None)
    }
}

/// Reads `<stem>.ctxe`, or `<stem>.seg0.ctxe`, `<stem>.seg1.ctxe`, … joined
/// in order, from a directory.
pub struct ContextualDir(pub PathBuf);

impl ContextualSource for ContextualDir {
    fn layers_for(&self, doc: &Document) -> Result<Option<ContextualLayers>, EncoderError> {
        let stem = contextual_file_stem(&doc.doc_id);
        let whole = self.0.join(format!("{stem}.ctxe"));
        let layers = if whole.exists() {
            ContextualLayers::load(&whole)?
        } else {
            let mut parts = Vec::new();
            loop {
                let p = self.0.join(format!("{stem}.seg{}.ctxe", parts.len()));
                if !p.exists() {
                    break;
                }
                parts.push(ContextualLayers::load(&p)?);
            }
            if parts.is_empty() {
                return Err(EncoderError::Io {
                    path: whole,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no contextual file"),
                });
            }
            ContextualLayers::concat(&parts)?
        };
        Ok(Some(layers))
    }
}

/// `scale · Σ_l softmax(weights)_l · layers[l]`.
pub fn scalar_mixture(layers: &[Tensor], weights: &[f64], scale: f64) -> Result<Tensor, EncoderError> {
    let first = layers
        .first()
        .ok_or_else(|| EncoderError::Shape("at least one layer is required".into()))?;
    if weights.len() != layers.len() {
        return Err(EncoderError::Shape(format!(
            "{} mixture weights for {} layers",
            weights.len(),
            layers.len()
        )));
    }
    if layers.iter().any(|l| l.shape() != first.shape()) {
        return Err(EncoderError::Shape("layers differ in shape".into()));
    }
    let mut out = Tensor::zeros(first.rows, first.cols);
    for (p, layer) in softmax(weights).iter().zip(layers) {
        for (o, v) in out.data.iter_mut().zip(&layer.data) {
            *o += scale * p * v;
        }
    }
    Ok(out)
}

/// Per-document inputs that do not live in the parameter store.
#[derive(Clone, Copy, Default)]
pub struct TokenSources<'a> {
    pub words: Option<&'a WordVectors>,
    pub contextual: Option<&'a ContextualLayers>,
}

#[derive(Debug, Clone)]
pub struct CharCnn {
    pub embedding: ParamId,
    /// (width, filter bank `width·dim × filters`, bias `1 × filters`)
    pub banks: Vec<(usize, ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub word_dim: usize,
    pub unknown_word: Option<ParamId>,
    pub chars: CharCnn,
    /// (weights `1×L`, scale `1×1`)
    pub mixture: Option<(ParamId, ParamId)>,
    pub contextual_size: usize,
    pub char_dim: usize,
    pub width_dim: usize,
    pub lstm: BiLstm,
    pub attention: Linear,
    pub width_embedding: ParamId,
    pub lexical_dropout: f64,
}

/// Encoder outputs for one document.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `n × d_in` token embeddings.
    pub tokens: Var,
    /// `n × d_h` hidden states.
    pub hidden: Var,
    /// `n × 1` attention logits.
    pub attention: Var,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig, word_dim: usize) -> Self {
        let unknown_word = (word_dim > 0).then(|| store.add("embed.unk", uniform(rng, 1, word_dim, 0.1)));
        let embedding = store.add(
            "embed.chars",
            uniform(rng, CHAR_VOCAB, cfg.char_embedding_size, 0.1),
        );
        let banks = cfg
            .char_filter_widths
            .iter()
            .map(|&w| {
                let f = store.add(
                    format!("embed.conv{w}.weight"),
                    glorot(rng, w * cfg.char_embedding_size, cfg.char_filters),
                );
                let b = store.add(format!("embed.conv{w}.bias"), Tensor::zeros(1, cfg.char_filters));
                (w, f, b)
            })
            .collect();
        let mixture = (cfg.contextual_layers > 0).then(|| {
            (
                store.add("embed.mix.weights", Tensor::zeros(1, cfg.contextual_layers)),
                store.add("embed.mix.scale", Tensor::scalar(1.0)),
            )
        });
        let token_dim = cfg.token_dim(word_dim);
        let lstm = BiLstm::new(
            store,
            rng,
            "lstm",
            token_dim,
            cfg.lstm_size,
            cfg.lstm_layers,
            cfg.lstm_dropout,
        );
        let attention = Linear::new(store, rng, "span.attention", lstm.output_dim(), 1, true);
        let width_embedding = store.add(
            "span.width",
            uniform(rng, WIDTH_BUCKETS, cfg.width_feature_size, 0.1),
        );
        Encoder {
            word_dim,
            unknown_word,
            chars: CharCnn { embedding, banks },
            mixture,
            contextual_size: cfg.contextual_size,
            char_dim: cfg.char_filters * cfg.char_filter_widths.len(),
            width_dim: cfg.width_feature_size,
            lstm,
            attention,
            width_embedding,
            lexical_dropout: cfg.lexical_dropout,
        }
    }


    pub fn token_dim(&self) -> usize {
        self.word_dim + self.char_dim + self.contextual_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.output_dim()
    }

    /// `[h_start; h_end; head; width]`
    pub fn span_dim(&self) -> usize {
        2 * self.hidden_dim() + self.token_dim() + self.width_dim
    }

    /// `n × d_in` token embeddings: `[word vector; char CNN; contextual mix]`,
    /// each source dropped as whole rows in training mode.
    pub fn embed_tokens(
        &self,
        g: &mut Graph,
        doc: &Document,
        sources: TokenSources,
        mode: &mut Mode,
    ) -> Result<Var, EncoderError> {
        let n = doc.len();
        let mut parts = Vec::new();

        if let Some(unk) = self.unknown_word {
            let words = sources
                .words
                .ok_or_else(|| EncoderError::Shape("model expects word vectors but none were loaded".into()))?;
            if words.dim() != self.word_dim {
                return Err(EncoderError::Shape(format!(
                    "word vectors have {} dims, model expects {}",
                    words.dim(),
                    self.word_dim
                )));
            }
            let mut known: Vec<f64> = Vec::new();
            let mut slot_of: HashMap<&str, usize> = HashMap::new();
            let mut rows = Vec::with_capacity(n);
            for t in &doc.tokens {
                match words.lookup(t) {
                    Some(v) => {
                        let next = slot_of.len();
                        let slot = *slot_of.entry(t.as_str()).or_insert_with(|| {
                            known.extend_from_slice(v);
                            next
                        });
                        rows.push(slot);
                    }
                    None => rows.push(usize::MAX),
                }
            }
            let k = slot_of.len();
            let unk = g.param(unk);
            let table = if k > 0 {
                let known = g.constant(Tensor::from_vec(k, self.word_dim, known));
                g.concat_rows(&[known, unk])
            } else {
                unk
            };
            let idx: Vec<usize> = rows.into_iter().map(|r| r.min(k)).collect();
            let w = g.gather_rows(table, &idx);
            parts.push(row_dropout(g, w, self.lexical_dropout, mode));
        }

        let emb = g.param(self.chars.embedding);
        let widest = self.chars.banks.iter().map(|b| b.0).max().unwrap_or(1);
        let ids: Arc<Vec<Vec<usize>>> = Arc::new(doc.tokens.iter().map(|t| char_ids(t, widest)).collect());
        let mut banks = Vec::new();
        for &(width, filters, bias) in &self.chars.banks {
            let (f, b) = (g.param(filters), g.param(bias));
            banks.push(g.char_conv(emb, f, b, ids.clone(), width));
        }
        let c = g.concat_cols(&banks);
        parts.push(row_dropout(g, c, self.lexical_dropout, mode));

        if let Some((weights, scale)) = self.mixture {
            let ctx = sources
                .contextual
                .ok_or_else(|| EncoderError::Shape("model expects contextual layers but none were given".into()))?;
            if ctx.num_tokens() != n {
                return Err(EncoderError::Alignment {
                    doc_id: doc.doc_id.clone(),
                    expected: n,
                    found: ctx.num_tokens(),
                });
            }
            let (w, s) = (g.param(weights), g.param(scale));
            let expected_layers = g.shape(w).1;
            if ctx.dim() != self.contextual_size || ctx.num_layers() != expected_layers {
                return Err(EncoderError::Shape(format!(
                    "contextual layers are {}×{}, model expects {}×{}",
                    ctx.num_layers(),
                    ctx.dim(),
                    expected_layers,
                    self.contextual_size
                )));
            }
            let m = g.scalar_mix(w, s, ctx.layers.clone());
            parts.push(row_dropout(g, m, self.lexical_dropout, mode));
        }
        Ok(g.concat_cols(&parts))
    }

    /// Runs the BiLSTM over each sentence separately and stacks the states.
    pub fn contextualize(&self, g: &mut Graph, tokens: Var, doc: &Document, mode: &mut Mode) -> Var {
        let states: Vec<Var> = (0..doc.num_sentences())
            .map(|s| {
                let (lo, hi) = doc.sentence_bounds(s);
                let idx: Vec<usize> = (lo..hi).collect();
                let x = g.gather_rows(tokens, &idx);
                self.lstm.forward(g, x, mode)
            })
            .collect();
        g.concat_rows(&states)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        doc: &Document,
        sources: TokenSources,
        mode: &mut Mode,
    ) -> Result<Encoded, EncoderError> {
        let tokens = self.embed_tokens(g, doc, sources, mode)?;
        let hidden = self.contextualize(g, tokens, doc, mode);
        let attention = self.attention.forward(g, hidden);
        Ok(Encoded {
            tokens,
            hidden,
            attention,
        })
    }

    /// One `span_dim` row per span.
    pub fn span_representations(&self, g: &mut Graph, enc: &Encoded, spans: &[Span]) -> Var {
        let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
        let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
        let buckets: Vec<usize> = spans.iter().map(|s| width_bucket(s.width())).collect();
        let bounds: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
        let hs = g.gather_rows(enc.hidden, &starts);
        let he = g.gather_rows(enc.hidden, &ends);
        let head = g.span_attention(enc.attention, enc.tokens, &bounds);
        let table = g.param(self.width_embedding);
        let width = g.gather_rows(table, &buckets);
        g.concat_cols(&[hs, he, head, width])
    }
}
