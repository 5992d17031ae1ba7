//! Transformer encoder-decoder for comment generation with three ways of
//! fusing the code-token and AST-label sequences:
//!
//! * `jointly`: separate code and AST encoders, outputs stacked along the
//!   sequence axis, then a per-position `tanh(x W_f + b_f)`;
//! * `shared`: one encoder applied to both sequences, then the same fusion;
//! * `single`: one encoder over `code ++ [SEP] ++ ast`, no fusion layer.
//!
//! Layers are post-norm: `LN(x + Sublayer(x))`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{batch_gradients, teacher_forced, train_step, Example, ForcedEval};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{PAD, SEP};
use crate::tensor::{Graph, Prng, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} length {len} exceeds the configured maximum {max}")]
    LengthExceeded { what: &'static str, len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Jointly,
    Shared,
    Single,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Jointly => "jointly",
            FusionMode::Shared => "shared",
            FusionMode::Single => "single",
        })
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jointly" => Ok(FusionMode::Jointly),
            "shared" => Ok(FusionMode::Shared),
            "single" => Ok(FusionMode::Single),
            other => Err(format!("unknown fusion mode {other:?} (expected jointly, shared or single)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_code_len: usize,
    pub max_ast_len: usize,
    pub max_comment_len: usize,
    pub vocab_size: usize,
    pub fusion: FusionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            heads: 4,
            layers: 2,
            d_ff: 512,
            dropout: 0.1,
            max_code_len: 200,
            max_ast_len: 200,
            max_comment_len: 30,
            vocab_size: 8192,
            fusion: FusionMode::Single,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Small configuration for toy corpora and CPU smoke runs.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            layers: 1,
            d_ff: 128,
            dropout: 0.0,
            max_code_len: 64,
            max_ast_len: 64,
            max_comment_len: 32,
            vocab_size,
            ..ModelConfig::default()
        }
    }

    pub fn with_fusion(self, fusion: FusionMode) -> Self {
        ModelConfig { fusion, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by the number of heads");
        }
        if self.max_code_len == 0 || self.max_ast_len == 0 || self.max_comment_len == 0 {
            return bad("maximum lengths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Closed-form parameter total.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let attention = 3 * d * d + d * d; // per-head Q/K/V blocks sum to d×d each, plus W^O
        let ffn = d * self.d_ff + self.d_ff + self.d_ff * d + d;
        let norm = 2 * d;
        let enc_layer = attention + ffn + 2 * norm;
        let dec_layer = 2 * attention + ffn + 3 * norm;
        let enc_positions: usize = match self.fusion {
            FusionMode::Jointly => self.max_code_len + self.max_ast_len,
            FusionMode::Shared => self.max_code_len.max(self.max_ast_len),
            FusionMode::Single => self.max_code_len + 1 + self.max_ast_len,
        };
        let stacks = if self.fusion == FusionMode::Jointly { 2 } else { 1 };
        let fusion = if self.fusion == FusionMode::Single { 0 } else { d * d + d };
        self.vocab_size * d
            + enc_positions * d
            + stacks * self.layers * enc_layer
            + fusion
            + self.max_comment_len * d
            + self.layers * dec_layer
            + d * self.vocab_size
            + self.vocab_size
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Arc<Tensor>>,
}

impl ParamStore {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub wo: usize,
}

#[derive(Debug, Clone)]
struct FfnParams {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormParams {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: AttnParams,
    norm1: NormParams,
    ffn: FfnParams,
    norm2: NormParams,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: AttnParams,
    norm1: NormParams,
    cross_attn: AttnParams,
    norm2: NormParams,
    ffn: FfnParams,
    norm3: NormParams,
}

#[derive(Debug, Clone)]
struct EncoderStack {
    pos: usize,
    layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    encoders: Vec<EncoderStack>,
    fusion: Option<(usize, usize)>,
    dec_pos: usize,
    decoder: Vec<DecoderLayer>,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
pub struct ComFormerModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Builds the parameter layout, drawing initial values in creation order from
/// one generator seeded with `config.seed`. Weight matrices use Glorot
/// uniform bounds, embeddings `U(-0.1, 0.1)`, biases zero and norm gains one.
struct Builder {
    store: ParamStore,
    rng: Prng,
}

impl Builder {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::uniform(&[rows, cols], bound, &mut self.rng);
        self.store.add(name, t)
    }

    fn embedding(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let t = Tensor::uniform(&[rows, cols], 0.1, &mut self.rng);
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, n: usize) -> usize {
        self.store.add(name, Tensor::zeros(&[n]))
    }
}

impl ComFormerModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let dk = config.head_dim();
        let mut b = Builder { store: ParamStore::default(), rng: Prng::new(config.seed) };

        let attn = |b: &mut Builder, prefix: &str| {
            let mut p = AttnParams { wq: Vec::new(), wk: Vec::new(), wv: Vec::new(), wo: 0 };
            for h in 0..config.heads {
                p.wq.push(b.matrix(format!("{prefix}.head{h}.wq"), d, dk));
                p.wk.push(b.matrix(format!("{prefix}.head{h}.wk"), d, dk));
                p.wv.push(b.matrix(format!("{prefix}.head{h}.wv"), d, dk));
            }
            p.wo = b.matrix(format!("{prefix}.wo"), d, d);
            p
        };
        let ffn = |b: &mut Builder, prefix: &str| FfnParams {
            w1: b.matrix(format!("{prefix}.w1"), d, config.d_ff),
            b1: b.zeros(format!("{prefix}.b1"), config.d_ff),
            w2: b.matrix(format!("{prefix}.w2"), config.d_ff, d),
            b2: b.zeros(format!("{prefix}.b2"), d),
        };
        let norm = |b: &mut Builder, prefix: &str| NormParams {
            gain: b.store.add(format!("{prefix}.gain"), Tensor::filled(&[d], 1.0)),
            bias: b.zeros(format!("{prefix}.bias"), d),
        };

        let embed = b.embedding("embed".into(), config.vocab_size, d);
        let positions: Vec<(&str, usize)> = match config.fusion {
            FusionMode::Jointly => vec![("code_encoder", config.max_code_len), ("ast_encoder", config.max_ast_len)],
            FusionMode::Shared => vec![("encoder", config.max_code_len.max(config.max_ast_len))],
            FusionMode::Single => vec![("encoder", config.max_code_len + 1 + config.max_ast_len)],
        };
        let mut encoders = Vec::new();
        for (name, len) in positions {
            let pos = b.embedding(format!("{name}.pos"), len, d);
            let layers = (0..config.layers)
                .map(|l| {
                    let prefix = format!("{name}.layer{l}");
                    EncoderLayer {
                        attn: attn(&mut b, &format!("{prefix}.attn")),
                        norm1: norm(&mut b, &format!("{prefix}.norm1")),
                        ffn: ffn(&mut b, &format!("{prefix}.ffn")),
                        norm2: norm(&mut b, &format!("{prefix}.norm2")),
                    }
                })
                .collect();
            encoders.push(EncoderStack { pos, layers });
        }
        let fusion = (config.fusion != FusionMode::Single).then(|| (b.matrix("fusion.w".into(), d, d), b.zeros("fusion.b".into(), d)));
        let dec_pos = b.embedding("decoder.pos".into(), config.max_comment_len, d);
        let decoder = (0..config.layers)
            .map(|l| {
                let prefix = format!("decoder.layer{l}");
                DecoderLayer {
                    self_attn: attn(&mut b, &format!("{prefix}.self_attn")),
                    norm1: norm(&mut b, &format!("{prefix}.norm1")),
                    cross_attn: attn(&mut b, &format!("{prefix}.cross_attn")),
                    norm2: norm(&mut b, &format!("{prefix}.norm2")),
                    ffn: ffn(&mut b, &format!("{prefix}.ffn")),
                    norm3: norm(&mut b, &format!("{prefix}.norm3")),
                }
            })
            .collect();
        let out_w = b.matrix("output.w".into(), d, config.vocab_size);
        let out_b = b.zeros("output.b".into(), config.vocab_size);

        let layout = Layout { embed, encoders, fusion, dec_pos, decoder, out_w, out_b };
        Ok(ComFormerModel { config, params: b.store, layout })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total()
    }

    pub fn encoder_count(&self) -> usize {
        self.layout.encoders.len()
    }

    /// Attention parameters of the first encoder layer, for direct testing.
    pub fn first_encoder_attention(&self) -> &AttnParams {
        &self.layout.encoders[0].layers[0].attn
    }

    /// Replaces parameter values; shapes must match the current layout.
    pub fn set_params(&mut self, tensors: Vec<Tensor>) -> Result<(), ModelError> {
        if tensors.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, got {}", self.params.len(), tensors.len())));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape != self.params.tensors[i].shape {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.params.names[i], t.shape, self.params.tensors[i].shape
                )));
            }
        }
        self.params.tensors = tensors.into_iter().map(Arc::new).collect();
        Ok(())
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(ModelError::TokenOutOfRange { id, vocab: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    // ---- convenience entry points on an inference graph ----

    /// Context vectors of one encoder stack (the first, i.e. the code
    /// encoder under `jointly`). `valid[i] == false` marks padding.
    pub fn encoder_forward(&self, ids: &[u32], valid: &[bool]) -> Result<Tensor, ModelError> {
        let mut s = Session::eval(self);
        let out = s.encode_stack(0, ids, valid)?;
        Ok(s.graph.value(out).clone())
    }

    pub fn fuse_encode(&self, code_ids: &[u32], ast_ids: &[u32]) -> Result<Context, ModelError> {
        let mut s = Session::eval(self);
        let (ctx, valid) = s.fuse(code_ids, ast_ids)?;
        Ok(Context { states: s.graph.value(ctx).clone(), valid })
    }

    /// `[t × vocab]` logits for every prefix position.
    pub fn decoder_forward(&self, context: &Context, prefix: &[u32]) -> Result<Tensor, ModelError> {
        let mut s = Session::eval(self);
        let ctx = s.graph.constant(context.states.clone());
        let logits = s.decode(ctx, &context.valid, prefix)?;
        Ok(s.graph.value(logits).clone())
    }
}

/// Encoder output handed to the decoder: states plus the key mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub states: Tensor,
    pub valid: Vec<bool>,
}

/// One forward (and optionally backward) pass over the model's parameters.
pub struct Session<'m> {
    pub model: &'m ComFormerModel,
    pub graph: Graph,
    pub vars: Vec<Var>,
    dropout: f64,
    rng: Prng,
}

impl<'m> Session<'m> {
    pub fn eval(model: &'m ComFormerModel) -> Self {
        Self::build(model, Graph::inference(), 0.0, Prng::new(0))
    }

    pub fn train(model: &'m ComFormerModel, rng: Prng) -> Self {
        Self::build(model, Graph::new(), model.config.dropout, rng)
    }

    /// Gradient-recording session without dropout, for exact checks.
    pub fn grad(model: &'m ComFormerModel) -> Self {
        Self::build(model, Graph::new(), 0.0, Prng::new(0))
    }

    /// Session over an existing graph whose `vars` are this model's
    /// parameters in store order. Dropout is off.
    pub fn with_graph(model: &'m ComFormerModel, graph: Graph, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), model.params.len(), "one var per parameter");
        Session { model, graph, vars, dropout: 0.0, rng: Prng::new(0) }
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    fn build(model: &'m ComFormerModel, mut graph: Graph, dropout: f64, rng: Prng) -> Self {
        let vars = model.params.tensors.iter().map(|t| graph.param_shared(Arc::clone(t))).collect();
        Session { model, graph, vars, dropout, rng }
    }

    fn p(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    fn drop(&mut self, x: Var) -> Var {
        self.graph.dropout(x, self.dropout, &mut self.rng)
    }

    fn linear(&mut self, x: Var, w: usize, b: Option<usize>) -> Var {
        let y = self.graph.matmul(x, self.p(w));
        match b {
            Some(b) => self.graph.add_bias(y, self.p(b)),
            None => y,
        }
    }

    /// Per-head projections, scaled dot-product attention, concatenation and
    /// the output projection.
    pub fn multi_head_attention(&mut self, p: &AttnParams, q_in: Var, k_in: Var, v_in: Var, mask: Option<&[bool]>) -> Result<Var, ModelError> {
        let mut heads = Vec::with_capacity(p.wq.len());
        for h in 0..p.wq.len() {
            let q = self.linear(q_in, p.wq[h], None);
            let k = self.linear(k_in, p.wk[h], None);
            let v = self.linear(v_in, p.wv[h], None);
            heads.push(self.graph.attention(q, k, v, mask)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { self.graph.concat_cols(&heads) };
        Ok(self.linear(cat, p.wo, None))
    }

    fn ffn(&mut self, p: &FfnParams, x: Var) -> Var {
        let h = self.linear(x, p.w1, Some(p.b1));
        let h = self.graph.relu(h);
        self.linear(h, p.w2, Some(p.b2))
    }

    fn add_norm(&mut self, x: Var, sub: Var, n: NormParams) -> Var {
        let sub = self.drop(sub);
        let sum = self.graph.add(x, sub);
        self.graph.layer_norm(sum, self.p(n.gain), self.p(n.bias))
    }

    fn embed(&mut self, ids: &[u32], pos_table: usize) -> Result<Var, ModelError> {
        self.model.check_ids(ids)?;
        let max = self.graph.value(self.p(pos_table)).rows();
        if ids.len() > max {
            return Err(ModelError::LengthExceeded { what: "sequence", len: ids.len(), max });
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = self.graph.gather(self.p(self.model.layout.embed), &idx);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = self.graph.gather(self.p(pos_table), &positions);
        let x = self.graph.add(tok, pos);
        Ok(self.drop(x))
    }

    /// Key mask for `rows` queries over keys flagged by `valid`; `None` when
    /// nothing is masked.
    fn key_mask(rows: usize, valid: &[bool]) -> Option<Vec<bool>> {
        if valid.iter().all(|&v| v) {
            return None;
        }
        Some((0..rows).flat_map(|_| valid.iter().copied()).collect())
    }

    pub fn encode_stack(&mut self, stack: usize, ids: &[u32], valid: &[bool]) -> Result<Var, ModelError> {
        assert_eq!(ids.len(), valid.len(), "one validity flag per token");
        let enc = self.model.layout.encoders[stack].clone();
        let mut x = self.embed(ids, enc.pos)?;
        let mask = Self::key_mask(ids.len(), valid);
        for layer in &enc.layers {
            let a = self.multi_head_attention(&layer.attn, x, x, x, mask.as_deref())?;
            x = self.add_norm(x, a, layer.norm1);
            let f = self.ffn(&layer.ffn, x);
            x = self.add_norm(x, f, layer.norm2);
        }
        Ok(x)
    }

    /// Encodes both views and fuses them per the configured mode. PAD ids are
    /// masked out as keys. Returns the context and its key-validity flags.
    pub fn fuse(&mut self, code_ids: &[u32], ast_ids: &[u32]) -> Result<(Var, Vec<bool>), ModelError> {
        let cfg = &self.model.config;
        if code_ids.len() > cfg.max_code_len {
            return Err(ModelError::LengthExceeded { what: "code", len: code_ids.len(), max: cfg.max_code_len });
        }
        if ast_ids.len() > cfg.max_ast_len {
            return Err(ModelError::LengthExceeded { what: "ast", len: ast_ids.len(), max: cfg.max_ast_len });
        }
        let code_valid: Vec<bool> = code_ids.iter().map(|&i| i != PAD).collect();
        let ast_valid: Vec<bool> = ast_ids.iter().map(|&i| i != PAD).collect();
        let mut valid = code_valid.clone();
        match cfg.fusion {
            FusionMode::Single => {
                let mut ids = code_ids.to_vec();
                ids.push(SEP);
                ids.extend_from_slice(ast_ids);
                valid.push(true);
                valid.extend_from_slice(&ast_valid);
                let ctx = self.encode_stack(0, &ids, &valid)?;
                Ok((ctx, valid))
            }
            mode => {
                let ast_stack = if mode == FusionMode::Jointly { 1 } else { 0 };
                let code = self.encode_stack(0, code_ids, &code_valid)?;
                let ast = self.encode_stack(ast_stack, ast_ids, &ast_valid)?;
                valid.extend_from_slice(&ast_valid);
                let cat = self.graph.concat_rows(&[code, ast]);
                let (w, b) = self.model.layout.fusion.expect("fusion layer present outside single mode");
                let lin = self.linear(cat, w, Some(b));
                Ok((self.graph.tanh(lin), valid))
            }
        }
    }

    /// Logits for each position of `prefix` given the encoder context.
    pub fn decode(&mut self, ctx: Var, ctx_valid: &[bool], prefix: &[u32]) -> Result<Var, ModelError> {
        let max = self.model.config.max_comment_len;
        if prefix.len() > max {
            return Err(ModelError::LengthExceeded { what: "comment", len: prefix.len(), max });
        }
        let layout = self.model.layout.clone();
        let t = prefix.len();
        let mut x = self.embed(prefix, layout.dec_pos)?;
        let causal: Vec<bool> = (0..t).flat_map(|i| (0..t).map(move |j| j <= i)).collect();
        let cross = Self::key_mask(t, ctx_valid);
        for layer in &layout.decoder {
            let a = self.multi_head_attention(&layer.self_attn, x, x, x, Some(&causal))?;
            x = self.add_norm(x, a, layer.norm1);
            let c = self.multi_head_attention(&layer.cross_attn, x, ctx, ctx, cross.as_deref())?;
            x = self.add_norm(x, c, layer.norm2);
            let f = self.ffn(&layer.ffn, x);
            x = self.add_norm(x, f, layer.norm3);
        }
        Ok(self.linear(x, layout.out_w, Some(layout.out_b)))
    }

    /// Teacher-forced mean cross-entropy of one example (PAD targets ignored).
    pub fn example_loss(&mut self, code_ids: &[u32], ast_ids: &[u32], comment_ids: &[u32]) -> Result<Var, ModelError> {
        let (ctx, valid) = self.fuse(code_ids, ast_ids)?;
        let n = comment_ids.len();
        if n < 2 {
            return Err(ModelError::LengthExceeded { what: "comment (need SOS and at least one target)", len: n, max: 2 });
        }
        let logits = self.decode(ctx, &valid, &comment_ids[..n - 1])?;
        Ok(self.graph.cross_entropy(logits, &comment_ids[1..], PAD))
    }

    /// Parameter gradients after a backward pass, zero-filled where none flowed.
    pub fn param_grads(&mut self) -> Vec<Vec<f64>> {
        let vars = self.vars.clone();
        vars.iter().zip(&self.model.params.tensors).map(|(&v, t)| self.graph.take_grad(v).unwrap_or_else(|| vec![0.0; t.numel()])).collect()
    }
}
