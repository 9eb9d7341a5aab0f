//! Pre-norm transformer encoder-decoder and encoder-classifier.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{randn, ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            model_dim: 128,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_len: 256,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.vocab_size < 5 {
            return bad("vocab_size must cover the four specials plus at least one word");
        }
        if self.model_dim == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return bad("model sizes must be positive");
        }
        if self.model_dim % self.n_heads != 0 {
            return bad("model_dim must be divisible by n_heads");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LnIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerIds {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerIds {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross: AttnIds,
    pub ln3: LnIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub tok: ParamId,
    pub pos: ParamId,
    pub layers: Vec<EncLayerIds>,
    pub ln_f: LnIds,
}

#[derive(Debug, Clone)]
pub struct Seq2SeqIds {
    pub enc: EncoderIds,
    pub dec_pos: ParamId,
    pub dec_layers: Vec<DecLayerIds>,
    pub dec_ln_f: LnIds,
    pub lm_w: ParamId,
    pub lm_b: ParamId,
    /// Per-token classifier head over the vocabulary (joint decoder-classifier models).
    pub cls: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct ClassifierIds {
    pub enc: EncoderIds,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Either creates parameters (fresh model) or resolves them by name (loaded checkpoint).
struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: Option<ChaCha8Rng>,
}

impl Builder<'_> {
    fn mat(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId, NnError> {
        match &mut self.rng {
            Some(rng) => {
                let v = match init {
                    Init::Normal(std) => randn(rng, rows, cols, std),
                    Init::Zeros => Array2::zeros((rows, cols)),
                    Init::Ones => Array2::ones((rows, cols)),
                };
                Ok(self.store.add(name, v))
            }
            None => {
                let id = self
                    .store
                    .id(name)
                    .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {name}")))?;
                let shape = self.store.get(id).dim();
                if shape != (rows, cols) {
                    return Err(NnError::Checkpoint(format!(
                        "parameter {name} has shape {shape:?}, expected {:?}",
                        (rows, cols)
                    )));
                }
                Ok(id)
            }
        }
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Result<LnIds, NnError> {
        Ok(LnIds {
            gain: self.mat(&format!("{prefix}.gain"), 1, d, Init::Ones)?,
            bias: self.mat(&format!("{prefix}.bias"), 1, d, Init::Zeros)?,
        })
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Result<AttnIds, NnError> {
        let std = 1.0 / (d as f64).sqrt();
        Ok(AttnIds {
            wq: self.mat(&format!("{prefix}.wq"), d, d, Init::Normal(std))?,
            bq: self.mat(&format!("{prefix}.bq"), 1, d, Init::Zeros)?,
            wk: self.mat(&format!("{prefix}.wk"), d, d, Init::Normal(std))?,
            bk: self.mat(&format!("{prefix}.bk"), 1, d, Init::Zeros)?,
            wv: self.mat(&format!("{prefix}.wv"), d, d, Init::Normal(std))?,
            bv: self.mat(&format!("{prefix}.bv"), 1, d, Init::Zeros)?,
            wo: self.mat(&format!("{prefix}.wo"), d, d, Init::Normal(std))?,
            bo: self.mat(&format!("{prefix}.bo"), 1, d, Init::Zeros)?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<FfnIds, NnError> {
        Ok(FfnIds {
            w1: self.mat(&format!("{prefix}.w1"), d, f, Init::Normal(1.0 / (d as f64).sqrt()))?,
            b1: self.mat(&format!("{prefix}.b1"), 1, f, Init::Zeros)?,
            w2: self.mat(&format!("{prefix}.w2"), f, d, Init::Normal(1.0 / (f as f64).sqrt()))?,
            b2: self.mat(&format!("{prefix}.b2"), 1, d, Init::Zeros)?,
        })
    }

    fn encoder(&mut self, cfg: &ModelConfig) -> Result<EncoderIds, NnError> {
        let d = cfg.model_dim;
        let tok = self.mat("tok_emb", cfg.vocab_size, d, Init::Normal(0.5))?;
        let pos = self.mat("enc.pos", cfg.max_len, d, Init::Normal(0.1))?;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                Ok(EncLayerIds {
                    ln1: self.ln(&format!("enc.{l}.ln1"), d)?,
                    attn: self.attn(&format!("enc.{l}.attn"), d)?,
                    ln2: self.ln(&format!("enc.{l}.ln2"), d)?,
                    ffn: self.ffn(&format!("enc.{l}.ffn"), d, cfg.ffn_dim)?,
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        let ln_f = self.ln("enc.ln_f", d)?;
        Ok(EncoderIds {
            tok,
            pos,
            layers,
            ln_f,
        })
    }

    fn seq2seq(&mut self, cfg: &ModelConfig, class_head: bool) -> Result<Seq2SeqIds, NnError> {
        let d = cfg.model_dim;
        let enc = self.encoder(cfg)?;
        let dec_pos = self.mat("dec.pos", cfg.max_len, d, Init::Normal(0.1))?;
        let dec_layers = (0..cfg.n_layers)
            .map(|l| {
                Ok(DecLayerIds {
                    ln1: self.ln(&format!("dec.{l}.ln1"), d)?,
                    self_attn: self.attn(&format!("dec.{l}.self"), d)?,
                    ln2: self.ln(&format!("dec.{l}.ln2"), d)?,
                    cross: self.attn(&format!("dec.{l}.cross"), d)?,
                    ln3: self.ln(&format!("dec.{l}.ln3"), d)?,
                    ffn: self.ffn(&format!("dec.{l}.ffn"), d, cfg.ffn_dim)?,
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        let dec_ln_f = self.ln("dec.ln_f", d)?;
        let lm_w = self.mat("lm.w", d, cfg.vocab_size, Init::Normal(1.0 / (d as f64).sqrt()))?;
        let lm_b = self.mat("lm.b", 1, cfg.vocab_size, Init::Zeros)?;
        let cls = if class_head {
            Some((
                self.mat("cls.w", d, cfg.vocab_size, Init::Zeros)?,
                self.mat("cls.b", 1, cfg.vocab_size, Init::Zeros)?,
            ))
        } else {
            None
        };
        Ok(Seq2SeqIds {
            enc,
            dec_pos,
            dec_layers,
            dec_ln_f,
            lm_w,
            lm_b,
            cls,
        })
    }
}

/// Encoder-decoder generator with an LM head and an optional per-token classifier head.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub ids: Seq2SeqIds,
}

/// Transformer encoder with a scalar sigmoid head over mean-pooled final states.
#[derive(Debug, Clone)]
pub struct EncoderClassifier {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub ids: ClassifierIds,
}

impl Seq2SeqModel {
    pub fn new(cfg: ModelConfig, seed: u64, class_head: bool) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let ids = Builder {
            store: &mut params,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
        .seq2seq(&cfg, class_head)?;
        Ok(Seq2SeqModel { cfg, params, ids })
    }

    /// Rebinds a model to an existing parameter store (e.g. from a checkpoint).
    pub fn from_params(cfg: ModelConfig, mut params: ParamStore) -> Result<Self, NnError> {
        cfg.validate()?;
        let class_head = params.id("cls.w").is_some();
        let ids = Builder {
            store: &mut params,
            rng: None,
        }
        .seq2seq(&cfg, class_head)?;
        Ok(Seq2SeqModel { cfg, params, ids })
    }

    pub fn has_class_head(&self) -> bool {
        self.ids.cls.is_some()
    }

    /// Adds a zero-initialized classifier head if absent.
    pub fn with_class_head(mut self) -> Self {
        if self.ids.cls.is_none() {
            let d = self.cfg.model_dim;
            let v = self.cfg.vocab_size;
            let w = self.params.add("cls.w", Array2::zeros((d, v)));
            let b = self.params.add("cls.b", Array2::zeros((1, v)));
            self.ids.cls = Some((w, b));
        }
        self
    }

    /// Zeroes the LM head so that every next-token distribution is uniform.
    pub fn force_uniform_output(&mut self) {
        self.params.get_mut(self.ids.lm_w).fill(0.0);
        self.params.get_mut(self.ids.lm_b).fill(0.0);
    }

    pub fn check_source(&self, src: &[usize]) -> Result<(), NnError> {
        if src.is_empty() {
            return Err(NnError::EmptyInput);
        }
        if src.len() > self.cfg.max_len {
            return Err(NnError::TooLong {
                len: src.len(),
                max: self.cfg.max_len,
            });
        }
        check_ids(src, self.cfg.vocab_size)
    }

    /// Target tokens exclude `<bos>`/`<eos>`; one extra position is needed for `<eos>`.
    pub fn check_target(&self, tgt: &[usize]) -> Result<(), NnError> {
        if tgt.len() + 1 > self.cfg.max_len {
            return Err(NnError::TooLong {
                len: tgt.len() + 1,
                max: self.cfg.max_len,
            });
        }
        check_ids(tgt, self.cfg.vocab_size)
    }

    pub fn arch(&self) -> Seq2SeqArch {
        Seq2SeqArch {
            cfg: self.cfg.clone(),
            ids: self.ids.clone(),
        }
    }

    /// Teacher-forced output targets `[tgt..., <eos>]`.
    pub fn shifted_targets(tgt: &[usize]) -> Vec<usize> {
        let mut out = tgt.to_vec();
        out.push(crate::vocab::EOS_ID);
        out
    }
}

impl EncoderClassifier {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let ids = Self::build(&mut b, &cfg)?;
        Ok(EncoderClassifier { cfg, params, ids })
    }

    pub fn from_params(cfg: ModelConfig, mut params: ParamStore) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut b = Builder {
            store: &mut params,
            rng: None,
        };
        let ids = Self::build(&mut b, &cfg)?;
        Ok(EncoderClassifier { cfg, params, ids })
    }

    fn build(b: &mut Builder, cfg: &ModelConfig) -> Result<ClassifierIds, NnError> {
        let enc = b.encoder(cfg)?;
        let head_w = b.mat("head.w", cfg.model_dim, 1, Init::Zeros)?;
        let head_b = b.mat("head.b", 1, 1, Init::Zeros)?;
        Ok(ClassifierIds {
            enc,
            head_w,
            head_b,
        })
    }

    pub fn check_input(&self, ids: &[usize]) -> Result<(), NnError> {
        if ids.is_empty() {
            return Err(NnError::EmptyInput);
        }
        if ids.len() > self.cfg.max_len {
            return Err(NnError::TooLong {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        check_ids(ids, self.cfg.vocab_size)
    }

    pub fn arch(&self) -> ClassifierArch {
        ClassifierArch {
            cfg: self.cfg.clone(),
            ids: self.ids.clone(),
        }
    }
}

/// Architecture (config + parameter ids) of a [`Seq2SeqModel`], detached from its
/// parameter values so that graphs can be built against any compatible store.
#[derive(Debug, Clone)]
pub struct Seq2SeqArch {
    pub cfg: ModelConfig,
    pub ids: Seq2SeqIds,
}

impl Seq2SeqArch {
    /// Final decoder states (T×d) for teacher-forced input `[<bos>, tgt...]`.
    pub fn decoder_states(
        &self,
        tape: &mut Tape,
        src: &[usize],
        tgt: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> NodeId {
        let mut drop = Dropout::new(self.cfg.dropout, dropout);
        let enc = encode(tape, &self.cfg, &self.ids.enc, src, &mut drop);
        let mut dec_in = Vec::with_capacity(tgt.len() + 1);
        dec_in.push(crate::vocab::BOS_ID);
        dec_in.extend_from_slice(tgt);
        let positions: Vec<usize> = (0..dec_in.len()).collect();
        let e = tape.gather(self.ids.enc.tok, &dec_in);
        let p = tape.gather(self.ids.dec_pos, &positions);
        let mut x = tape.add(e, p);
        x = drop.apply(tape, x);
        for layer in &self.ids.dec_layers {
            let h = layer_norm(tape, x, layer.ln1);
            let a = attention(tape, &self.cfg, h, h, &layer.self_attn, true);
            let a = drop.apply(tape, a);
            x = tape.add(x, a);
            let h = layer_norm(tape, x, layer.ln2);
            let c = attention(tape, &self.cfg, h, enc, &layer.cross, false);
            let c = drop.apply(tape, c);
            x = tape.add(x, c);
            let h = layer_norm(tape, x, layer.ln3);
            let f = ffn(tape, h, &layer.ffn);
            let f = drop.apply(tape, f);
            x = tape.add(x, f);
        }
        layer_norm(tape, x, self.ids.dec_ln_f)
    }

    pub fn lm_logits(&self, tape: &mut Tape, states: NodeId) -> NodeId {
        linear(tape, states, self.ids.lm_w, self.ids.lm_b)
    }

    /// Per-token classifier logits (T×V). Panics without a classifier head.
    pub fn cls_logits(&self, tape: &mut Tape, states: NodeId) -> NodeId {
        let (w, b) = self.ids.cls.expect("model has no classifier head");
        linear(tape, states, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierArch {
    pub cfg: ModelConfig,
    pub ids: ClassifierIds,
}

impl ClassifierArch {
    /// The 1×1 logit node for one input sequence.
    pub fn logit(&self, tape: &mut Tape, input: &[usize], dropout: Option<&mut ChaCha8Rng>) -> NodeId {
        let mut drop = Dropout::new(self.cfg.dropout, dropout);
        let enc = encode(tape, &self.cfg, &self.ids.enc, input, &mut drop);
        let pooled = tape.mean_rows(enc);
        linear(tape, pooled, self.ids.head_w, self.ids.head_b)
    }
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<(), NnError> {
    match ids.iter().find(|&&i| i >= vocab) {
        Some(&id) => Err(NnError::OutOfVocab { id, vocab }),
        None => Ok(()),
    }
}

/// Optional dropout applied to residual branches during training.
pub(crate) struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub(crate) fn new(p: f64, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Dropout { p, rng }
    }

    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self.rng.as_deref_mut() {
            Some(rng) if self.p > 0.0 => {
                let keep = 1.0 / (1.0 - self.p);
                let p = self.p;
                let mask = Array2::from_shape_simple_fn(tape.value(x).raw_dim(), || {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                tape.dropout(x, mask)
            }
            _ => x,
        }
    }
}

fn linear(tape: &mut Tape, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
    let wn = tape.param(w);
    let bn = tape.param(b);
    let y = tape.matmul(x, wn);
    tape.add_row(y, bn)
}

fn layer_norm(tape: &mut Tape, x: NodeId, ids: LnIds) -> NodeId {
    let g = tape.param(ids.gain);
    let b = tape.param(ids.bias);
    tape.layer_norm(x, g, b)
}

fn ffn(tape: &mut Tape, x: NodeId, ids: &FfnIds) -> NodeId {
    let h = linear(tape, x, ids.w1, ids.b1);
    let h = tape.gelu(h);
    linear(tape, h, ids.w2, ids.b2)
}

fn attention(
    tape: &mut Tape,
    cfg: &ModelConfig,
    query_in: NodeId,
    kv_in: NodeId,
    ids: &AttnIds,
    causal: bool,
) -> NodeId {
    let dh = cfg.head_dim();
    let q = linear(tape, query_in, ids.wq, ids.bq);
    let k = linear(tape, kv_in, ids.wk, ids.bk);
    let v = linear(tape, kv_in, ids.wv, ids.bv);
    let scale = 1.0 / (dh as f64).sqrt();
    let heads: Vec<NodeId> = (0..cfg.n_heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let a = tape.softmax(scores, causal);
            tape.matmul(a, vh)
        })
        .collect();
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    };
    linear(tape, cat, ids.wo, ids.bo)
}

/// Encoder final states (S×d).
pub(crate) fn encode(
    tape: &mut Tape,
    cfg: &ModelConfig,
    ids: &EncoderIds,
    src: &[usize],
    drop: &mut Dropout,
) -> NodeId {
    let positions: Vec<usize> = (0..src.len()).collect();
    let e = tape.gather(ids.tok, src);
    let p = tape.gather(ids.pos, &positions);
    let mut x = tape.add(e, p);
    x = drop.apply(tape, x);
    for layer in &ids.layers {
        let h = layer_norm(tape, x, layer.ln1);
        let a = attention(tape, cfg, h, h, &layer.attn, false);
        let a = drop.apply(tape, a);
        x = tape.add(x, a);
        let h = layer_norm(tape, x, layer.ln2);
        let f = ffn(tape, h, &layer.ffn);
        let f = drop.apply(tape, f);
        x = tape.add(x, f);
    }
    layer_norm(tape, x, ids.ln_f)
}
