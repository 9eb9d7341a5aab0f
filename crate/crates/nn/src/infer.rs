//! Tape-free forward passes for inference: full encoder passes and incremental
//! decoding with key/value caches over a batch of hypotheses sharing one source.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::model::{AttnIds, EncoderClassifier, EncoderIds, FfnIds, LnIds, ModelConfig, Seq2SeqModel};
use crate::params::{ParamId, ParamStore};
use crate::tape::{gelu_inplace, normalize_rows, sigmoid, softmax_rows};
use crate::NnError;

fn linear(p: &ParamStore, x: &Array2<f64>, w: ParamId, b: ParamId) -> Array2<f64> {
    x.dot(p.get(w)) + p.get(b)
}

fn layer_norm(p: &ParamStore, x: &Array2<f64>, ids: LnIds) -> Array2<f64> {
    let mut y = x.clone();
    normalize_rows(&mut y);
    y * p.get(ids.gain) + p.get(ids.bias)
}

fn ffn(p: &ParamStore, x: &Array2<f64>, ids: &FfnIds) -> Array2<f64> {
    let mut h = linear(p, x, ids.w1, ids.b1);
    gelu_inplace(&mut h);
    linear(p, &h, ids.w2, ids.b2)
}

/// Multi-head attention over complete sequences.
fn attention_full(
    p: &ParamStore,
    cfg: &ModelConfig,
    query_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    ids: &AttnIds,
) -> Array2<f64> {
    let q = linear(p, query_in, ids.wq, ids.bq);
    let k = linear(p, kv_in, ids.wk, ids.bk);
    let v = linear(p, kv_in, ids.wv, ids.bv);
    attend(cfg, &q, &k, &v, p, ids)
}

fn attend(
    cfg: &ModelConfig,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    p: &ParamStore,
    ids: &AttnIds,
) -> Array2<f64> {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), cfg.model_dim));
    for h in 0..cfg.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
    }
    linear(p, &out, ids.wo, ids.bo)
}

/// Encoder final states (S×d) without recording gradients.
pub fn encoder_states(
    p: &ParamStore,
    cfg: &ModelConfig,
    ids: &EncoderIds,
    src: &[usize],
) -> Array2<f64> {
    let tok = p.get(ids.tok);
    let pos = p.get(ids.pos);
    let mut x = Array2::zeros((src.len(), cfg.model_dim));
    for (i, &t) in src.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&tok.row(t));
        row += &pos.row(i);
    }
    for layer in &ids.layers {
        let h = layer_norm(p, &x, layer.ln1);
        x += &attention_full(p, cfg, &h, &h, &layer.attn);
        let h = layer_norm(p, &x, layer.ln2);
        x += &ffn(p, &h, &layer.ffn);
    }
    layer_norm(p, &x, ids.ln_f)
}

impl EncoderClassifier {
    /// Probability that the input belongs to the positive class.
    pub fn prob(&self, input: &[usize]) -> Result<f64, NnError> {
        self.check_input(input)?;
        Ok(sigmoid(self.logit_value(input)))
    }

    pub fn logit_value(&self, input: &[usize]) -> f64 {
        let states = encoder_states(&self.params, &self.cfg, &self.ids.enc, input);
        let pooled = states.mean_axis(Axis(0)).expect("nonempty input");
        pooled.dot(&self.params.get(self.ids.head_w).column(0))
            + self.params.get(self.ids.head_b)[[0, 0]]
    }

    /// Mean-pooled final encoder states.
    pub fn pooled(&self, input: &[usize]) -> Array1<f64> {
        encoder_states(&self.params, &self.cfg, &self.ids.enc, input)
            .mean_axis(Axis(0))
            .expect("nonempty input")
    }
}

/// Encoder output plus per-layer cross-attention keys and values.
pub struct EncodedSource {
    pub states: Array2<f64>,
    cross_k: Vec<Array2<f64>>,
    cross_v: Vec<Array2<f64>>,
}

/// Incremental decoder state for a batch of hypotheses.
#[derive(Clone)]
pub struct DecodeState {
    pos: usize,
    /// `keys[layer][row]` holds `pos × d` flattened cached keys.
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl DecodeState {
    pub fn rows(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Keeps (and duplicates) hypothesis rows according to `indices`.
    pub fn reorder(&mut self, indices: &[usize]) {
        for layer in self.keys.iter_mut().chain(self.values.iter_mut()) {
            let old = std::mem::take(layer);
            *layer = indices.iter().map(|&i| old[i].clone()).collect();
        }
    }
}

/// Next-token logits for each hypothesis row.
pub struct StepOutput {
    pub lm: Array2<f64>,
    pub cls: Option<Array2<f64>>,
}

impl Seq2SeqModel {
    pub fn encode_source(&self, src: &[usize]) -> Result<EncodedSource, NnError> {
        self.check_source(src)?;
        let p = &self.params;
        let states = encoder_states(p, &self.cfg, &self.ids.enc, src);
        let mut cross_k = Vec::with_capacity(self.ids.dec_layers.len());
        let mut cross_v = Vec::with_capacity(self.ids.dec_layers.len());
        for layer in &self.ids.dec_layers {
            cross_k.push(linear(p, &states, layer.cross.wk, layer.cross.bk));
            cross_v.push(linear(p, &states, layer.cross.wv, layer.cross.bv));
        }
        Ok(EncodedSource {
            states,
            cross_k,
            cross_v,
        })
    }

    pub fn start_decode(&self, rows: usize) -> DecodeState {
        let n = self.ids.dec_layers.len();
        DecodeState {
            pos: 0,
            keys: vec![vec![Vec::new(); rows]; n],
            values: vec![vec![Vec::new(); rows]; n],
        }
    }

    /// Feeds one token per hypothesis row and returns next-token logits.
    pub fn step(
        &self,
        enc: &EncodedSource,
        state: &mut DecodeState,
        tokens: &[usize],
    ) -> Result<StepOutput, NnError> {
        let cfg = &self.cfg;
        let p = &self.params;
        let rows = tokens.len();
        assert_eq!(rows, state.rows(), "one token per hypothesis row");
        if state.pos >= cfg.max_len {
            return Err(NnError::TooLong {
                len: state.pos + 1,
                max: cfg.max_len,
            });
        }
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let tok = p.get(self.ids.enc.tok);
        let pos_row = p.get(self.ids.dec_pos).row(state.pos);
        let mut x = Array2::zeros((rows, d));
        for (r, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(r);
            row.assign(&tok.row(t));
            row += &pos_row;
        }
        let t_len = state.pos + 1;
        for (l, layer) in self.ids.dec_layers.iter().enumerate() {
            // causal self-attention against the cache
            let h = layer_norm(p, &x, layer.ln1);
            let q = linear(p, &h, layer.self_attn.wq, layer.self_attn.bq);
            let k = linear(p, &h, layer.self_attn.wk, layer.self_attn.bk);
            let v = linear(p, &h, layer.self_attn.wv, layer.self_attn.bv);
            let mut att = Array2::zeros((rows, d));
            let mut scores = vec![0.0; t_len];
            for r in 0..rows {
                let kc = &mut state.keys[l][r];
                kc.extend(k.row(r).iter());
                let vc = &mut state.values[l][r];
                vc.extend(v.row(r).iter());
                let (kc, vc) = (&state.keys[l][r], &state.values[l][r]);
                for hh in 0..cfg.n_heads {
                    let qh = q.slice(s![r, hh * dh..(hh + 1) * dh]);
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let off = j * d + hh * dh;
                        *sc = dot(qh, &kc[off..off + dh]) * scale;
                    }
                    softmax_slice(&mut scores);
                    let mut out = att.slice_mut(s![r, hh * dh..(hh + 1) * dh]);
                    for (j, &a) in scores.iter().enumerate() {
                        let off = j * d + hh * dh;
                        for c in 0..dh {
                            out[c] += a * vc[off + c];
                        }
                    }
                }
            }
            x += &linear(p, &att, layer.self_attn.wo, layer.self_attn.bo);

            // cross-attention over the shared encoder output
            let h = layer_norm(p, &x, layer.ln2);
            let q = linear(p, &h, layer.cross.wq, layer.cross.bq);
            let mut att = Array2::zeros((rows, d));
            let (ck, cv) = (&enc.cross_k[l], &enc.cross_v[l]);
            for hh in 0..cfg.n_heads {
                let cols = s![.., hh * dh..(hh + 1) * dh];
                let mut sc = q.slice(cols).dot(&ck.slice(cols).t()) * scale;
                softmax_rows(&mut sc);
                att.slice_mut(cols).assign(&sc.dot(&cv.slice(cols)));
            }
            x += &linear(p, &att, layer.cross.wo, layer.cross.bo);

            let h = layer_norm(p, &x, layer.ln3);
            x += &ffn(p, &h, &layer.ffn);
        }
        state.pos += 1;
        let h = layer_norm(p, &x, self.ids.dec_ln_f);
        let lm = linear(p, &h, self.ids.lm_w, self.ids.lm_b);
        let cls = self.ids.cls.map(|(w, b)| linear(p, &h, w, b));
        Ok(StepOutput { lm, cls })
    }

    /// Teacher-forced logits for every target position (`[tgt..., <eos>]` predictions).
    pub fn forced_logits(&self, src: &[usize], tgt: &[usize]) -> Result<Vec<StepOutput>, NnError> {
        self.check_target(tgt)?;
        let enc = self.encode_source(src)?;
        let mut state = self.start_decode(1);
        let mut out = Vec::with_capacity(tgt.len() + 1);
        let mut prev = crate::vocab::BOS_ID;
        for i in 0..=tgt.len() {
            out.push(self.step(&enc, &mut state, &[prev])?);
            if i < tgt.len() {
                prev = tgt[i];
            }
        }
        Ok(out)
    }
}

fn dot(a: ArrayView1<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_slice(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Log-softmax of one logit row.
pub fn log_softmax(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}
