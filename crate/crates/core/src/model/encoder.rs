use crate::autograd::{Scalar, Tape, TensorId};
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::params::BoundParams;

pub const LAYER_NORM_EPS: f64 = 1e-12;
/// Additive logit for masked-out attention keys. Large enough to zero the
/// softmax weight, small enough to stay finite at f32.
const NEG_INF_MASK: f64 = -1e9;

/// Inputs to one encoder forward pass over a `[batch, len]` id matrix.
pub struct EncoderInput<'a> {
    pub ids: &'a [u32],
    pub batch: usize,
    pub len: usize,
    /// 1 for real tokens, 0 for padding.
    pub attention_mask: &'a [u8],
    /// Segment ids (0/1); all-zero when absent.
    pub segment_ids: Option<&'a [u32]>,
    pub dropout: f64,
}

fn linear<S: Scalar>(tape: &mut Tape<S>, x: TensorId, bound: &BoundParams, name: &str) -> Result<TensorId> {
    let w = bound.id(&format!("{name}.w"));
    let b = bound.id(&format!("{name}.b"));
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

fn layer_norm<S: Scalar>(tape: &mut Tape<S>, x: TensorId, bound: &BoundParams, name: &str) -> Result<TensorId> {
    let g = bound.id(&format!("{name}.g"));
    let b = bound.id(&format!("{name}.b"));
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

/// Run the encoder branch named by `prefix` ("disc" or "gen") and return
/// hidden states of shape `[batch, len, hidden]`.
///
/// Layout: shared embeddings (token + position + segment, layer-normed,
/// dropped out), an optional projection into the branch width, then
/// post-layer-norm transformer blocks with additive-mask attention.
pub fn forward_encoder<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    config: &ModelConfig,
    prefix: &str,
    input: &EncoderInput<'_>,
) -> Result<TensorId> {
    let (batch, len) = (input.batch, input.len);
    if len > config.max_positions {
        return Err(Error::Model(format!(
            "sequence length {len} exceeds max positions {}",
            config.max_positions
        )));
    }
    if input.ids.len() != batch * len || input.attention_mask.len() != batch * len {
        return Err(Error::Model(format!(
            "input buffers disagree with batch {batch} x len {len}"
        )));
    }

    let emb_tok = bound.id("emb.tok");
    let emb_pos = bound.id("emb.pos");
    let emb_seg = bound.id("emb.seg");

    let tok = tape.embedding_lookup(emb_tok, input.ids, &[batch, len])?;
    let pos_ids: Vec<u32> = (0..batch)
        .flat_map(|_| (0..len as u32).collect::<Vec<u32>>())
        .collect();
    let pos = tape.embedding_lookup(emb_pos, &pos_ids, &[batch, len])?;
    let zero_segs;
    let seg_ids: &[u32] = match input.segment_ids {
        Some(s) => s,
        None => {
            zero_segs = vec![0u32; batch * len];
            &zero_segs
        }
    };
    let seg = tape.embedding_lookup(emb_seg, seg_ids, &[batch, len])?;

    let sum = tape.add(tok, pos)?;
    let sum = tape.add(sum, seg)?;
    let normed = layer_norm(tape, sum, bound, "emb.ln")?;
    let mut x = tape.dropout(normed, input.dropout)?;

    if config.embedding != config.hidden {
        x = linear(tape, x, bound, &format!("{prefix}.proj"))?;
    }

    let (h, heads) = (config.hidden, config.heads);
    let head_size = config.head_size();
    let additive_mask: Vec<S> = input
        .attention_mask
        .iter()
        .map(|&m| {
            if m == 0 {
                S::from_f64(NEG_INF_MASK)
            } else {
                S::ZERO
            }
        })
        .collect();
    let scale = 1.0 / (head_size as f64).sqrt();

    for l in 0..config.layers {
        let base = format!("{prefix}.l{l}");
        // multi-head self-attention
        let split = |tape: &mut Tape<S>, t: TensorId| -> Result<TensorId> {
            let r = tape.reshape(t, &[batch, len, heads, head_size])?;
            tape.permute(r, &[0, 2, 1, 3]) // [B, heads, L, d]
        };
        let q_lin = linear(tape, x, bound, &format!("{base}.attn.q"))?;
        let k_lin = linear(tape, x, bound, &format!("{base}.attn.k"))?;
        let v_lin = linear(tape, x, bound, &format!("{base}.attn.v"))?;
        let q = split(tape, q_lin)?;
        let k = split(tape, k_lin)?;
        let v = split(tape, v_lin)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let scores = tape.add_key_mask(scores, &additive_mask)?;
        let attn = tape.softmax(scores)?;
        let attn = tape.dropout(attn, input.dropout)?;
        let ctx = tape.matmul(attn, v)?; // [B, heads, L, d]
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[batch, len, h])?;
        let attn_out = linear(tape, ctx, bound, &format!("{base}.attn.o"))?;
        let attn_out = tape.dropout(attn_out, input.dropout)?;
        let res = tape.add(x, attn_out)?;
        x = layer_norm(tape, res, bound, &format!("{base}.ln1"))?;

        // feed-forward
        let inner = linear(tape, x, bound, &format!("{base}.ffn.in"))?;
        let inner = tape.gelu(inner)?;
        let out = linear(tape, inner, bound, &format!("{base}.ffn.out"))?;
        let out = tape.dropout(out, input.dropout)?;
        let res = tape.add(x, out)?;
        x = layer_norm(tape, res, bound, &format!("{base}.ln2"))?;
    }
    Ok(x)
}

/// Generator MLM logits at selected flat positions (`row = b * len + t`).
/// The decoder weight is the shared token embedding table, transposed on the
/// fly, so logits move whenever the embedding storage moves.
pub fn mlm_logits<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    gen_hidden: TensorId,
    positions: &[usize],
) -> Result<TensorId> {
    let shape = tape.shape(gen_hidden).to_vec();
    let h = *shape.last().unwrap();
    let rows: usize = shape.iter().product::<usize>() / h;
    let flat = tape.reshape(gen_hidden, &[rows, h])?;
    let picked = tape.gather_rows(flat, positions)?;
    let t = linear(tape, picked, bound, "gen.mlm.dense")?;
    let t = tape.gelu(t)?;
    let t = layer_norm(tape, t, bound, "gen.mlm.ln")?;
    let emb_t = tape.transpose(bound.id("emb.tok"))?; // [E, V]
    let logits = tape.matmul(t, emb_t)?;
    tape.add_bias(logits, bound.id("gen.mlm.out_bias"))
}

/// Discriminator per-token logits `[batch, len]`; sigmoid gives the
/// replaced-token probability.
pub fn disc_logits<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    disc_hidden: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(disc_hidden).to_vec();
    let (batch, len) = (shape[0], shape[1]);
    let d = linear(tape, disc_hidden, bound, "disc.rtd.dense")?;
    let d = tape.gelu(d)?;
    let logits = linear(tape, d, bound, "disc.rtd.out")?; // [B, L, 1]
    tape.reshape(logits, &[batch, len])
}

/// Classification logits from the first (CLS) position of each sequence.
pub fn cls_logits<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    hidden: TensorId,
    dropout: f64,
) -> Result<TensorId> {
    let shape = tape.shape(hidden).to_vec();
    let (batch, len, h) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(hidden, &[batch * len, h])?;
    let cls_rows: Vec<usize> = (0..batch).map(|b| b * len).collect();
    let cls = tape.gather_rows(flat, &cls_rows)?;
    let cls = tape.dropout(cls, dropout)?;
    linear(tape, cls, bound, "task.cls")
}

/// Per-token tag logits `[batch, len, n_tags]`.
pub fn token_logits<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    hidden: TensorId,
    dropout: f64,
) -> Result<TensorId> {
    let dropped = tape.dropout(hidden, dropout)?;
    linear(tape, dropped, bound, "task.tok")
}

/// QA span logits: `(start [batch, len], end [batch, len])`.
pub fn qa_logits<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    hidden: TensorId,
    dropout: f64,
) -> Result<(TensorId, TensorId)> {
    let shape = tape.shape(hidden).to_vec();
    let (batch, len) = (shape[0], shape[1]);
    let dropped = tape.dropout(hidden, dropout)?;
    let start = linear(tape, dropped, bound, "task.qa.start")?;
    let start = tape.reshape(start, &[batch, len])?;
    let end = linear(tape, dropped, bound, "task.qa.end")?;
    let end = tape.reshape(end, &[batch, len])?;
    Ok((start, end))
}
