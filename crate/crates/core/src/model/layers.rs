use super::config::Pooling;
use super::params::{AttnWeights, FeedForward, LayerWeights, Linear, Norm, PoolWeights};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Intermediate values worth inspecting after a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// One `[L_q × L_k]` matrix per head per attention call.
    pub attention: Vec<Var>,
    /// Gate activations of each gated residual.
    pub gates: Vec<Var>,
    /// `[1 × L]` pooling weights for attention-based pooling.
    pub pool_weights: Vec<Var>,
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, l: &Linear<Var>) -> Result<Var> {
    let y = tape.matmul(x, l.w)?;
    tape.add(y, l.b)
}

pub fn norm<T: Scalar>(tape: &mut Tape<T>, x: Var, n: &Norm<Var>) -> Result<Var> {
    tape.layer_norm(x, n.gain, n.bias, LAYER_NORM_EPS)
}

/// Scaled dot-product attention per head over column slices of the
/// projected inputs, heads concatenated and output-projected.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    w: &AttnWeights<Var>,
    n_heads: usize,
    trace: &mut Trace,
) -> Result<Var> {
    let d = tape.shape(w.q.w)[1];
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::contract(format!("d={d} is not divisible by {n_heads} heads")));
    }
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::Shape {
            op: "attention keys/values",
            left: tape.shape(k).to_vec(),
            right: tape.shape(v).to_vec(),
        });
    }
    let qp = linear(tape, q, &w.q)?;
    let kp = linear(tape, k, &w.k)?;
    let vp = linear(tape, v, &w.v)?;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if n_heads == 1 {
            (qp, kp, vp)
        } else {
            (
                tape.slice_cols(qp, lo, hi)?,
                tape.slice_cols(kp, lo, hi)?,
                tape.slice_cols(vp, lo, hi)?,
            )
        };
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let p = tape.softmax_rows(scores);
        trace.attention.push(p);
        heads.push(tape.matmul(p, vh)?);
    }
    let joined = if n_heads == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    linear(tape, joined, &w.o)
}

/// `G ⊙ H_att + (1 − G) ⊙ A` with `G = σ(H_att·W_g + b_g)`.
pub fn gated_residual<T: Scalar>(
    tape: &mut Tape<T>,
    h_att: Var,
    a: Var,
    gate: &Linear<Var>,
    trace: &mut Trace,
) -> Result<Var> {
    if tape.shape(h_att) != tape.shape(a) {
        return Err(Error::Shape {
            op: "gated_residual",
            left: tape.shape(h_att).to_vec(),
            right: tape.shape(a).to_vec(),
        });
    }
    let z = linear(tape, h_att, gate)?;
    let g = tape.sigmoid(z);
    trace.gates.push(g);
    let one = tape.constant(Tensor::scalar(T::one()));
    let neg = tape.scale(g, -1.0);
    let complement = tape.add(neg, one)?;
    let left = tape.mul(g, h_att)?;
    let right = tape.mul(complement, a)?;
    tape.add(left, right)
}

pub fn feed_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, ff: &FeedForward<Var>) -> Result<Var> {
    let h = linear(tape, x, &ff.up)?;
    let h = tape.gelu(h);
    linear(tape, h, &ff.down)
}

/// Pre-norm self-attention layer: `x + Attn(LN(x))`, then `x + FF(LN(x))`.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &LayerWeights<Var>,
    n_heads: usize,
    dropout: f64,
    trace: &mut Trace,
) -> Result<Var> {
    let h = norm(tape, x, &w.norm_attn)?;
    let a = multi_head_attention(tape, h, h, h, &w.attn, n_heads, trace)?;
    let a = tape.dropout(a, dropout)?;
    let x = tape.add(x, a)?;
    ff_block(tape, x, w, dropout)
}

/// Pre-norm cross-attention layer. `query` attends over `context`; with a
/// gate the residual is the gated convex combination, otherwise a sum.
pub fn cross_layer<T: Scalar>(
    tape: &mut Tape<T>,
    query: Var,
    context: Var,
    w: &LayerWeights<Var>,
    n_heads: usize,
    dropout: f64,
    trace: &mut Trace,
) -> Result<Var> {
    let nc = w
        .norm_context
        .as_ref()
        .ok_or_else(|| Error::contract("cross layer without a context norm"))?;
    let hq = norm(tape, query, &w.norm_attn)?;
    let hc = norm(tape, context, nc)?;
    let a = multi_head_attention(tape, hq, hc, hc, &w.attn, n_heads, trace)?;
    let a = tape.dropout(a, dropout)?;
    let x = match &w.gate {
        Some(g) => gated_residual(tape, a, query, g, trace)?,
        None => tape.add(query, a)?,
    };
    ff_block(tape, x, w, dropout)
}

fn ff_block<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &LayerWeights<Var>, dropout: f64) -> Result<Var> {
    let h = norm(tape, x, &w.norm_ff)?;
    let f = feed_forward(tape, h, &w.ff)?;
    let f = tape.dropout(f, dropout)?;
    tape.add(x, f)
}

/// Collapses `[L × d]` to `[1 × d]`.
pub fn pool_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    strategy: Pooling,
    weights: Option<&PoolWeights<Var>>,
    trace: &mut Trace,
) -> Result<Var> {
    if tape.value(x).rows() == 0 {
        return Err(Error::contract("pooling an empty sequence"));
    }
    match strategy {
        Pooling::Mean => tape.mean_axis(x, 0),
        Pooling::Cls => tape.slice_rows(x, 0, 1),
        Pooling::Attn | Pooling::GatedAttn => {
            let w = weights.ok_or_else(|| Error::contract(format!("{strategy:?} pooling needs weights")))?;
            let mut scores = tape.matmul_t(w.w_a, x)?;
            if strategy == Pooling::GatedAttn {
                let (gw, gb) = w
                    .gate
                    .ok_or_else(|| Error::contract("gated pooling needs gate weights"))?;
                let z = tape.matmul_t(gw, x)?;
                let z = tape.add(z, gb)?;
                let g = tape.sigmoid(z);
                scores = tape.mul(scores, g)?;
            }
            let p = tape.softmax_rows(scores);
            trace.pool_weights.push(p);
            tape.matmul(p, x)
        }
    }
}
