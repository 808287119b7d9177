use alloc::vec;
use alloc::vec::Vec;

use super::params::{BlockVars, Bound};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;

/// Additive attention bias for keys that must not be attended.
const MASKED: f32 = -1e9;

/// Centred patches with a smaller norm are treated as constant.
const STD_EPS: f32 = 1e-6;

/// `v = tanh(c(x) W1 + b1) W2 + b2` for pooled patches `x: [n, 4096]`,
/// where `c` standardizes each patch to zero mean and unit variance (a
/// constant patch maps to zeros).
pub fn vision_encode(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "vision_encode",
            lhs: vec![0, 0],
            rhs: s,
        });
    }
    let m = g.mean_last(x);
    let m = g.reshape(m, &[s[0], 1])?;
    let ones = g.constant(Tensor::filled(&[1, s[1]], 1.0));
    let m = g.matmul(m, ones)?;
    let x = g.sub(x, m)?;
    let x = g.l2_normalize(x, STD_EPS);
    let x = g.scale(x, math::sqrtf(s[1] as f32));
    let h = g.linear(x, p.vis_w1, p.vis_b1)?;
    let h = g.tanh(h);
    g.linear(h, p.vis_w2, p.vis_b2)
}

/// `w = tanh(E[t] W + b)` for each token.
pub fn text_encode(g: &mut Graph, p: &Bound, tokens: &[usize]) -> Result<Var> {
    if let Some(&t) = tokens.iter().find(|&&t| t >= p.vocab) {
        return Err(Error::OutOfRange(alloc::format!(
            "token {t} outside vocabulary of {}",
            p.vocab
        )));
    }
    let e = g.gather_rows(p.txt_emb, tokens)?;
    let h = g.linear(e, p.txt_w, p.txt_b)?;
    Ok(g.tanh(h))
}

/// Features of every vocabulary token, `[vocab, d]`.
pub fn text_table(g: &mut Graph, p: &Bound) -> Result<Var> {
    let all: Vec<usize> = (0..p.vocab).collect();
    text_encode(g, p, &all)
}

/// One keyword slot of a fusion sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// row of the keyword feature table
    Row(usize),
    /// padding, excluded from attention
    Pad,
    /// the reserved MASK embedding (attended like a keyword)
    Mask,
}

#[derive(Debug, Clone, Copy)]
pub struct FusedRep {
    /// image-position output, `[S, d]`
    pub z: Var,
    /// all positions, `[S, 1 + L, d]`; position 0 is the image slot
    pub states: Var,
}

fn block(g: &mut Graph, b: &BlockVars, x: Var, bias: &Tensor, d: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, t) = (s[0], s[1]);
    let flat = g.reshape(x, &[n * t, d])?;
    let q = g.matmul(flat, b.wq)?;
    let k = g.matmul(flat, b.wk)?;
    let v = g.matmul(flat, b.wv)?;
    let q = g.reshape(q, &[n, t, d])?;
    let k = g.reshape(k, &[n, t, d])?;
    let v = g.reshape(v, &[n, t, d])?;
    let kt = g.transpose(k)?;
    let scores = g.bmm(q, kt)?;
    let bias = g.constant(bias.clone());
    let scores = g.add(scores, bias)?;
    let attn = g.softmax(scores, math::sqrtf(d as f32))?;
    let mixed = g.bmm(attn, v)?;
    let mixed = g.reshape(mixed, &[n * t, d])?;
    let o = g.matmul(mixed, b.wo)?;
    let h1 = g.add(flat, o)?;
    let m = g.linear(h1, b.w1, b.b1)?;
    let m = g.tanh(m);
    let m = g.linear(m, b.w2, b.b2)?;
    let h2 = g.add(h1, m)?;
    g.reshape(h2, &[n, t, d])
}

/// Multi-modal fusion over `[v, w_1 .. w_L]` per sequence. `table` holds the
/// keyword features referenced by [`Slot::Row`]. Keyword slots carry no
/// positional encoding, so `z` is invariant to their order.
pub fn fuse(g: &mut Graph, p: &Bound, v: Var, table: Var, slots: &[Vec<Slot>]) -> Result<FusedRep> {
    let n = slots.len();
    if n == 0 {
        return Err(Error::Empty("fusion sequences"));
    }
    let l = slots[0].len();
    if l == 0 || slots.iter().any(|s| s.len() != l) {
        return Err(Error::InvalidArgument(
            "fusion needs equal, non-zero keyword slot counts".into(),
        ));
    }
    if slots.iter().all(|s| s.iter().all(|x| *x == Slot::Pad)) {
        return Err(Error::Empty("fusion keywords"));
    }
    let d = p.d;
    if g.shape(v) != [n, d] {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: vec![n, d],
            rhs: g.shape(v).to_vec(),
        });
    }
    let rows = g.shape(table)[0];
    let pad = g.reshape(p.pad, &[1, d])?;
    let mask = g.reshape(p.mask, &[1, d])?;
    let full = g.concat(&[table, pad, mask], 0)?;
    let mut idx = Vec::with_capacity(n * l);
    for s in slots {
        for &x in s {
            idx.push(match x {
                Slot::Row(r) if r < rows => r,
                Slot::Row(r) => return Err(Error::OutOfRange(alloc::format!("keyword row {r} of {rows}"))),
                Slot::Pad => rows,
                Slot::Mask => rows + 1,
            });
        }
    }
    let kw = g.gather_rows(full, &idx)?;
    let kw = g.add_row(kw, p.type_txt)?;
    let kw = g.reshape(kw, &[n, l, d])?;
    let img = g.add_row(v, p.type_img)?;
    let img = g.reshape(img, &[n, 1, d])?;
    let mut x = g.concat(&[img, kw], 1)?;

    let t = l + 1;
    let mut bias = vec![0.0f32; n * t * t];
    for (si, s) in slots.iter().enumerate() {
        for (j, slot) in s.iter().enumerate() {
            if *slot == Slot::Pad {
                for q in 0..t {
                    bias[si * t * t + q * t + j + 1] = MASKED;
                }
            }
        }
    }
    let bias = Tensor::new(&[n, t, t], bias)?;
    for b in &p.blocks {
        x = block(g, b, x, &bias, d)?;
    }
    let z = g.slice(x, 1, 0, 1)?;
    let z = g.reshape(z, &[n, d])?;
    Ok(FusedRep { z, states: x })
}

/// `g = p_j(z)`, `h = p_d(g)`.
pub fn project_predict(g: &mut Graph, p: &Bound, z: Var) -> Result<(Var, Var)> {
    let gj = g.linear(z, p.pj_w, p.pj_b)?;
    let h = g.linear(gj, p.pd_w, p.pd_b)?;
    Ok((gj, h))
}

/// Causal decoder over `[prefix_state, inputs...]`, returning next-token
/// logits at every position, `[S, T, vocab]`. Position `j` attends to
/// positions `<= j` only.
pub fn plm_decode(g: &mut Graph, p: &Bound, prefix: Var, inputs: Var) -> Result<Var> {
    let d = p.d;
    let s = g.shape(inputs).to_vec();
    let (n, m) = (s[0], s[1]);
    let first = g.reshape(prefix, &[n, 1, d])?;
    let x = g.concat(&[first, inputs], 1)?;
    let t = m + 1;
    let mut bias = vec![0.0f32; n * t * t];
    for si in 0..n {
        for q in 0..t {
            for k in q + 1..t {
                bias[si * t * t + q * t + k] = MASKED;
            }
        }
    }
    let bias = Tensor::new(&[n, t, t], bias)?;
    let x = block(g, &p.plm_block, x, &bias, d)?;
    let flat = g.reshape(x, &[n * t, d])?;
    let logits = g.linear(flat, p.plm_w, p.plm_b)?;
    g.reshape(logits, &[n, t, p.vocab])
}

/// Temperature as a graph scalar `exp(log_tau)`.
pub fn tau(g: &mut Graph, p: &Bound) -> Var {
    g.exp(p.log_tau)
}
