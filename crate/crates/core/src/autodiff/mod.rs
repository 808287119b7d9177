//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated (define-by-run);
//! [`Graph::backward`] walks the tape in reverse creation order. Reductions
//! accumulate in `f64` and every loop order is fixed, so forward values and
//! gradients are bit-identical across runs.

pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use kernels::dot;
pub use tensor::Tensor;

pub(crate) use graph::{l2_norm, softmax_row};

use crate::error::{Error, Result};

/// Primitive kinds addressable through [`Graph::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Exp,
    Log,
    Sum,
    Mean,
    /// max over the last axis
    Max,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Transpose,
    Scale(f32),
}

impl Graph {
    /// Applies a primitive by kind, checking arity.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(alloc::format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Div => {
                arity(2)?;
                self.div(inputs[0], inputs[1])
            }
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Exp => {
                arity(1)?;
                Ok(self.exp(inputs[0]))
            }
            Primitive::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            Primitive::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            Primitive::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
            Primitive::Max => {
                arity(1)?;
                Ok(self.max_last(inputs[0]))
            }
            Primitive::Concat { axis } => self.concat(inputs, axis),
            Primitive::Slice { axis, start, len } => {
                arity(1)?;
                self.slice(inputs[0], axis, start, len)
            }
            Primitive::Transpose => {
                arity(1)?;
                self.transpose(inputs[0])
            }
            Primitive::Scale(c) => {
                arity(1)?;
                Ok(self.scale(inputs[0], c))
            }
        }
    }

    /// Cosine similarity of two equal-length vectors; 0 when either norm is
    /// below `eps`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: f32) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::ShapeMismatch {
                op: "cosine_similarity",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let n = self.value(a).numel();
        let a = self.reshape(a, &[n])?;
        let b = self.reshape(b, &[n])?;
        let an = self.l2_normalize(a, eps);
        let bn = self.l2_normalize(b, eps);
        let p = self.mul(an, bn)?;
        Ok(self.sum(p))
    }

    /// Row-wise cosine of two `[n, d]` tensors -> `[n]`.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: f32) -> Result<Var> {
        let an = self.l2_normalize(a, eps);
        let bn = self.l2_normalize(b, eps);
        let p = self.mul(an, bn)?;
        Ok(self.sum_last(p))
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }
}

/// Free-function form of [`Graph::softmax`] for plain slices.
pub fn softmax(values: &[f32], temperature: f32) -> Result<alloc::vec::Vec<f32>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain {
            op: "softmax",
            detail: alloc::format!("temperature must be positive, got {temperature}"),
        });
    }
    let mut out = alloc::vec::Vec::with_capacity(values.len());
    softmax_row(values, temperature, &mut out);
    Ok(out)
}

/// Unit-norm copy of `v`; the zero vector when `||v|| < eps`.
pub fn l2_normalize(v: &[f32], eps: f32) -> alloc::vec::Vec<f32> {
    let n = l2_norm(v);
    if n < eps {
        alloc::vec![0.0; v.len()]
    } else {
        v.iter().map(|&x| x / n).collect()
    }
}

/// Cosine similarity of two slices; 0 when either norm is below `eps`.
pub fn cosine_similarity(a: &[f32], b: &[f32], eps: f32) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: alloc::vec![a.len()],
            rhs: alloc::vec![b.len()],
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na < eps || nb < eps {
        return Ok(0.0);
    }
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok(((d / (na as f64 * nb as f64)) as f32).clamp(-1.0, 1.0))
}
