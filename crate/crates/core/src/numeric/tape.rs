//! Define-by-run reverse-mode gradient tape over matrix primitives.
//!
//! Every operation evaluates eagerly, stores its value, and records its
//! inputs. [`Tape::backward`] walks the recorded nodes once in reverse
//! order and returns the gradient of a scalar node with respect to every
//! node; leaves that do not influence the output get exact zeros.

use super::activation::Activation;
use super::matrix::Matrix;
use super::norm::{group_norm_rows, group_norm_rows_backward};
use super::real::Real;
use super::sequence::{check_seq, decay_from_raw, token_shift_backward, token_shift_seq, wkv_backward, wkv_scan};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    Activation(Activation),
    GroupNorm,
    TokenShift,
    Wkv,
    Reshape,
    SliceCols,
    ScaleRows,
    Sum,
    Mean,
    Mse,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Activation(Var, Activation),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: T,
    },
    TokenShift {
        x: Var,
        mu: Var,
        seq_len: usize,
    },
    Wkv {
        r: Var,
        k: Var,
        v: Var,
        w_raw: Var,
        u: Var,
        heads: usize,
        seq_len: usize,
    },
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ScaleRows {
        x: Var,
        scale: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Activation(_, a) => OpKind::Activation(*a),
            Op::GroupNorm { .. } => OpKind::GroupNorm,
            Op::TokenShift { .. } => OpKind::TokenShift,
            Op::Wkv { .. } => OpKind::Wkv,
            Op::Reshape(_) => OpKind::Reshape,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ScaleRows { .. } => OpKind::ScaleRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Mse(..) => OpKind::Mse,
        }
    }
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Recorded computation. One tape per logical thread of execution.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; an all-zero matrix when `var` does not reach the output.
    pub fn get(&self, var: Var) -> Matrix<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient for `var` out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Matrix<T> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Matrix<T>>], var: Var, g: Matrix<T>) {
    match &mut grads[var.0] {
        Some(existing) => existing
            .accumulate(&g)
            .expect("gradient shape matches its node by construction"),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix<T> {
        &self.nodes[var.0].value
    }

    /// Total bytes held by recorded values.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.byte_size()).sum()
    }

    /// Test hook: scales every input gradient emitted by `kind` by 1.5,
    /// simulating a broken backward rule.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let v = act.apply_matrix(self.value(a));
        self.push(v, Op::Activation(a, act))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Silu)
    }

    pub fn sq_relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::SqRelu)
    }

    /// Row-wise group norm; `groups = 1` is a plain layer norm.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let v = group_norm_rows(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            v,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                eps,
            },
        ))
    }

    pub fn token_shift(&mut self, x: Var, mu: Var, seq_len: usize) -> Result<Var> {
        let v = token_shift_seq(self.value(x), self.value(mu), seq_len, None)?;
        Ok(self.push(v, Op::TokenShift { x, mu, seq_len }))
    }

    /// Multi-head WKV readout from zero state; `w_raw` is the untransformed decay.
    #[allow(clippy::too_many_arguments)]
    pub fn wkv(&mut self, r: Var, k: Var, v: Var, w_raw: Var, u: Var, heads: usize, seq_len: usize) -> Result<Var> {
        let w: Vec<T> = self.value(w_raw).as_slice().iter().map(|&x| decay_from_raw(x)).collect();
        let (y, _) = wkv_scan(
            self.value(r),
            self.value(k),
            self.value(v),
            &w,
            self.value(u).as_slice(),
            heads,
            seq_len,
            None,
        )?;
        Ok(self.push(
            y,
            Op::Wkv {
                r,
                k,
                v,
                w_raw,
                u,
                heads,
                seq_len,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x).clone().reshape(rows, cols)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if start + len > src.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: src.shape(),
                right: (start, len),
            });
        }
        let mut out = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Row-wise affine map `x[r, :] · scale[r] + shift[r]` with constant coefficients.
    pub fn scale_rows(&mut self, x: Var, scale: Vec<T>, shift: Vec<T>) -> Result<Var> {
        let src = self.value(x);
        if scale.len() != src.rows() || shift.len() != src.rows() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: src.shape(),
                right: (scale.len(), shift.len()),
            });
        }
        let mut out = src.clone();
        for r in 0..out.rows() {
            let (a, b) = (scale[r], shift[r]);
            for v in out.row_mut(r) {
                *v = *v * a + b;
            }
        }
        Ok(self.push(out, Op::ScaleRows { x, scale }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let s = m.sum() / T::from_count(m.len().max(1));
        self.push(Matrix::filled(1, 1, s), Op::Mean(x))
    }

    /// Mean squared error between two equally shaped nodes.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        let diff = p.sub(t)?;
        let mut acc = T::zero();
        for &d in diff.as_slice() {
            acc += d * d;
        }
        let v = acc / T::from_count(diff.len().max(1));
        Ok(self.push(Matrix::filled(1, 1, v), Op::Mse(pred, target)))
    }

    /// Reverse sweep from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut emitted = self.propagate(node, &g)?;
            if self.fault == Some(node.op.kind()) {
                let bump = T::from_f64_lossy(1.5);
                for (_, m) in emitted.iter_mut() {
                    *m = m.scale(bump);
                }
            }
            for (var, m) in emitted {
                accumulate(&mut grads, var, m);
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>) -> Result<Vec<(Var, Matrix<T>)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_nt(val(*b))?),
                (*b, val(*a).matmul_tn(g)?),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![(*a, g.hadamard(val(*b))?), (*b, g.hadamard(val(*a))?)],
            Op::AddRow(a, bias) => vec![(*a, g.clone()), (*bias, g.sum_rows())],
            Op::Activation(a, act) => {
                let x = val(*a);
                let d = x.map(|xi| act.derivative(xi));
                vec![(*a, g.hadamard(&d)?)]
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                eps,
            } => {
                let (gx, gg, gb) = group_norm_rows_backward(val(*x), *groups, val(*gamma), *eps, g);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::TokenShift { x, mu, seq_len } => {
                let (gx, gmu) = token_shift_backward(val(*x), val(*mu), *seq_len, g);
                vec![(*x, gx), (*mu, gmu)]
            }
            Op::Wkv {
                r,
                k,
                v,
                w_raw,
                u,
                heads,
                seq_len,
            } => {
                check_seq(val(*r), *seq_len, "wkv backward")?;
                let gr = wkv_backward(
                    val(*r),
                    val(*k),
                    val(*v),
                    val(*w_raw).as_slice(),
                    val(*u).as_slice(),
                    *heads,
                    *seq_len,
                    g,
                );
                vec![(*r, gr.r), (*k, gr.k), (*v, gr.v), (*w_raw, gr.w_raw), (*u, gr.u)]
            }
            Op::Reshape(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, g.clone().reshape(r, c)?)]
            }
            Op::SliceCols { x, start } => {
                let src = val(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                vec![(*x, gx)]
            }
            Op::ScaleRows { x, scale } => {
                let mut gx = g.clone();
                for (r, &a) in scale.iter().enumerate() {
                    for v in gx.row_mut(r) {
                        *v *= a;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Matrix::filled(r, c, g.get(0, 0)))]
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                let n = T::from_count((r * c).max(1));
                vec![(*x, Matrix::filled(r, c, g.get(0, 0) / n))]
            }
            Op::Mse(p, t) => {
                let diff = val(*p).sub(val(*t))?;
                let n = T::from_count(diff.len().max(1));
                let coef = (T::one() + T::one()) * g.get(0, 0) / n;
                let gp = diff.scale(coef);
                let gt = gp.scale(-T::one());
                vec![(*p, gp), (*t, gt)]
            }
        })
    }
}
