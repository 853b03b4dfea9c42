//! Forward operations and their backward rules.

use super::Tensor;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::sync::Arc;

/// How a tensor was produced. Leaves carry no parents.
pub enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor, f64),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    AddRow(Tensor, Tensor),
    AddCol(Tensor, Tensor),
    Relu(Tensor),
    RowSum(Tensor),
    LogSumExp(Tensor),
    Mean(Tensor),
    Sum(Tensor),
    GatherRows(Tensor, Arc<Vec<usize>>),
    TakePerRow(Tensor, Arc<Vec<usize>>),
    Reshape(Tensor),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::AddCol(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::RowSum(a)
            | Op::LogSumExp(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::GatherRows(a, _)
            | Op::TakePerRow(a, _)
            | Op::Reshape(a) => vec![a],
        }
    }
}

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn binary(
    op_name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    op: Op,
) -> Result<Tensor> {
    require_same_shape(op_name, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Ok(Tensor::new(
        a.shape().to_vec(),
        data,
        op,
        a.tracked() || b.tracked(),
    ))
}

impl Tensor {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "add",
            self,
            other,
            |x, y| x + y,
            Op::Add(self.clone(), other.clone()),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "sub",
            self,
            other,
            |x, y| x - y,
            Op::Sub(self.clone(), other.clone()),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "mul",
            self,
            other,
            |x, y| x * y,
            Op::Mul(self.clone(), other.clone()),
        )
    }

    pub fn neg(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|x| -x).collect();
        Ok(Tensor::new(
            self.shape().to_vec(),
            data,
            Op::Neg(self.clone()),
            self.tracked(),
        ))
    }

    /// Multiplication by a compile-time constant (not a graph node).
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|x| c * x).collect();
        Ok(Tensor::new(
            self.shape().to_vec(),
            data,
            Op::Scale(self.clone(), c),
            self.tracked(),
        ))
    }

    /// Addition of a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x + c).collect();
        Ok(Tensor::new(
            self.shape().to_vec(),
            data,
            Op::AddScalar(self.clone(), c),
            self.tracked(),
        ))
    }

    /// `[m, k] x [k, n] -> [m, n]` matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = require_matrix("matmul", self)?;
        let (k2, n) = require_matrix("matmul", other)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::new(
            vec![m, n],
            data,
            Op::MatMul(self.clone(), other.clone()),
            self.tracked() || other.tracked(),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = require_matrix("transpose", self)?;
        let src = self.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(Tensor::new(
            vec![n, m],
            data,
            Op::Transpose(self.clone()),
            self.tracked(),
        ))
    }

    /// Adds a `[n]` vector to every row of a `[m, n]` matrix. The only
    /// row-wise broadcast in the crate, and it is explicit.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = require_matrix("add_row", self)?;
        if row.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let r = row.data();
        let mut data = self.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        Ok(Tensor::new(
            vec![m, n],
            data,
            Op::AddRow(self.clone(), row.clone()),
            self.tracked() || row.tracked(),
        ))
    }

    /// Adds a `[m]` vector down the columns of a `[m, n]` matrix.
    pub fn add_col(&self, col: &Tensor) -> Result<Tensor> {
        let (m, n) = require_matrix("add_col", self)?;
        if col.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "add_col",
                lhs: self.shape().to_vec(),
                rhs: col.shape().to_vec(),
            });
        }
        let c = col.data();
        let mut data = self.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += c[i];
            }
        }
        Ok(Tensor::new(
            vec![m, n],
            data,
            Op::AddCol(self.clone(), col.clone()),
            self.tracked() || col.tracked(),
        ))
    }

    /// max(x, 0). The derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x.max(0.0)).collect();
        Ok(Tensor::new(
            self.shape().to_vec(),
            data,
            Op::Relu(self.clone()),
            self.tracked(),
        ))
    }

    /// Per-row sum: `[m, n] -> [m]`.
    pub fn row_sum(&self) -> Result<Tensor> {
        let (m, n) = require_matrix("row_sum", self)?;
        let src = self.data();
        let data = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().sum())
            .collect();
        Ok(Tensor::new(
            vec![m],
            data,
            Op::RowSum(self.clone()),
            self.tracked(),
        ))
    }

    /// Per-row log-sum-exp: `[m, n] -> [m]`, computed max-shifted so large
    /// logits do not overflow.
    pub fn log_sum_exp(&self) -> Result<Tensor> {
        let (m, n) = require_matrix("log_sum_exp", self)?;
        let src = self.data();
        let data = (0..m)
            .map(|i| {
                let row = &src[i * n..(i + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        Ok(Tensor::new(
            vec![m],
            data,
            Op::LogSumExp(self.clone()),
            self.tracked(),
        ))
    }

    /// Mean over all elements: any shape -> scalar `[]`.
    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let v = self.data().iter().sum::<f64>() / n as f64;
        Ok(Tensor::new(
            vec![],
            vec![v],
            Op::Mean(self.clone()),
            self.tracked(),
        ))
    }

    /// Sum over all elements: any shape -> scalar `[]`.
    pub fn sum(&self) -> Result<Tensor> {
        let v = self.data().iter().sum::<f64>();
        Ok(Tensor::new(
            vec![],
            vec![v],
            Op::Sum(self.clone()),
            self.tracked(),
        ))
    }

    /// Row lookup with gradient scatter: `table[K, d]`, `idx[m] -> [m, d]`.
    /// Used to pick per-example class means out of a per-class table.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (k, d) = require_matrix("gather_rows", self)?;
        for &i in idx {
            if i >= k {
                return Err(Error::LabelOutOfRange {
                    label: i,
                    num_classes: k,
                });
            }
        }
        let src = self.data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(Tensor::new(
            vec![idx.len(), d],
            data,
            Op::GatherRows(self.clone(), Arc::new(idx.to_vec())),
            self.tracked(),
        ))
    }

    /// Per-row element pick: `[m, n]`, `idx[m] -> [m]` taking `self[i, idx[i]]`.
    pub fn take_per_row(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = require_matrix("take_per_row", self)?;
        if idx.len() != m {
            return Err(Error::ShapeMismatch {
                op: "take_per_row",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        for &j in idx {
            if j >= n {
                return Err(Error::LabelOutOfRange {
                    label: j,
                    num_classes: n,
                });
            }
        }
        let src = self.data();
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| src[i * n + j])
            .collect();
        Ok(Tensor::new(
            vec![m],
            data,
            Op::TakePerRow(self.clone(), Arc::new(idx.to_vec())),
            self.tracked(),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn push(upstream: &mut HashMap<u64, Vec<f64>>, parent: &Tensor, delta: Vec<f64>) {
    if !parent.tracked() {
        return;
    }
    upstream
        .entry(parent.id())
        .and_modify(|buf| {
            for (b, d) in buf.iter_mut().zip(&delta) {
                *b += d;
            }
        })
        .or_insert(delta);
}

/// Routes `up = d(loss)/d(node)` into the node's parents.
pub(crate) fn backward_into(node: &Tensor, up: &[f64], upstream: &mut HashMap<u64, Vec<f64>>) {
    match node.op() {
        Op::Leaf => {}
        Op::Add(a, b) => {
            push(upstream, a, up.to_vec());
            push(upstream, b, up.to_vec());
        }
        Op::Sub(a, b) => {
            push(upstream, a, up.to_vec());
            push(upstream, b, up.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            push(
                upstream,
                a,
                up.iter().zip(b.data()).map(|(u, y)| u * y).collect(),
            );
            push(
                upstream,
                b,
                up.iter().zip(a.data()).map(|(u, x)| u * x).collect(),
            );
        }
        Op::Neg(a) => push(upstream, a, up.iter().map(|v| -v).collect()),
        Op::Scale(a, c) => push(upstream, a, up.iter().map(|v| c * v).collect()),
        Op::AddScalar(a, _) => push(upstream, a, up.to_vec()),
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            // dA = up . B^T
            if a.tracked() {
                let bt = transpose_raw(b.data(), k, n);
                push(upstream, a, matmul_raw(up, &bt, m, n, k));
            }
            // dB = A^T . up
            if b.tracked() {
                let at = transpose_raw(a.data(), m, k);
                push(upstream, b, matmul_raw(&at, up, k, m, n));
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (a.shape()[0], a.shape()[1]);
            push(upstream, a, transpose_raw(up, n, m));
        }
        Op::AddRow(a, row) => {
            push(upstream, a, up.to_vec());
            if row.tracked() {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += up[i * n + j];
                    }
                }
                push(upstream, row, dr);
            }
        }
        Op::AddCol(a, col) => {
            push(upstream, a, up.to_vec());
            if col.tracked() {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let dc = (0..m)
                    .map(|i| up[i * n..(i + 1) * n].iter().sum())
                    .collect();
                push(upstream, col, dc);
            }
        }
        Op::Relu(a) => push(
            upstream,
            a,
            up.iter()
                .zip(a.data())
                .map(|(u, x)| if *x > 0.0 { *u } else { 0.0 })
                .collect(),
        ),
        Op::RowSum(a) => {
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] = up[i];
                }
            }
            push(upstream, a, da);
        }
        Op::LogSumExp(a) => {
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let src = a.data();
            let out = node.data();
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                if out[i] == f64::NEG_INFINITY {
                    continue; // whole row at -inf, constant output
                }
                for j in 0..n {
                    da[i * n + j] = up[i] * (src[i * n + j] - out[i]).exp();
                }
            }
            push(upstream, a, da);
        }
        Op::Mean(a) => {
            let scale = up[0] / a.numel() as f64;
            push(upstream, a, vec![scale; a.numel()]);
        }
        Op::Sum(a) => push(upstream, a, vec![up[0]; a.numel()]),
        Op::GatherRows(table, idx) => {
            let d = table.shape()[1];
            let mut dt = vec![0.0; table.numel()];
            for (i, &r) in idx.iter().enumerate() {
                for j in 0..d {
                    dt[r * d + j] += up[i * d + j];
                }
            }
            push(upstream, table, dt);
        }
        Op::TakePerRow(a, idx) => {
            let n = a.shape()[1];
            let mut da = vec![0.0; a.numel()];
            for (i, &j) in idx.iter().enumerate() {
                da[i * n + j] += up[i];
            }
            push(upstream, a, da);
        }
        Op::Reshape(a) => push(upstream, a, up.to_vec()),
    }
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
