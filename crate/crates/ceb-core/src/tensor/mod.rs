//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything is float64 and row-major. There is no implicit broadcasting:
//! the only rank-bending operations are the explicitly named `add_row`,
//! `add_col`, `gather_rows` and `take_per_row`, and all of them check shapes.
//! A scalar has the empty shape `[]`.
//!
//! Tensors built from tracked leaves (see [`Tensor::param`]) record their
//! producing operation; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates `d(loss)/d(node)` into every tracked
//! node. Gradients are additive across `backward` calls until cleared with
//! [`Tensor::zero_grad`].
//!
//! A graph is meant to live on one thread for the duration of a training
//! step. Tensors without graph references (evaluation mode) are immutable
//! and safe to share across threads.

mod ops;

pub use ops::Op;

use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Mutex<Option<Vec<f64>>>,
    op: Op,
    tracked: bool,
}

/// Dense n-dimensional f64 value, cheap to clone (shared buffer).
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("tracked", &self.0.tracked)
            .field("data", &self.0.data)
            .finish()
    }
}

impl Tensor {
    pub(crate) fn new(shape: Vec<usize>, data: Vec<f64>, op: Op, tracked: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        // untracked results drop their parent references: evaluation-mode
        // tensors carry no graph and can be shared or held freely
        let op = if tracked { op } else { Op::Leaf };
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: Mutex::new(None),
            op,
            tracked,
        }))
    }

    /// Untracked leaf from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor::new(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Tracked leaf (trainable parameter or attack input): gradients
    /// accumulate here after `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::new(
            t.0.shape.clone(),
            t.0.data.clone(),
            Op::Leaf,
            true,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n], Op::Leaf, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![], vec![v], Op::Leaf, false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn is_scalar(&self) -> bool {
        self.0.shape.is_empty()
    }

    pub fn tracked(&self) -> bool {
        self.0.tracked
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    pub(crate) fn op(&self) -> &Op {
        &self.0.op
    }

    /// The single value of a one-element tensor. Panics otherwise; use only
    /// where the shape is known, e.g. on the output of `mean` or `sum`.
    pub fn item(&self) -> f64 {
        assert!(
            self.numel() == 1,
            "item() on tensor of shape {:?}",
            self.0.shape
        );
        self.0.data[0]
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().clone()
    }

    /// Clears the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    /// Untracked copy of the value, cut off from any graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.0.shape.clone(), self.0.data.clone(), Op::Leaf, false)
    }

    /// Same buffer under a new shape with identical element count.
    /// Participates in the graph (backward restores the original shape).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.0.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::new(
            shape.to_vec(),
            self.0.data.clone(),
            Op::Reshape(self.clone()),
            self.0.tracked,
        ))
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode pass from a scalar loss. Accumulates `d(loss)/d(node)`
    /// into every tracked tensor reachable from `self`. Calling it twice
    /// without `zero_grad` adds the two gradients.
    pub fn backward(&self) -> Result<()> {
        self.reverse_pass(|node, up| node.accumulate_grad(up))
    }

    /// Gradient of this scalar with respect to one tensor, without touching
    /// any persistent `grad` buffer. `None` when the target is unreachable
    /// from the loss. Lets a caller differentiate through a model it only
    /// holds read-only (gradient attacks on inputs).
    pub fn grad_wrt(&self, target: &Tensor) -> Result<Option<Vec<f64>>> {
        let mut captured = None;
        let target_id = target.id();
        self.reverse_pass(|node, up| {
            if node.id() == target_id {
                captured = Some(up.to_vec());
            }
        })?;
        Ok(captured)
    }

    fn reverse_pass(&self, mut visit: impl FnMut(&Tensor, &[f64])) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::NonScalarBackward {
                shape: self.0.shape.clone(),
            });
        }
        if !self.0.tracked {
            // Constant loss: nothing reachable, all gradients stay zero.
            return Ok(());
        }

        let order = topo_order(self);
        let mut upstream: HashMap<u64, Vec<f64>> = HashMap::new();
        upstream.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let up = match upstream.remove(&node.id()) {
                Some(u) => u,
                None => continue,
            };
            visit(node, &up);
            ops::backward_into(node, &up, &mut upstream);
        }
        Ok(())
    }
}

/// Post-order over the tracked subgraph (parents before children).
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // Iterative DFS: (node, parents_expanded).
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for parent in node.op().parents() {
            if parent.tracked() && !visited.contains(&parent.id()) {
                stack.push((parent.clone(), false));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_operands() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn log_sum_exp_of_zeros_is_ln2() {
        let x = t(&[1, 2], &[0.0, 0.0]);
        let l = x.log_sum_exp().unwrap();
        assert!((l.data()[0] - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_is_stable_for_large_inputs() {
        let x = t(&[1, 2], &[1000.0, 1000.0]);
        let l = x.log_sum_exp().unwrap();
        assert!((l.data()[0] - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn relu_backward_masks_negatives() {
        let x = p(&[2], &[-1.0, 2.0]);
        let loss = x.relu().unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = p(&[3], &[1.0, 2.0, 3.0]);
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_constant_leaves_grads_zero() {
        let x = p(&[2], &[1.0, 2.0]);
        let loss = x.scale(0.0).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);

        // A loss with no tracked inputs at all is a no-op.
        let c = Tensor::scalar(5.0);
        c.backward().unwrap();
        assert!(c.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = p(&[2], &[1.0, 2.0]);
        assert!(matches!(x.backward(), Err(Error::NonScalarBackward { .. })));
    }

    #[test]
    fn backward_twice_accumulates_and_reset_clears() {
        let x = p(&[2], &[1.0, 2.0]);
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn shared_subexpression_gets_both_contributions() {
        // loss = sum(y) + sum(y) with y = 2x  =>  dloss/dx = 4 per element.
        let x = p(&[2], &[1.0, 1.0]);
        let y = x.scale(2.0).unwrap();
        let loss = y.sum().unwrap().add(&y.sum().unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn grad_wrt_reads_one_gradient_without_persisting() {
        let x = p(&[2], &[1.0, 2.0]);
        let w = p(&[2], &[3.0, 4.0]);
        let loss = x.mul(&w).unwrap().sum().unwrap();
        let gx = loss.grad_wrt(&x).unwrap().unwrap();
        assert_eq!(gx, vec![3.0, 4.0]);
        assert!(x.grad().is_none(), "grad_wrt must not persist gradients");
        assert!(w.grad().is_none());
        // a tensor outside the graph has no gradient
        let other = p(&[2], &[0.0, 0.0]);
        assert!(loss.grad_wrt(&other).unwrap().is_none());
    }

    #[test]
    fn untracked_results_carry_no_graph() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        let c = a.mul(&b).unwrap();
        assert!(!c.tracked());
        assert!(matches!(c.op(), Op::Leaf));
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let table = p(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = table.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(picked.shape(), &[3, 2]);
        assert_eq!(picked.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        picked.sum().unwrap().backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn take_per_row_picks_and_scatters() {
        let logits = p(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = logits.take_per_row(&[2, 0]).unwrap();
        assert_eq!(picked.data(), &[3.0, 4.0]);
        picked.sum().unwrap().backward().unwrap();
        assert_eq!(logits.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reduce_mean_averages_everything() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!((x.mean().unwrap().item() - 2.5).abs() < 1e-15);
    }

    // Central finite differences vs backward for every primitive, on random
    // inputs in [-3, 3]. h = 1e-5, relative error < 1e-6.
    #[test]
    fn finite_differences_match_backward_for_all_primitives() {
        let h = 1e-5;
        let tol = 1e-6;
        let mut rng = Lcg(0x5eed);

        // Each case: (name, input shapes, scalar loss builder).
        type Build = fn(&[Tensor]) -> Tensor;
        let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
            ("add", vec![vec![2, 3], vec![2, 3]], |v| {
                v[0].add(&v[1]).unwrap().mean().unwrap()
            }),
            ("sub", vec![vec![2, 3], vec![2, 3]], |v| {
                v[0].sub(&v[1])
                    .unwrap()
                    .mul(&v[0].sub(&v[1]).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("mul", vec![vec![4], vec![4]], |v| {
                v[0].mul(&v[1]).unwrap().sum().unwrap()
            }),
            ("neg", vec![vec![3]], |v| v[0].neg().unwrap().sum().unwrap()),
            ("scale", vec![vec![3]], |v| {
                v[0].scale(1.7).unwrap().sum().unwrap()
            }),
            ("add_scalar", vec![vec![3]], |v| {
                v[0].add_scalar(0.3)
                    .unwrap()
                    .mul(&v[0])
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("matmul", vec![vec![2, 3], vec![3, 2]], |v| {
                v[0].matmul(&v[1])
                    .unwrap()
                    .mul(&v[0].matmul(&v[1]).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("transpose", vec![vec![2, 3], vec![2, 3]], |v| {
                v[0].transpose()
                    .unwrap()
                    .matmul(&v[1])
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("add_row", vec![vec![3, 2], vec![2]], |v| {
                v[0].add_row(&v[1])
                    .unwrap()
                    .mul(&v[0].add_row(&v[1]).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("add_col", vec![vec![3, 2], vec![3]], |v| {
                v[0].add_col(&v[1])
                    .unwrap()
                    .mul(&v[0].add_col(&v[1]).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("relu", vec![vec![6]], |v| {
                v[0].relu().unwrap().mul(&v[0]).unwrap().sum().unwrap()
            }),
            ("row_sum", vec![vec![3, 4]], |v| {
                let s = v[0].row_sum().unwrap();
                s.mul(&s).unwrap().sum().unwrap()
            }),
            ("log_sum_exp", vec![vec![3, 4]], |v| {
                v[0].log_sum_exp().unwrap().sum().unwrap()
            }),
            ("mean", vec![vec![5]], |v| {
                let m = v[0].mean().unwrap();
                m.mul(&m).unwrap()
            }),
            ("gather_rows", vec![vec![4, 3]], |v| {
                let g = v[0].gather_rows(&[1, 3, 1]).unwrap();
                g.mul(&g).unwrap().sum().unwrap()
            }),
            ("take_per_row", vec![vec![3, 4]], |v| {
                let g = v[0].take_per_row(&[0, 3, 2]).unwrap();
                g.mul(&g).unwrap().sum().unwrap()
            }),
            ("reshape", vec![vec![2, 3]], |v| {
                let r = v[0].reshape(&[3, 2]).unwrap();
                r.mul(&r).unwrap().sum().unwrap()
            }),
        ];

        for (name, shapes, build) in cases {
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    // keep relu inputs away from the kink at 0
                    let data: Vec<f64> = (0..n)
                        .map(|_| {
                            let v = rng.uniform(-3.0, 3.0);
                            if v.abs() < 0.05 {
                                v + 0.1
                            } else {
                                v
                            }
                        })
                        .collect();
                    Tensor::param(s, data).unwrap()
                })
                .collect();

            let loss = build(&inputs);
            loss.backward().unwrap();

            for (arg, input) in inputs.iter().enumerate() {
                let analytic = input.grad().unwrap();
                for k in 0..input.numel() {
                    let eval = |delta: f64| {
                        let shifted: Vec<Tensor> = inputs
                            .iter()
                            .enumerate()
                            .map(|(j, t)| {
                                let mut d = t.data().to_vec();
                                if j == arg {
                                    d[k] += delta;
                                }
                                Tensor::param(t.shape(), d).unwrap()
                            })
                            .collect();
                        build(&shifted).item()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let denom = analytic[k].abs().max(fd.abs()).max(1.0);
                    assert!(
                        (analytic[k] - fd).abs() / denom < tol,
                        "{name} arg{arg}[{k}]: backward {} vs fd {}",
                        analytic[k],
                        fd
                    );
                }
            }
        }
    }

    // Small deterministic generator for test inputs.
    struct Lcg(u64);
    impl Lcg {
        fn next_u64(&mut self) -> u64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            self.0
        }
        fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            lo + u * (hi - lo)
        }
    }
}
