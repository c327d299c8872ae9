//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every op records its inputs and a vector-Jacobian product closure; calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse
//! topological order and *accumulates* gradients into the leaves that were
//! created with `requires_grad` (parameters). Intermediate nodes never keep
//! gradients around.
//!
//! Conventions:
//! * data is row-major, shapes are explicit (`[rows, cols]` for matrices);
//! * there is no implicit broadcasting — the one exception is
//!   [`Tensor::add_bias`], which adds a length-`cols` vector to every row;
//! * forward values are immutable once a graph is built; parameter updates go
//!   through [`Tensor::set_data`] between steps;
//! * graph construction and backward are single-threaded.

mod check;
mod nn;

pub use check::{grad_check, GradCheckReport};

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Errors raised by tensor construction and ops.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {got}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    IncompatibleShapes {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

pub type TensorResult<T> = Result<T, TensorError>;

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

static NEXT_NODE_ID: AtomicUsize = AtomicUsize::new(0);

/// Vector-Jacobian product: maps the node's adjoint to one adjoint per parent.
type Vjp = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    /// Accumulated gradient; only ever populated on `requires_grad` leaves.
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    vjp: Option<Vjp>,
}

/// A shared handle to one node of the computation graph.
///
/// Cloning is cheap (reference count bump) and clones alias the same storage.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        vjp: Option<Vjp>,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            vjp,
        }))
    }

    /// Builds a constant (non-trainable) tensor; errors when the value count
    /// does not match the shape.
    pub fn from_values(shape: &[usize], values: Vec<f64>) -> TensorResult<Tensor> {
        let expected = numel_of(shape);
        if values.len() != expected {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Tensor::new_node(shape.to_vec(), values, false, Vec::new(), None))
    }

    /// Builds a trainable leaf (gradients accumulate into it on backward).
    pub fn param(shape: &[usize], values: Vec<f64>) -> TensorResult<Tensor> {
        let expected = numel_of(shape);
        if values.len() != expected {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Tensor::new_node(shape.to_vec(), values, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new_node(shape.to_vec(), vec![0.0; numel_of(shape)], false, Vec::new(), None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new_node(vec![1], vec![v], false, Vec::new(), None)
    }

    // ── Accessors ──────────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Copy of the forward values.
    pub fn data_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor. Panics on anything larger: callers
    /// only reach for `item` on losses and other reduced scalars.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert!(d.len() == 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.0.data.borrow()[idx]
    }

    /// Overwrites the stored values (same length required). Used by the
    /// optimizer and by finite-difference probes between graph builds.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    pub fn set_value_at(&self, idx: usize, v: f64) {
        self.0.data.borrow_mut()[idx] = v;
    }

    /// Copy of the accumulated gradient, if any backward pass has reached
    /// this leaf since the last [`Tensor::zero_grad`].
    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Forward-identical copy that is cut off from the graph: no gradient
    /// flows through it and it never accumulates one itself.
    pub fn stop_gradient(&self) -> Tensor {
        Tensor::new_node(
            self.0.shape.clone(),
            self.0.data.borrow().clone(),
            false,
            Vec::new(),
            None,
        )
    }

    // ── Graph plumbing ─────────────────────────────────────────────────────

    fn from_op<F>(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, vjp: F) -> Tensor
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
    {
        let requires = parents.iter().any(Tensor::requires_grad);
        if requires {
            Tensor::new_node(shape, data, true, parents, Some(Box::new(vjp)))
        } else {
            // Nothing upstream is trainable: collapse to a constant leaf so
            // forward-only passes build no graph at all.
            Tensor::new_node(shape, data, false, Vec::new(), None)
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients are *added* into each
    /// trainable leaf, so separate backward calls accumulate until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> TensorResult<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.0.shape.clone(),
            });
        }
        if !self.0.requires_grad {
            return Ok(()); // nothing trainable upstream
        }

        // Iterative DFS postorder; reversed it is a topological order, so every
        // node's adjoint is complete before the node is expanded.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, next_parent)) = stack.pop() {
            if next_parent < node.0.parents.len() {
                let parent = node.0.parents[next_parent].clone();
                stack.push((node, next_parent + 1));
                if parent.0.requires_grad && visited.insert(parent.0.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut adjoints: HashMap<usize, Vec<f64>> = HashMap::new();
        adjoints.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let adj = match adjoints.remove(&node.0.id) {
                Some(a) => a,
                None => continue,
            };
            match &node.0.vjp {
                Some(vjp) => {
                    let contribs = vjp(&adj);
                    debug_assert_eq!(contribs.len(), node.0.parents.len());
                    for (parent, c) in node.0.parents.iter().zip(contribs) {
                        if !parent.0.requires_grad {
                            continue;
                        }
                        adjoints
                            .entry(parent.0.id)
                            .and_modify(|acc| {
                                for (x, y) in acc.iter_mut().zip(&c) {
                                    *x += *y;
                                }
                            })
                            .or_insert(c);
                    }
                }
                None => {
                    // Trainable leaf: fold the adjoint into the gradient.
                    let mut slot = node.0.grad.borrow_mut();
                    let buf = slot.get_or_insert_with(|| vec![0.0; node.numel()]);
                    for (x, y) in buf.iter_mut().zip(&adj) {
                        *x += *y;
                    }
                }
            }
        }
        Ok(())
    }

    // ── Elementwise ops ────────────────────────────────────────────────────

    fn check_same_shape(&self, rhs: &Tensor, op: &'static str) -> TensorResult<()> {
        if self.0.shape != rhs.0.shape {
            return Err(TensorError::IncompatibleShapes {
                op,
                left: self.0.shape.clone(),
                right: rhs.0.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> TensorResult<Tensor> {
        self.check_same_shape(rhs, "add")?;
        let a = self.0.data.borrow();
        let b = rhs.0.data.borrow();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            self.0.shape.clone(),
            out,
            vec![self.clone(), rhs.clone()],
            |adj| vec![adj.to_vec(), adj.to_vec()],
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> TensorResult<Tensor> {
        self.check_same_shape(rhs, "sub")?;
        let a = self.0.data.borrow();
        let b = rhs.0.data.borrow();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            self.0.shape.clone(),
            out,
            vec![self.clone(), rhs.clone()],
            |adj| vec![adj.to_vec(), adj.iter().map(|g| -g).collect()],
        ))
    }

    pub fn mul(&self, rhs: &Tensor) -> TensorResult<Tensor> {
        self.check_same_shape(rhs, "mul")?;
        let a = self.0.data.borrow().clone();
        let b = rhs.0.data.borrow().clone();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        Ok(Tensor::from_op(
            self.0.shape.clone(),
            out,
            vec![self.clone(), rhs.clone()],
            move |adj| {
                vec![
                    adj.iter().zip(&b).map(|(g, y)| g * y).collect(),
                    adj.iter().zip(&a).map(|(g, x)| g * x).collect(),
                ]
            },
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.0.data.borrow().iter().map(|x| x * c).collect();
        Tensor::from_op(self.0.shape.clone(), out, vec![self.clone()], move |adj| {
            vec![adj.iter().map(|g| g * c).collect()]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.0.data.borrow().iter().map(|x| x + c).collect();
        Tensor::from_op(self.0.shape.clone(), out, vec![self.clone()], |adj| {
            vec![adj.to_vec()]
        })
    }

    pub fn exp(&self) -> Tensor {
        let out: Vec<f64> = self.0.data.borrow().iter().map(|x| x.exp()).collect();
        let y = out.clone();
        Tensor::from_op(self.0.shape.clone(), out, vec![self.clone()], move |adj| {
            vec![adj.iter().zip(&y).map(|(g, v)| g * v).collect()]
        })
    }

    pub fn log(&self) -> Tensor {
        let x = self.0.data.borrow().clone();
        let out: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        Tensor::from_op(self.0.shape.clone(), out, vec![self.clone()], move |adj| {
            vec![adj.iter().zip(&x).map(|(g, v)| g / v).collect()]
        })
    }

    /// Elementwise max(0, x). The subgradient at exactly zero is taken as 0,
    /// which is precisely the kind of kink [`grad_check`] is meant to flag.
    pub fn relu(&self) -> Tensor {
        let x = self.0.data.borrow().clone();
        let out: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        Tensor::from_op(self.0.shape.clone(), out, vec![self.clone()], move |adj| {
            vec![adj
                .iter()
                .zip(&x)
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect()]
        })
    }

    // ── Reductions ─────────────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.0.data.borrow().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |adj| {
            vec![vec![adj[0]; n]]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.0.data.borrow().iter().sum();
        Tensor::from_op(vec![1], vec![total / n as f64], vec![self.clone()], move |adj| {
            vec![vec![adj[0] / n as f64; n]]
        })
    }

    /// Row sums of a matrix: `[m, n] -> [m]`.
    pub fn sum_rows(&self) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("sum_rows")?;
        let d = self.0.data.borrow();
        let out: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        drop(d);
        Ok(Tensor::from_op(vec![m], out, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = adj[i];
                }
            }
            vec![dx]
        }))
    }

    // ── Shape ops ──────────────────────────────────────────────────────────

    pub(crate) fn dims2(&self, op: &'static str) -> TensorResult<(usize, usize)> {
        match self.0.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::NotAMatrix {
                op,
                shape: self.0.shape.clone(),
            }),
        }
    }

    pub fn transpose(&self) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let d = self.0.data.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(vec![n, m], out, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = adj[j * m + i];
                }
            }
            vec![dx]
        }))
    }

    /// Stacks same-width matrices on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> TensorResult<Tensor> {
        if parts.is_empty() {
            return Err(contract("concat_rows", "no inputs"));
        }
        let (_, n) = parts[0].dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut heights = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_rows")?;
            if pn != n {
                return Err(TensorError::IncompatibleShapes {
                    op: "concat_rows",
                    left: vec![rows, n],
                    right: p.shape().to_vec(),
                });
            }
            rows += pm;
            heights.push(pm);
            data.extend_from_slice(&p.0.data.borrow());
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(vec![rows, n], data, parents, move |adj| {
            let mut out = Vec::with_capacity(heights.len());
            let mut offset = 0;
            for h in &heights {
                out.push(adj[offset * n..(offset + h) * n].to_vec());
                offset += h;
            }
            out
        }))
    }

    /// Stacks same-height matrices side by side.
    pub fn concat_cols(parts: &[&Tensor]) -> TensorResult<Tensor> {
        if parts.is_empty() {
            return Err(contract("concat_cols", "no inputs"));
        }
        let (m, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(TensorError::IncompatibleShapes {
                    op: "concat_cols",
                    left: parts[0].shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pd = p.0.data.borrow();
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let widths_bw = widths.clone();
        Ok(Tensor::from_op(vec![m, total], data, parents, move |adj| {
            let mut out = Vec::with_capacity(widths_bw.len());
            let mut offset = 0;
            for w in &widths_bw {
                let mut dx = vec![0.0; m * w];
                for i in 0..m {
                    dx[i * w..(i + 1) * w]
                        .copy_from_slice(&adj[i * total + offset..i * total + offset + w]);
                }
                out.push(dx);
                offset += w;
            }
            out
        }))
    }

    /// Stacks length-`d` vectors into an `[n, d]` matrix.
    pub fn stack_rows(rows: &[&Tensor]) -> TensorResult<Tensor> {
        if rows.is_empty() {
            return Err(contract("stack_rows", "no inputs"));
        }
        let d = match rows[0].shape() {
            [d] => *d,
            other => {
                return Err(TensorError::Contract {
                    op: "stack_rows",
                    msg: format!("expected vectors, got shape {other:?}"),
                })
            }
        };
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.shape() != [d] {
                return Err(TensorError::IncompatibleShapes {
                    op: "stack_rows",
                    left: vec![d],
                    right: r.shape().to_vec(),
                });
            }
            data.extend_from_slice(&r.0.data.borrow());
        }
        let parents: Vec<Tensor> = rows.iter().map(|r| (*r).clone()).collect();
        let n = rows.len();
        Ok(Tensor::from_op(vec![n, d], data, parents, move |adj| {
            (0..n).map(|i| adj[i * d..(i + 1) * d].to_vec()).collect()
        }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("slice_rows")?;
        if start + len > m {
            return Err(contract(
                "slice_rows",
                format!("rows {start}..{} out of range for {m} rows", start + len),
            ));
        }
        let data = self.0.data.borrow()[start * n..(start + len) * n].to_vec();
        Ok(Tensor::from_op(vec![len, n], data, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            dx[start * n..(start + len) * n].copy_from_slice(adj);
            vec![dx]
        }))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("slice_cols")?;
        if start + len > n {
            return Err(contract(
                "slice_cols",
                format!("cols {start}..{} out of range for {n} cols", start + len),
            ));
        }
        let d = self.0.data.borrow();
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&d[i * n + start..i * n + start + len]);
        }
        drop(d);
        Ok(Tensor::from_op(vec![m, len], data, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                dx[i * n + start..i * n + start + len].copy_from_slice(&adj[i * len..(i + 1) * len]);
            }
            vec![dx]
        }))
    }

    /// Extracts one row of a matrix as a vector.
    pub fn row(&self, i: usize) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("row")?;
        if i >= m {
            return Err(contract("row", format!("row {i} out of range for {m} rows")));
        }
        let data = self.0.data.borrow()[i * n..(i + 1) * n].to_vec();
        Ok(Tensor::from_op(vec![n], data, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            dx[i * n..(i + 1) * n].copy_from_slice(adj);
            vec![dx]
        }))
    }

    // ── Linear algebra ─────────────────────────────────────────────────────

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> TensorResult<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::IncompatibleShapes {
                op: "matmul",
                left: self.0.shape.clone(),
                right: rhs.0.shape.clone(),
            });
        }
        let a = self.0.data.borrow().clone();
        let b = rhs.0.data.borrow().clone();
        let out = mm_nn(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            move |adj| vec![mm_nt(adj, &b, m, n, k), mm_tn(&a, adj, m, k, n)],
        ))
    }

    /// Adds a length-`n` bias vector to every row of an `[m, n]` matrix — the
    /// only broadcasting this engine performs.
    pub fn add_bias(&self, bias: &Tensor) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("add_bias")?;
        if bias.shape() != [n] {
            return Err(TensorError::IncompatibleShapes {
                op: "add_bias",
                left: self.0.shape.clone(),
                right: bias.shape().to_vec(),
            });
        }
        let x = self.0.data.borrow();
        let b = bias.0.data.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = x[i * n + j] + b[j];
            }
        }
        drop(x);
        drop(b);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), bias.clone()],
            move |adj| {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += adj[i * n + j];
                    }
                }
                vec![adj.to_vec(), db]
            },
        ))
    }
}

// ── Matmul kernels ──────────────────────────────────────────────────────────
// All three walk both operands row-contiguously (i-k-j order) so the inner
// loops vectorize.

/// `a[m,k] * b[k,n]`
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// `a[m,n] * b[k,n]^T -> [m,k]` (both operands read along rows)
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            c[i * k + p] = acc;
        }
    }
    c
}

/// `a[m,k]^T * b[m,n] -> [k,n]`
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn from_values_checks_element_count() {
        let t = Tensor::from_values(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);

        let err = Tensor::from_values(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));

        // Zero-size tensors are legal.
        let empty = Tensor::from_values(&[0], vec![]).unwrap();
        assert_eq!(empty.numel(), 0);
    }

    #[test]
    fn matmul_two_by_two() {
        let a = Tensor::from_values(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_values(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Tensor::param(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let f = x.mul(&x).unwrap().sum();
        f.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let f = x.mul(&x).unwrap().sum();
        f.backward().unwrap();
        f.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![4.0, 8.0]); // doubled: 2 sweeps

        x.zero_grad();
        f.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_deterministic() {
        let x = Tensor::param(&[4], vec![0.3, -1.1, 2.2, 0.7]).unwrap();
        let w = Tensor::param(&[4], vec![1.5, 0.2, -0.4, 0.9]).unwrap();
        let f = x.mul(&w).unwrap().exp().sum();
        f.backward().unwrap();
        let first = (x.grad_vec().unwrap(), w.grad_vec().unwrap());
        x.zero_grad();
        w.zero_grad();
        f.backward().unwrap();
        let second = (x.grad_vec().unwrap(), w.grad_vec().unwrap());
        assert_eq!(first, second); // bitwise
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        let x = Tensor::param(&[3], vec![0.5, -0.25, 1.5]).unwrap();
        let f = x.mul(&x).unwrap().sum();
        let g = x.exp().sum();

        f.backward().unwrap();
        let gf = x.grad_vec().unwrap();
        x.zero_grad();
        g.backward().unwrap();
        let gg = x.grad_vec().unwrap();
        x.zero_grad();

        let (a, b) = (2.5, -0.75);
        let h = f.scale(a).add(&g.scale(b)).unwrap();
        h.backward().unwrap();
        let gh = x.grad_vec().unwrap();
        for i in 0..3 {
            assert_close(gh[i], a * gf[i] + b * gg[i], 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_roots() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul(&x).unwrap();
        assert!(matches!(
            y.backward().unwrap_err(),
            TensorError::NonScalarRoot { .. }
        ));
    }

    #[test]
    fn stop_gradient_blocks_flow_exactly() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let frozen = x.stop_gradient();
        assert_eq!(frozen.data_vec(), x.data_vec());
        // f = sum(x * stop(x)): only the live factor contributes.
        let f = x.mul(&frozen).unwrap().sum();
        f.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![1.0, 2.0]); // d/dx sum(x*c) = c
        assert!(frozen.grad_vec().is_none());
    }

    #[test]
    fn shared_subgraph_accumulates_both_paths() {
        // f = sum(y) + sum(y*y) with y = 2x; df/dx = 2 + 8x.
        let x = Tensor::param(&[2], vec![0.5, -1.0]).unwrap();
        let y = x.scale(2.0);
        let f = y.sum().add(&y.mul(&y).unwrap().sum()).unwrap();
        f.backward().unwrap();
        let g = x.grad_vec().unwrap();
        assert_close(g[0], 2.0 + 8.0 * 0.5, 1e-12);
        assert_close(g[1], 2.0 + -8.0, 1e-12);
    }

    #[test]
    fn concat_and_slice_round_trip_gradients() {
        let a = Tensor::param(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::param(&[1, 2], vec![3.0, 4.0]).unwrap();
        let cat = Tensor::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 2]);
        let f = cat.slice_rows(1, 1).unwrap().sum();
        f.backward().unwrap();
        assert_eq!(a.grad_vec().unwrap(), vec![0.0, 0.0]); // sliced away
        assert_eq!(b.grad_vec().unwrap(), vec![1.0, 1.0]);

        let side = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(side.data_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        b.zero_grad();
        let g = side.slice_cols(2, 2).unwrap().sum();
        g.backward().unwrap();
        assert_eq!(b.grad_vec().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn transpose_matches_manual_layout() {
        let a = Tensor::from_values(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn add_bias_broadcasts_over_rows() {
        let x = Tensor::param(&[2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::param(&[2], vec![10.0, 20.0]).unwrap();
        let y = x.add_bias(&b).unwrap();
        assert_eq!(y.data_vec(), vec![10.0, 20.0, 11.0, 21.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad_vec().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn constant_only_graphs_stay_leafless() {
        let a = Tensor::from_values(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.exp().sum();
        assert!(!b.requires_grad());
        b.backward().unwrap(); // no-op, no error
    }
}
