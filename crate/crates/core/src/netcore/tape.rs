//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the nodes in reverse and accumulates adjoints. Scalars are `1 x 1`
//! matrices. Loss operations store their local gradient when recorded, so
//! the backward pass only scales it by the upstream adjoint.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    /// `(n x d) + (1 x d)` broadcast over rows.
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    GatherRows(Var, Vec<usize>),
    /// Scalar-valued op with its gradient wrt `input` precomputed.
    Reduce { input: Var, local_grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// True when a nonzero adjoint reached `v`.
    pub fn touched(&self, v: Var) -> bool {
        self.get(v).is_some_and(|g| g.iter().any(|&x| x != 0.0))
    }
}

const NORM_FLOOR: f64 = 1e-12;

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.raw_dim());
    for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
        let r: Vec<f64> = row.to_vec();
        softmax_row(&r, o.as_slice_mut().unwrap());
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::from_elem((1, 1), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).mapv(|t| if t > 0.0 { t } else { slope * t });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_FLOOR);
            row.mapv_inplace(|t| t / n);
        }
        self.push(v, Op::NormalizeRows(x))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let v = self.value(x).select(Axis(0), &rows);
        self.push(v, Op::GatherRows(x, rows))
    }

    /// Records a scalar whose gradient wrt `input` is already known.
    pub fn reduce(&mut self, input: Var, value: f64, local_grad: Tensor) -> Var {
        debug_assert_eq!(local_grad.dim(), self.value(input).dim());
        self.push(Tensor::from_elem((1, 1), value), Op::Reduce { input, local_grad })
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a variable that was never recorded".into(),
            ));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    acc(&mut grads, *a, Tensor::from_elem(self.value(*a).raw_dim(), s));
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *bias, gb);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(self.value(*x), |gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= slope;
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.raw_dim());
                    for ((yr, gr), mut out) in y.rows().into_iter().zip(g.rows()).zip(gx.rows_mut()) {
                        let dot = yr.dot(&gr);
                        for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NormalizeRows(x) => {
                    let xv = self.value(*x);
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.raw_dim());
                    for (((xr, yr), gr), mut out) in
                        xv.rows().into_iter().zip(y.rows()).zip(g.rows()).zip(gx.rows_mut())
                    {
                        let n = xr.dot(&xr).sqrt().max(NORM_FLOOR);
                        let dot = yr.dot(&gr);
                        for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                            *o = (gi - yi * dot) / n;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows(x, rows) => {
                    let mut gx = Tensor::zeros(self.value(*x).raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Reduce { input, local_grad } => {
                    acc(&mut grads, *input, local_grad * g[[0, 0]]);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
