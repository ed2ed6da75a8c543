//! A small tape-based reverse-mode differentiator over `f64` matrices.
//!
//! Every node holds its forward value. [`Graph::backward`] walks the tape
//! once in reverse and returns the gradient of a scalar output with respect
//! to every node. Only the operations the training objectives need are
//! provided; several of them (the Gaussian log-joint, row-wise circular
//! correlation) are fused so their backward passes stay cheap.

use ndarray::{Array2, Axis, Zip};

use crate::kge::{circular_convolution, circular_correlation};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` is same-shaped, a `1 x m` row broadcast over rows, or a `1 x 1` scalar.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Sqrt(Var),
    Relu(Var),
    ClampMin(Var, f64),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    LogSoftmaxRows(Var),
    GaussLogJoint {
        omega: Var,
        means: Var,
        log_vars: Var,
    },
    CircCorrRows(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input (parameter or constant); gradients are reported for it.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let v = if va.dim() == vb.dim() {
            va + vb
        } else if vb.dim() == (1, 1) {
            va + vb[[0, 0]]
        } else {
            assert_eq!(vb.nrows(), 1, "add: incompatible shapes");
            assert_eq!(vb.ncols(), va.ncols(), "add: incompatible shapes");
            va + vb
        };
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0).sqrt());
        self.push(v, Op::Sqrt(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `max(a, floor)` elementwise; no gradient flows where the floor binds.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(floor));
        self.push(v, Op::ClampMin(a, floor))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row mismatch");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &rows);
        self.push(v, Op::Gather(a, rows))
    }

    /// Picks column `cols[i]` from row `i`, giving an `n x 1` column.
    pub fn pick(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len(), "pick: one column per row");
        let v = Array2::from_shape_fn((cols.len(), 1), |(i, _)| x[[i, cols[i]]]);
        self.push(v, Op::Pick(a, cols))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// `out[i, c] = log N(omega_i; means_c, diag(exp(log_vars_c)))`.
    pub fn gauss_log_joint(&mut self, omega: Var, means: Var, log_vars: Var) -> Var {
        let (w, mu, s) = (self.value(omega), self.value(means), self.value(log_vars));
        let (n, d) = w.dim();
        let k = mu.nrows();
        assert_eq!(mu.ncols(), d);
        assert_eq!(s.dim(), (k, d));
        let inv = s.mapv(|x| (-x).exp());
        let mut out = Array2::zeros((n, k));
        for i in 0..n {
            for c in 0..k {
                let mut acc = 0.0;
                for j in 0..d {
                    let diff = w[[i, j]] - mu[[c, j]];
                    acc += LN_2PI + s[[c, j]] + diff * diff * inv[[c, j]];
                }
                out[[i, c]] = -0.5 * acc;
            }
        }
        self.push(
            out,
            Op::GaussLogJoint {
                omega,
                means,
                log_vars,
            },
        )
    }

    /// Row-wise circular correlation `out[r, k] = sum_i a[r, i] b[r, (k + i) mod d]`.
    pub fn circ_corr_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "circ_corr_rows: shape mismatch");
        let mut out = Array2::zeros(va.dim());
        for r in 0..va.nrows() {
            let row = circular_correlation(
                va.row(r).as_slice().expect("contiguous"),
                vb.row(r).as_slice().expect("contiguous"),
            )
            .expect("equal lengths");
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&row[..]));
        }
        self.push(out, Op::CircCorrRows(a, b))
    }

    /// Gradients of the `1 x 1` node `output` with respect to every leaf.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.dot(&vb.t()));
                    acc(&mut grads, *b, va.t().dot(&g));
                }
                Op::Add(a, b) => {
                    let vb = self.value(*b);
                    let gb = if vb.dim() == g.dim() {
                        g.clone()
                    } else if vb.dim() == (1, 1) {
                        Array2::from_elem((1, 1), g.sum())
                    } else {
                        g.sum_axis(Axis(0)).insert_axis(Axis(0))
                    };
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, &g * vb);
                    acc(&mut grads, *b, &g * va);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, &g * &x.mapv(sigmoid));
                }
                Op::Sqrt(a) => {
                    let mut out = g;
                    Zip::from(&mut out).and(&node.value).for_each(|o, &y| {
                        *o = if y > 0.0 { *o / (2.0 * y) } else { 0.0 };
                    });
                    acc(&mut grads, *a, out);
                }
                Op::Relu(a) => {
                    let mut out = g;
                    Zip::from(&mut out).and(self.value(*a)).for_each(|o, &x| {
                        if x <= 0.0 {
                            *o = 0.0;
                        }
                    });
                    acc(&mut grads, *a, out);
                }
                Op::ClampMin(a, floor) => {
                    let mut out = g;
                    Zip::from(&mut out).and(self.value(*a)).for_each(|o, &x| {
                        if x < *floor {
                            *o = 0.0;
                        }
                    });
                    acc(&mut grads, *a, out);
                }
                Op::SumRows(a) => {
                    let shape = self.value(*a).dim();
                    let out = Array2::from_shape_fn(shape, |(i, _)| g[[i, 0]]);
                    acc(&mut grads, *a, out);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).dim();
                    acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let k = g[[0, 0]] / x.len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(x.dim(), k));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Gather(a, rows) => {
                    let mut out = Array2::zeros(self.value(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = out.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Pick(a, cols) => {
                    let mut out = Array2::zeros(self.value(*a).dim());
                    for (i, &c) in cols.iter().enumerate() {
                        out[[i, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *a, out);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut out = g.clone();
                    for (mut orow, (grow, yrow)) in out.rows_mut().into_iter().zip(g.rows().into_iter().zip(y.rows())) {
                        let total = grow.sum();
                        Zip::from(&mut orow).and(&yrow).for_each(|o, &ly| *o -= ly.exp() * total);
                    }
                    acc(&mut grads, *a, out);
                }
                Op::GaussLogJoint {
                    omega,
                    means,
                    log_vars,
                } => {
                    let (w, mu, s) = (self.value(*omega), self.value(*means), self.value(*log_vars));
                    let (n, d) = w.dim();
                    let k = mu.nrows();
                    let inv = s.mapv(|x| (-x).exp());
                    let mut gw = Array2::zeros((n, d));
                    let mut gm = Array2::zeros((k, d));
                    let mut gs = Array2::zeros((k, d));
                    for i in 0..n {
                        for c in 0..k {
                            let gic = g[[i, c]];
                            if gic == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                let diff = w[[i, j]] - mu[[c, j]];
                                let scaled = diff * inv[[c, j]];
                                gw[[i, j]] -= gic * scaled;
                                gm[[c, j]] += gic * scaled;
                                gs[[c, j]] += gic * 0.5 * (diff * scaled - 1.0);
                            }
                        }
                    }
                    acc(&mut grads, *omega, gw);
                    acc(&mut grads, *means, gm);
                    acc(&mut grads, *log_vars, gs);
                }
                Op::CircCorrRows(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Array2::zeros(va.dim());
                    let mut gb = Array2::zeros(vb.dim());
                    for r in 0..va.nrows() {
                        let gr = g.row(r).to_vec();
                        let ar = va.row(r).to_vec();
                        let br = vb.row(r).to_vec();
                        let da = circular_correlation(&gr, &br).expect("equal lengths");
                        let db = circular_convolution(&ar, &gr).expect("equal lengths");
                        ga.row_mut(r).assign(&ndarray::ArrayView1::from(&da[..]));
                        gb.row_mut(r).assign(&ndarray::ArrayView1::from(&db[..]));
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for the leaf `v`, zeros when the output does not depend on it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn matmul_chain() {
        let mut g = Graph::new();
        let x = g.leaf(array![[1.0, 2.0]]);
        let w = g.leaf(array![[3.0], [4.0]]);
        let y = g.matmul(x, w);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.get(w), array![[1.0], [2.0]]);
        assert_eq!(grads.get(x), array![[3.0, 4.0]]);
    }

    #[test]
    fn unused_leaf_gets_zeros() {
        let mut g = Graph::new();
        let a = g.leaf(array![[1.0, 2.0]]);
        let b = g.leaf(array![[5.0]]);
        let s = g.sum(a);
        let grads = g.backward(s);
        assert_eq!(grads.get(b), array![[0.0]]);
        assert_eq!(grads.get(a), array![[1.0, 1.0]]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let a = g.leaf(array![[3.0]]);
        let sq = g.mul(a, a);
        let s = g.sum(sq);
        assert_eq!(g.backward(s).get(a), array![[6.0]]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
