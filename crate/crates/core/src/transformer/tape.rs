//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints.

use std::rc::Rc;

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `A B^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// Broadcast a `1 x n` row over every row of the left operand.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Elementwise product with a constant mask (dropout).
    Mask(Var, Rc<DMatrix<f64>>),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: DMatrix<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Concatenate rows into one `1 x (rows * cols)` row.
    FlattenRows(Var),
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    /// `x` where positive, 1 elsewhere.
    PositiveOrOne(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b).transpose();
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 x n bias");
        let mut v = self.value(a).clone();
        for mut line in v.row_iter_mut() {
            line += r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn mask(&mut self, a: Var, mask: DMatrix<f64>) -> Var {
        let v = self.value(a).component_mul(&mask);
        self.push(v, Op::Mask(a, Rc::new(mask)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with a learned scale and offset (`1 x n` each).
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
            let var = row.norm_squared() / n;
            let is = 1.0 / (var + eps).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut y = xhat.clone();
        for mut row in y.row_iter_mut() {
            row.component_mul_assign(g);
            row += b;
        }
        self.push(
            y,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).columns(start, len).into_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut c = 0;
        for p in parts {
            let m = self.value(*p);
            v.columns_mut(c, m.ncols()).copy_from(m);
            c += m.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn flatten_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_row_iterator(1, m.len(), m.transpose().iter().copied());
        self.push(v, Op::FlattenRows(a))
    }

    /// Unfold a `L x c` sequence into `N x (kernel * c)` patches,
    /// `N = (L - kernel) / stride + 1`; row `i` stacks input rows
    /// `i*stride .. i*stride + kernel` side by side.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize) -> Var {
        let xv = self.value(x);
        let (l, c) = xv.shape();
        let n = (l - kernel) / stride + 1;
        let mut v = DMatrix::zeros(n, kernel * c);
        for i in 0..n {
            for j in 0..kernel {
                v.view_mut((i, j * c), (1, c))
                    .copy_from(&xv.row(i * stride + j));
            }
        }
        self.push(v, Op::Im2Col { x, kernel, stride })
    }

    pub fn positive_or_one(&mut self, a: Var) -> Var {
        let v = self.value(a).map(positive_or_one);
        self.push(v, Op::PositiveOrOne(a))
    }

    /// Adjoints of every node given the adjoint `seed` of `output`.
    pub fn backward(&self, output: Var, seed: DMatrix<f64>) -> Gradients {
        let mut g: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        g[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    g[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = &dy * self.value(*b).transpose();
                    let db = self.value(*a).transpose() * &dy;
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = &dy * self.value(*b);
                    let db = dy.transpose() * self.value(*a);
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *a, dy.clone());
                    accumulate(&mut g, *b, dy);
                }
                Op::AddRow(a, row) => {
                    let db = DMatrix::from_fn(1, dy.ncols(), |_, j| dy.column(j).sum());
                    accumulate(&mut g, *a, dy);
                    accumulate(&mut g, *row, db);
                }
                Op::Scale(a, s) => accumulate(&mut g, *a, dy * *s),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let dx = dy.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate(&mut g, *a, dx);
                }
                Op::Mask(a, m) => accumulate(&mut g, *a, dy.component_mul(m)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = dy.component_mul(y);
                    for (r, mut row) in dx.row_iter_mut().enumerate() {
                        let s = row.sum();
                        row -= y.row(r) * s;
                    }
                    accumulate(&mut g, *a, dx);
                }
                Op::LayerNormRows {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = xhat.ncols() as f64;
                    let gv = self.value(*gamma);
                    let dbeta = DMatrix::from_fn(1, dy.ncols(), |_, j| dy.column(j).sum());
                    let dyx = dy.component_mul(xhat);
                    let dgamma = DMatrix::from_fn(1, dy.ncols(), |_, j| dyx.column(j).sum());
                    let mut dx = dy.clone();
                    for (r, mut row) in dx.row_iter_mut().enumerate() {
                        row.component_mul_assign(gv);
                        let xr = xhat.row(r);
                        let mean_d = row.sum() / n;
                        let mean_dx = row.dot(&xr) / n;
                        let adj = (&row - xr * mean_dx).add_scalar(-mean_d) * inv_std[r];
                        row.copy_from(&adj);
                    }
                    accumulate(&mut g, *x, dx);
                    accumulate(&mut g, *gamma, dgamma);
                    accumulate(&mut g, *beta, dbeta);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut dx = DMatrix::zeros(r, c);
                    dx.columns_mut(*start, dy.ncols()).copy_from(&dy);
                    accumulate(&mut g, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut g, *p, dy.columns(c, w).into_owned());
                        c += w;
                    }
                }
                Op::FlattenRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let dx = DMatrix::from_row_iterator(r, c, dy.iter().copied());
                    accumulate(&mut g, *a, dx);
                }
                Op::Im2Col { x, kernel, stride } => {
                    let (l, c) = self.value(*x).shape();
                    let mut dx = DMatrix::zeros(l, c);
                    for i in 0..dy.nrows() {
                        for j in 0..*kernel {
                            let src = dy.view((i, j * c), (1, c)).into_owned();
                            let mut dst = dx.row_mut(i * stride + j);
                            dst += src;
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::PositiveOrOne(a) => {
                    let x = self.value(*a);
                    let dx = dy.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate(&mut g, *a, dx);
                }
            }
        }
        Gradients(g)
    }
}

fn accumulate(g: &mut [Option<DMatrix<f64>>], v: Var, d: DMatrix<f64>) {
    match &mut g[v.0] {
        Some(acc) => *acc += d,
        slot => *slot = Some(d),
    }
}

/// Adjoints keyed by tape node; only leaves are retained.
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Option<DMatrix<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DMatrix<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

pub fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut v = a.clone();
    for mut row in v.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let s = row.sum();
        row /= s;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&DMatrix::from_row_slice(1, 2, &[0.0, 0.0]));
        assert_eq!(s, DMatrix::from_row_slice(1, 2, &[0.5, 0.5]));
        let s = softmax_rows(&DMatrix::from_row_slice(1, 3, &[1000.0, 0.0, -5.0]));
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(DMatrix::from_row_slice(2, 1, &[5.0, 6.0]));
        let c = t.matmul(a, b);
        let g = t.backward(c, DMatrix::from_element(2, 1, 1.0));
        assert_eq!(
            g.get(a).unwrap(),
            &DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 5.0, 6.0])
        );
        assert_eq!(
            g.get(b).unwrap(),
            &DMatrix::from_row_slice(2, 1, &[4.0, 6.0])
        );
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(DMatrix::from_element(1, 1, 2.0));
        let unused = t.leaf(DMatrix::from_element(1, 1, 3.0));
        let y = t.scale(a, 3.0);
        let g = t.backward(y, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(g.get(a).unwrap()[(0, 0)], 3.0);
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn im2col_layout() {
        let mut t = Tape::new();
        let x = t.leaf(DMatrix::from_fn(6, 2, |i, j| (10 * i + j) as f64));
        let p = t.im2col(x, 3, 1);
        assert_eq!(t.value(p).shape(), (4, 6));
        assert_eq!(
            t.value(p).row(1).iter().copied().collect::<Vec<_>>(),
            vec![10.0, 11.0, 20.0, 21.0, 30.0, 31.0]
        );
        let p = t.im2col(x, 3, 3);
        assert_eq!(t.value(p).nrows(), 2);
    }

    #[test]
    fn flatten_is_row_major() {
        let mut t = Tape::new();
        let x = t.leaf(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let f = t.flatten_rows(x);
        assert_eq!(t.value(f).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    /// Central differences of `sum(W * f(x))` for each op with a random weight `W`.
    #[test]
    fn op_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rand_m =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let x0 = rand_m(4, 6);
        let w0 = rand_m(6, 3);
        let row0 = rand_m(1, 6);
        let gamma0 = rand_m(1, 6);
        let mask0 = rand_m(4, 6);
        let seed = rand_m(1, 10);

        let build = |t: &mut Tape, x: &DMatrix<f64>| {
            let xv = t.leaf(x.clone());
            let w = t.leaf(w0.clone());
            let r = t.leaf(row0.clone());
            let g = t.leaf(gamma0.clone());
            let a = t.add_row(xv, r);
            let a = t.mask(a, mask0.clone());
            let l = t.layer_norm_rows(a, g, r, 1e-9);
            let s = t.softmax_rows(l);
            let p = t.im2col(s, 2, 2);
            let p = t.slice_cols(p, 0, 6);
            let m = t.matmul(p, w);
            let bt = t.matmul_bt(m, m);
            let c = t.concat_cols(&[bt, m]);
            let c = t.relu(c);
            let c = t.scale(c, 1.7);
            let sum = t.add(c, c);
            let f = t.flatten_rows(sum);
            let out = t.positive_or_one(f);
            (xv, out)
        };
        let loss = |x: &DMatrix<f64>| {
            let mut t = Tape::new();
            let (_, out) = build(&mut t, x);
            t.value(out).dot(&seed)
        };
        let mut t = Tape::new();
        let (xv, out) = build(&mut t, &x0);
        assert_eq!(t.value(out).shape(), (1, 10));
        let g = t.backward(out, seed.clone());
        let gx = g.get(xv).unwrap();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!(
                (fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "x[{i}]: fd {fd} vs {}",
                gx[i]
            );
        }
    }
}
