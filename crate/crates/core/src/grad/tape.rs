//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a dense matrix (vectors are `n×1`, scalars `1×1`).
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and the backward pass is a single reverse sweep.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, solve_lower, solve_lower_transpose};
use crate::sinkhorn::{log_normalize_cols, log_normalize_rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Symmetrize(Var),
    /// `m×n` plus a `1×n` row added to every row.
    AddRow(Var, Var),
    Relu(Var),
    Exp(Var),
    LogNormalizeRows(Var),
    LogNormalizeCols(Var),
    /// Column-major reshape.
    Reshape(Var),
    /// `a ⊗ B` with `B` constant.
    KronConst(Var, DMatrix<f64>),
    /// Lower Cholesky factor; the jitter added to the input diagonal is
    /// recorded only for diagnostics.
    Cholesky(Var),
    /// `L⁻¹ B`
    SolveLower(Var, Var),
    /// `L⁻ᵀ B`
    SolveLowerT(Var, Var),
    /// `Σ log Lᵢᵢ`
    SumLogDiag(Var),
    SumAll(Var),
    /// Each column scaled to unit Euclidean norm.
    NormalizeCols(Var),
    /// Rows `start..start+len` of a matrix.
    Rows(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::Symmetrize(..) => "symmetrize",
            Op::AddRow(..) => "add_row",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::LogNormalizeRows(..) => "log_normalize_rows",
            Op::LogNormalizeCols(..) => "log_normalize_cols",
            Op::Reshape(..) => "reshape",
            Op::KronConst(..) => "kron",
            Op::Cholesky(..) => "cholesky",
            Op::SolveLower(..) => "solve_lower",
            Op::SolveLowerT(..) => "solve_lower_t",
            Op::SumLogDiag(..) => "sum_log_diag",
            Op::SumAll(..) => "sum",
            Op::NormalizeCols(..) => "normalize_cols",
            Op::Rows(..) => "rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
    label: Option<&'static str>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`, zeros if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> DMatrix<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DMatrix::zeros(r, c)
            }
        }
    }
}

fn tril(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(
        m.nrows(),
        m.ncols(),
        |i, j| if j <= i { m[(i, j)] } else { 0.0 },
    )
}

/// Lower triangle with the diagonal halved.
fn phi(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if j < i {
            m[(i, j)]
        } else if j == i {
            0.5 * m[(i, j)]
        } else {
            0.0
        }
    })
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
        self.nodes.push(Node {
            value,
            op,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Attaches a human-readable label used in non-finite diagnostics.
    pub fn label(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].label = Some(label);
        v
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn symmetrize(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = (m + m.transpose()) * 0.5;
        self.push(v, Op::Symmetrize(a))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        let mut v = self.value(a).clone();
        for mut vr in v.row_iter_mut() {
            vr += &r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log_normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        log_normalize_rows(&mut v);
        self.push(v, Op::LogNormalizeRows(a))
    }

    pub fn log_normalize_cols(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        log_normalize_cols(&mut v);
        self.push(v, Op::LogNormalizeCols(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(
            src.len(),
            rows * cols,
            "reshape must preserve element count"
        );
        let v = DMatrix::from_column_slice(rows, cols, src.as_slice());
        self.push(v, Op::Reshape(a))
    }

    pub fn kron_const(&mut self, a: Var, b: &DMatrix<f64>) -> Var {
        let v = self.value(a).kronecker(b);
        self.push(v, Op::KronConst(a, b.clone()))
    }

    pub fn cholesky(&mut self, a: Var, context: &'static str) -> Result<Var> {
        let (l, _) = cholesky_with_jitter(self.value(a), context)?;
        Ok(self.push(l, Op::Cholesky(a)))
    }

    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let v = solve_lower(self.value(l), self.value(b));
        self.push(v, Op::SolveLower(l, b))
    }

    pub fn solve_lower_t(&mut self, l: Var, b: Var) -> Var {
        let v = solve_lower_transpose(self.value(l), self.value(b));
        self.push(v, Op::SolveLowerT(l, b))
    }

    pub fn sum_log_diag(&mut self, l: Var) -> Var {
        let m = self.value(l);
        let s: f64 = (0..m.nrows()).map(|i| m[(i, i)].ln()).sum();
        self.push(DMatrix::from_element(1, 1, s), Op::SumLogDiag(l))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(DMatrix::from_element(1, 1, s), Op::SumAll(a))
    }

    pub fn normalize_cols(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut c in v.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        self.push(v, Op::NormalizeCols(a))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).rows(start, len).into_owned();
        self.push(v, Op::Rows(a, start))
    }

    /// First node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.iter().all(|v| v.is_finite()) {
                None
            } else {
                Some(match n.label {
                    Some(l) => format!("node {i} ({}, {l})", n.op.name()),
                    None => format!("node {i} ({})", n.op.name()),
                })
            }
        })
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::shape(
                "backward output",
                "1x1",
                format!("{out_shape:?}"),
            ));
        }
        let n = output.0 + 1;
        let mut adj: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut adj[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).transpose() * &g;
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, -g);
                }
                Op::Hadamard(a, b) => {
                    let ga = g.component_mul(self.value(*b));
                    let gb = g.component_mul(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g * *c),
                Op::Transpose(a) => acc(&mut adj, *a, g.transpose()),
                Op::Symmetrize(a) => {
                    let s = (&g + g.transpose()) * 0.5;
                    acc(&mut adj, *a, s);
                }
                Op::AddRow(a, row) => {
                    let mut gr = DMatrix::zeros(1, g.ncols());
                    for r in g.row_iter() {
                        gr += r;
                    }
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    acc(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.component_mul(&node.value);
                    acc(&mut adj, *a, ga);
                }
                Op::LogNormalizeRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..g.nrows() {
                        let s: f64 = g.row(i).sum();
                        for j in 0..g.ncols() {
                            ga[(i, j)] -= y[(i, j)].exp() * s;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::LogNormalizeCols(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for j in 0..g.ncols() {
                        let s: f64 = g.column(j).sum();
                        for i in 0..g.nrows() {
                            ga[(i, j)] -= y[(i, j)].exp() * s;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, DMatrix::from_column_slice(r, c, g.as_slice()));
                }
                Op::KronConst(a, b) => {
                    let (ar, ac) = self.value(*a).shape();
                    let (br, bc) = b.shape();
                    let ga =
                        DMatrix::from_fn(ar, ac, |i, j| g.view((i * br, j * bc), (br, bc)).dot(b));
                    acc(&mut adj, *a, ga);
                }
                Op::Cholesky(a) => {
                    // Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹)
                    let l = &node.value;
                    let lbar = tril(&g);
                    let p = phi(&(l.transpose() * lbar));
                    let tmp = solve_lower_transpose(l, &p);
                    let s = solve_lower_transpose(l, &tmp.transpose()).transpose();
                    let sym = (&s + s.transpose()) * 0.5;
                    acc(&mut adj, *a, sym);
                }
                Op::SolveLower(l, b) => {
                    let lv = self.value(*l);
                    let gb = solve_lower_transpose(lv, &g);
                    let gl = -tril(&(&gb * node.value.transpose()));
                    acc(&mut adj, *l, gl);
                    acc(&mut adj, *b, gb);
                }
                Op::SolveLowerT(l, b) => {
                    let lv = self.value(*l);
                    let gb = solve_lower(lv, &g);
                    let gl = -tril(&(&node.value * gb.transpose()));
                    acc(&mut adj, *l, gl);
                    acc(&mut adj, *b, gb);
                }
                Op::SumLogDiag(l) => {
                    let lv = self.value(*l);
                    let s = g[(0, 0)];
                    let mut gl = DMatrix::zeros(lv.nrows(), lv.ncols());
                    for i in 0..lv.nrows() {
                        gl[(i, i)] = s / lv[(i, i)];
                    }
                    acc(&mut adj, *l, gl);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, DMatrix::from_element(r, c, g[(0, 0)]));
                }
                Op::NormalizeCols(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = DMatrix::zeros(x.nrows(), x.ncols());
                    for j in 0..x.ncols() {
                        let norm = x.column(j).norm();
                        let yj = y.column(j);
                        let gj = g.column(j);
                        let proj = yj.dot(&gj);
                        ga.set_column(j, &((gj - yj * proj) / norm));
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Rows(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = DMatrix::zeros(r, c);
                    ga.rows_mut(*start, g.nrows()).copy_from(&g);
                    acc(&mut adj, *a, ga);
                }
            }
        }
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}
