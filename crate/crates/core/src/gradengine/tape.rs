//! Reverse-mode differentiation over matrix-valued primitives.
//!
//! A [`Tape`] records every operation applied to [`Var`]s during a forward
//! pass; [`Tape::gradient`] walks the record backwards and returns the
//! adjoint of every node. Nodes hold whole matrices, so the overhead per
//! primitive is one allocation, not one per scalar.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::numerics::{self, gemm, CholFactor, Matrix};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    ScaleVar(usize, usize),
    AddScalarVar(usize, usize),
    Affine(usize, f64),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Softplus(usize),
    Sigmoid(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    LogSumExpRows(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    Diag(usize),
    TrilExpDiag(usize),
    Cholesky(usize),
    TriSolve { l: usize, b: usize, transposed: bool },
    Rbf { x: usize, x2: usize, log_ls: usize, log_var: usize },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Const => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) | MulRow(a, b)
            | AddCol(a, b) | MulCol(a, b) | ScaleVar(a, b) | AddScalarVar(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Affine(a, _) | Transpose(a) | Exp(a) | Ln(a) | Sqrt(a) | Square(a) | Softplus(a)
            | Sigmoid(a) | Relu(a) | ClampMin(a, _) | Sum(a) | SumRows(a) | SumCols(a)
            | LogSumExpRows(a) | SliceCols(a, _) | Diag(a) | TrilExpDiag(a) | Cholesky(a) => {
                vec![*a]
            }
            ConcatCols(parts) => parts.clone(),
            TriSolve { l, b, .. } => vec![*l, *b],
            Rbf { x, x2, log_ls, log_var } => vec![*x, *x2, *log_ls, *log_var],
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
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

/// `ln(1 + eˣ)` computed without overflow.
pub fn softplus_f64(x: f64) -> f64 {
    softplus(x)
}

/// Logistic function computed without overflow.
pub fn sigmoid_f64(x: f64) -> f64 {
    sigmoid(x)
}

/// RBF cross-covariance `h²·exp(−½ Σ_k (xᵢₖ − x2ⱼₖ)²/ℓₖ²)`.
pub(crate) fn rbf_forward(x: &Matrix, x2: &Matrix, lengthscales: &[f64], variance: f64) -> Matrix {
    let d = lengthscales.len();
    let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut k = Matrix::zeros(x.rows(), x2.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let out = k.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            let xj = x2.row(j);
            let mut s = 0.0;
            for c in 0..d {
                let t = xi[c] - xj[c];
                s += t * t * inv[c];
            }
            *o = variance * (-0.5 * s).exp();
        }
    }
    k
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A constant input; no adjoint flows into it.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Const)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every node with respect to the scalar `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.len(), 1, "gradient needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[output.id] = Some(Matrix::scalar(1.0));
        // a node needs an adjoint iff it depends on some leaf
        let mut needs = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate().take(output.id + 1) {
            needs[i] = match &n.op {
                Op::Leaf => true,
                Op::Const => false,
                op => op.inputs().iter().any(|&j| needs[j]),
            };
        }
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if needs[id] {
                backward(&nodes, &needs, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

/// Adjoints produced by [`Tape::gradient`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`; `None` when the output does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], needs: &[bool], id: usize, contribution: Matrix) {
    if !needs[id] {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn row_sums(m: &Matrix) -> Matrix {
    let data = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect::<Vec<f64>>();
    Matrix::column(&data)
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    Matrix::row_vector(&out)
}

fn bcast_row(m: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = m.clone();
    let r = row.as_slice();
    for i in 0..out.rows() {
        for (o, v) in out.row_mut(i).iter_mut().zip(r) {
            *o = f(*o, *v);
        }
    }
    out
}

fn bcast_col(m: &Matrix, col: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let c = col.as_slice()[i];
        for o in out.row_mut(i).iter_mut() {
            *o = f(*o, c);
        }
    }
    out
}

fn lower_part(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for j in i + 1..out.cols() {
            out[(i, j)] = 0.0;
        }
    }
    out
}

fn backward(nodes: &[Node], needs: &[bool], id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            accumulate(grads, needs, *a, g.clone());
            accumulate(grads, needs, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, needs, *a, g.clone());
            accumulate(grads, needs, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            accumulate(grads, needs, *a, g.zip_map(val(*b), |g, b| g * b));
            accumulate(grads, needs, *b, g.zip_map(val(*a), |g, a| g * a));
        }
        Op::Div(a, b) => {
            accumulate(grads, needs, *a, g.zip_map(val(*b), |g, b| g / b));
            let ga = g.zip_map(val(*a), |g, a| g * a);
            accumulate(grads, needs, *b, ga.zip_map(val(*b), |ga, b| -ga / (b * b)));
        }
        Op::AddRow(a, r) => {
            accumulate(grads, needs, *a, g.clone());
            accumulate(grads, needs, *r, col_sums(g));
        }
        Op::MulRow(a, r) => {
            accumulate(grads, needs, *a, bcast_row(g, val(*r), |g, r| g * r));
            accumulate(grads, needs, *r, col_sums(&g.zip_map(val(*a), |g, a| g * a)));
        }
        Op::AddCol(a, c) => {
            accumulate(grads, needs, *a, g.clone());
            accumulate(grads, needs, *c, row_sums(g));
        }
        Op::MulCol(a, c) => {
            accumulate(grads, needs, *a, bcast_col(g, val(*c), |g, c| g * c));
            accumulate(grads, needs, *c, row_sums(&g.zip_map(val(*a), |g, a| g * a)));
        }
        Op::ScaleVar(a, s) => {
            let sv = val(*s).item();
            accumulate(grads, needs, *a, g.scale(sv));
            let gs = g.zip_map(val(*a), |g, a| g * a).sum();
            accumulate(grads, needs, *s, Matrix::scalar(gs));
        }
        Op::AddScalarVar(a, s) => {
            accumulate(grads, needs, *a, g.clone());
            accumulate(grads, needs, *s, Matrix::scalar(g.sum()));
        }
        Op::Affine(a, scale) => accumulate(grads, needs, *a, g.scale(*scale)),
        Op::MatMul { a, b, ta, tb } => {
            let (av, bv) = (val(*a), val(*b));
            if needs[*a] {
                let ga = if *ta {
                gemm(bv, *tb, g, true)
            } else {
                    gemm(g, false, bv, !*tb)
                }
                .expect("shapes checked in forward");
                accumulate(grads, needs, *a, ga);
            }
            if needs[*b] {
                let gb = if *tb {
                    gemm(g, true, av, *ta)
                } else {
                    gemm(av, !*ta, g, false)
                }
                .expect("shapes checked in forward");
                accumulate(grads, needs, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, needs, *a, g.transpose()),
        Op::Exp(a) => accumulate(grads, needs, *a, g.zip_map(&nodes[id].value, |g, y| g * y)),
        Op::Ln(a) => accumulate(grads, needs, *a, g.zip_map(val(*a), |g, x| g / x)),
        Op::Sqrt(a) => accumulate(grads, needs, *a, g.zip_map(&nodes[id].value, |g, y| g / (2.0 * y))),
        Op::Square(a) => accumulate(grads, needs, *a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
        Op::Softplus(a) => accumulate(grads, needs, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
        Op::Sigmoid(a) => {
            accumulate(grads, needs, *a, g.zip_map(&nodes[id].value, |g, y| g * y * (1.0 - y)))
        }
        Op::Relu(a) => {
            accumulate(grads, needs, *a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))
        }
        Op::ClampMin(a, min) => {
            let min = *min;
            accumulate(grads, needs, *a, g.zip_map(val(*a), |g, x| if x >= min { g } else { 0.0 }))
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, needs, *a, Matrix::filled(r, c, g.item()));
        }
        Op::SumRows(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, needs, *a, bcast_col(&Matrix::zeros(r, c), g, |_, g| g));
        }
        Op::SumCols(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, needs, *a, bcast_row(&Matrix::zeros(r, c), g, |_, g| g));
        }
        Op::LogSumExpRows(a) => {
            let x = val(*a);
            let y = &nodes[id].value;
            let mut ga = Matrix::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let (gi, yi) = (g.as_slice()[i], y.as_slice()[i]);
                for (o, v) in ga.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o = gi * (v - yi).exp();
                }
            }
            accumulate(grads, needs, *a, ga);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                accumulate(grads, needs, p, g.select_cols(offset, offset + w));
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            let (r, c) = val(*a).shape();
            let mut ga = Matrix::zeros(r, c);
            for i in 0..r {
                ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
            }
            accumulate(grads, needs, *a, ga);
        }
        Op::Diag(a) => {
            let n = g.rows();
            let mut ga = Matrix::zeros(n, n);
            for i in 0..n {
                ga[(i, i)] = g.as_slice()[i];
            }
            accumulate(grads, needs, *a, ga);
        }
        Op::TrilExpDiag(a) => {
            let y = &nodes[id].value;
            let mut ga = lower_part(g);
            for i in 0..ga.rows() {
                ga[(i, i)] = g[(i, i)] * y[(i, i)];
            }
            accumulate(grads, needs, *a, ga);
        }
        Op::Cholesky(a) => {
            // Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹), Φ = lower triangle with halved diagonal.
            let l = &nodes[id].value;
            let mut phi = lower_part(&gemm(l, true, g, false).expect("square"));
            for i in 0..phi.rows() {
                phi[(i, i)] *= 0.5;
            }
            let left = numerics::solve_lower(l, &phi, true).expect("square");
            let s = numerics::solve_lower(l, &left.transpose(), true)
                .expect("square")
                .transpose();
            let sym = s.zip_map(&s.transpose(), |a, b| 0.5 * (a + b));
            accumulate(grads, needs, *a, sym);
        }
        Op::TriSolve { l, b, transposed } => {
            let lv = val(*l);
            let x = &nodes[id].value;
            let gb = numerics::solve_lower(lv, g, !*transposed).expect("square");
            if !needs[*l] {
                accumulate(grads, needs, *b, gb);
                return;
            }
            let gl = if *transposed {
                gemm(x, false, &gb, true)
            } else {
                gemm(&gb, false, x, true)
            }
            .expect("shapes checked in forward");
            accumulate(grads, needs, *l, lower_part(&gl).scale(-1.0));
            accumulate(grads, needs, *b, gb);
        }
        Op::Rbf { x, x2, log_ls, log_var } => {
            let (xv, x2v) = (val(*x), val(*x2));
            let k = &nodes[id].value;
            let d = xv.cols();
            let inv: Vec<f64> = val(*log_ls)
                .as_slice()
                .iter()
                .map(|l| (-2.0 * l).exp())
                .collect();
            let mut gx = Matrix::zeros(xv.rows(), d);
            let mut gx2 = Matrix::zeros(x2v.rows(), d);
            let mut gls = vec![0.0; d];
            let mut gvar = 0.0;
            for i in 0..xv.rows() {
                let xi = xv.row(i);
                for j in 0..x2v.rows() {
                    let w = g[(i, j)] * k[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    gvar += w;
                    let xj = x2v.row(j);
                    for c in 0..d {
                        let t = xi[c] - xj[c];
                        let dt = w * t * inv[c];
                        gx[(i, c)] -= dt;
                        gx2[(j, c)] += dt;
                        gls[c] += dt * t;
                    }
                }
            }
            accumulate(grads, needs, *x, gx);
            accumulate(grads, needs, *x2, gx2);
            accumulate(grads, needs, *log_ls, Matrix::row_vector(&gls));
            accumulate(grads, needs, *log_var, Matrix::scalar(gvar));
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_matrix(&self) -> Matrix {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn same_shape(self, other: Var<'t>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), f);
        self.tape.push(v, op)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        Ok(self.binary(other, Op::Add(self.id, other.id), |a, b| a + b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "sub")?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "div")?;
        Ok(self.binary(other, Op::Div(self.id, other.id), |a, b| a / b))
    }

    /// `self (n×k) + row (1×k)` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        if row.shape() != (1, self.cols()) {
            return Err(Error::dims("add_row: row vector width differs"));
        }
        let v = bcast_row(&self.value(), &row.value(), |a, b| a + b);
        Ok(self.tape.push(v, Op::AddRow(self.id, row.id)))
    }

    /// `self (n×k) ∘ row (1×k)` broadcast over rows.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        if row.shape() != (1, self.cols()) {
            return Err(Error::dims("mul_row: row vector width differs"));
        }
        let v = bcast_row(&self.value(), &row.value(), |a, b| a * b);
        Ok(self.tape.push(v, Op::MulRow(self.id, row.id)))
    }

    /// `self (n×k) + col (n×1)` broadcast over columns.
    pub fn add_col(self, col: Var<'t>) -> Result<Var<'t>> {
        if col.shape() != (self.rows(), 1) {
            return Err(Error::dims("add_col: column vector height differs"));
        }
        let v = bcast_col(&self.value(), &col.value(), |a, b| a + b);
        Ok(self.tape.push(v, Op::AddCol(self.id, col.id)))
    }

    /// `self (n×k) ∘ col (n×1)` broadcast over columns.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        if col.shape() != (self.rows(), 1) {
            return Err(Error::dims("mul_col: column vector height differs"));
        }
        let v = bcast_col(&self.value(), &col.value(), |a, b| a * b);
        Ok(self.tape.push(v, Op::MulCol(self.id, col.id)))
    }

    /// Multiply by a 1×1 variable.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        if s.shape() != (1, 1) {
            return Err(Error::dims("scale_by: expected a 1x1 scale"));
        }
        let sv = s.item();
        let v = self.value().scale(sv);
        Ok(self.tape.push(v, Op::ScaleVar(self.id, s.id)))
    }

    /// Add a 1×1 variable to every entry.
    pub fn add_scalar_var(self, s: Var<'t>) -> Result<Var<'t>> {
        if s.shape() != (1, 1) {
            return Err(Error::dims("add_scalar_var: expected a 1x1 offset"));
        }
        let sv = s.item();
        let v = self.value().map(|x| x + sv);
        Ok(self.tape.push(v, Op::AddScalarVar(self.id, s.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Affine(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposes.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        let v = gemm(&self.value(), ta, &other.value(), tb)?;
        Ok(self.tape.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        ))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.value().transpose();
        self.tape.push(v, Op::Transpose(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Elementwise `max(x, min)`; the adjoint is zero where clamped.
    pub fn clamp_min(self, min: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, min), |x| x.max(min))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Matrix::scalar(s), Op::Sum(self.id))
    }

    /// n×k → n×1.
    pub fn sum_rows(self) -> Var<'t> {
        let v = row_sums(&self.value());
        self.tape.push(v, Op::SumRows(self.id))
    }

    /// n×k → 1×k.
    pub fn sum_cols(self) -> Var<'t> {
        let v = col_sums(&self.value());
        self.tape.push(v, Op::SumCols(self.id))
    }

    /// Row-wise `ln Σⱼ exp(xᵢⱼ)`, n×k → n×1.
    pub fn logsumexp_rows(self) -> Var<'t> {
        let v = {
            let x = self.value();
            let data: Vec<f64> = (0..x.rows())
                .map(|i| log_sum_exp(x.row(i)))
                .collect();
            Matrix::column(&data)
        };
        self.tape.push(v, Op::LogSumExpRows(self.id))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::dims("concat_cols: no parts"))?
            .tape;
        let v = {
            let vals: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| p.value()).collect();
            let refs: Vec<&Matrix> = vals.iter().map(|r| &**r).collect();
            Matrix::hcat(&refs)?
        };
        Ok(tape.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        if start > end || end > self.cols() {
            return Err(Error::dims("slice_cols: range out of bounds"));
        }
        let v = self.value().select_cols(start, end);
        Ok(self.tape.push(v, Op::SliceCols(self.id, start)))
    }

    /// Diagonal of a square matrix as an n×1 column.
    pub fn diag(self) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::dims("diag: matrix not square"));
        }
        let v = Matrix::column(&self.value().diagonal());
        Ok(self.tape.push(v, Op::Diag(self.id)))
    }

    /// Lower-triangular matrix from unconstrained storage: strictly-lower
    /// entries copied, diagonal exponentiated, upper triangle zeroed.
    pub fn tril_exp_diag(self) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::dims("tril_exp_diag: matrix not square"));
        }
        let v = {
            let mut m = lower_part(&self.value());
            for i in 0..r {
                m[(i, i)] = m[(i, i)].exp();
            }
            m
        };
        Ok(self.tape.push(v, Op::TrilExpDiag(self.id)))
    }

    /// Cholesky factor with escalating jitter; the jitter is treated as a
    /// constant when differentiating.
    pub fn cholesky(self, base_jitter: f64) -> Result<(Var<'t>, f64)> {
        let f: CholFactor = numerics::cholesky_jitter(&self.value(), base_jitter)?;
        let jitter = f.jitter_used;
        Ok((self.tape.push(f.lower, Op::Cholesky(self.id)), jitter))
    }

    /// `L⁻¹ b` (or `L⁻ᵀ b`) with `self` lower triangular.
    pub fn tri_solve(self, b: Var<'t>, transposed: bool) -> Result<Var<'t>> {
        let v = numerics::solve_lower(&self.value(), &b.value(), transposed)?;
        Ok(self.tape.push(
            v,
            Op::TriSolve {
                l: self.id,
                b: b.id,
                transposed,
            },
        ))
    }

    /// RBF kernel matrix between the rows of `self` and `other`, with
    /// per-dimension log length-scales (1×d) and log signal variance (1×1).
    pub fn rbf(self, other: Var<'t>, log_ls: Var<'t>, log_var: Var<'t>) -> Result<Var<'t>> {
        let d = log_ls.cols();
        if self.cols() != d || other.cols() != d || log_ls.rows() != 1 {
            return Err(Error::dims(format!(
                "rbf: inputs have {} and {} columns, kernel has {d} length-scales",
                self.cols(),
                other.cols()
            )));
        }
        let v = {
            let ls: Vec<f64> = log_ls.value().as_slice().iter().map(|l| l.exp()).collect();
            rbf_forward(&self.value(), &other.value(), &ls, log_var.item().exp())
        };
        Ok(self.tape.push(
            v,
            Op::Rbf {
                x: self.id,
                x2: other.id,
                log_ls: log_ls.id,
                log_var: log_var.id,
            },
        ))
    }
}

/// Numerically stable `ln Σ exp(xᵢ)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
