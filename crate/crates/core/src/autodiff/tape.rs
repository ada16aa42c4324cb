use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mat::{gemm, Mat};

use super::params::{Layout, ParamVector};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sin,
    Cos,
    Exp,
    Square,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
        }
    }

    /// f'(x) given input `x` and output `y`.
    #[inline]
    fn d1(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Square => 2.0 * x,
        }
    }

    /// f''(x) expressed through the output `y`.
    #[inline]
    fn d2(self, y: f64) -> f64 {
        match self {
            Unary::Tanh => -2.0 * y * (1.0 - y * y),
            Unary::Sin | Unary::Cos => -y,
            Unary::Exp => y,
            Unary::Square => 2.0,
        }
    }
}

/// Order in which full reductions (`sum`, `mean`) accumulate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Left to right.
    #[default]
    Sequential,
    /// Recursive halving; slightly more accurate, still deterministic.
    Pairwise,
}

impl Reduction {
    fn sum(self, xs: &[f64]) -> f64 {
        match self {
            Reduction::Sequential => xs.iter().sum(),
            Reduction::Pairwise => pairwise_sum(xs),
        }
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    /// `x · w + b`, bias broadcast over rows.
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    /// Row-wise sum over a column range, `n x k -> n x 1`.
    SumCols { a: Var, start: usize, end: usize },
    /// Output row `i` is input row `index[i]`.
    Gather { a: Var, index: Arc<[usize]> },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 3] {
        match *self {
            Op::Leaf | Op::Param(_) => [None, None, None],
            Op::Affine { x, w, b } => [Some(x), Some(w), b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => [Some(a), Some(b), None],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Unary(a, _)
            | Op::SumCols { a, .. }
            | Op::Gather { a, .. }
            | Op::Sum(a)
            | Op::Mean(a) => [Some(a), None, None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Mat,
    /// Depends (transitively) on a parameter block.
    needs_grad: bool,
}

/// Forward-mode pair recorded on a tape: a value and its derivative with
/// respect to one scalar input. `tangent == None` means identically zero.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub primal: Var,
    pub tangent: Option<Var>,
}

/// Wengert list over matrix-valued nodes.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a reverse sweep over indices is a valid topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    layout: Option<Layout>,
    reduction: Reduction,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every block of `params` as a leaf, in layout order.
    pub fn with_params(params: &ParamVector) -> (Self, Vec<Var>) {
        let mut tape = Self { layout: Some(params.layout().clone()), ..Self::default() };
        let vars = (0..params.layers().len())
            .map(|i| tape.push(Op::Param(i), params.block_mat(i), true))
            .collect();
        (tape, vars)
    }

    pub fn set_reduction(&mut self, reduction: Reduction) {
        self.reduction = reduction;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Mat::scalar(value))
    }

    // ---- primitives -------------------------------------------------------
    //
    // Shape contracts are asserted; public model code validates shapes before
    // recording.

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols(), wv.rows(), "affine: x is {:?}, w is {:?}", xv.shape(), wv.shape());
        let mut out = Mat::zeros(xv.rows(), wv.cols());
        gemm(1.0, xv, false, wv, false, 0.0, &mut out);
        let mut needs = self.needs(x) || self.needs(w);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, out.cols()), "affine: bias shape");
            let cols = out.cols();
            for row in out.as_mut_slice().chunks_mut(cols) {
                for (o, bb) in row.iter_mut().zip(bv.as_slice()) {
                    *o += bb;
                }
            }
            needs |= self.needs(b);
        }
        self.push(Op::Affine { x, w, b }, out, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shapes differ");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shapes differ");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), out, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shapes differ");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), out, needs)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let needs = self.needs(a);
        self.push(Op::Offset(a), out, needs)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let out = self.value(a).map(|x| f.apply(x));
        let needs = self.needs(a);
        self.push(Op::Unary(a, f), out, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn sum_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "sum_cols: range {start}..{end} of {} columns", av.cols());
        let out = Mat::from_fn(av.rows(), 1, |r, _| av.row(r)[start..end].iter().sum());
        let needs = self.needs(a);
        self.push(Op::SumCols { a, start, end }, out, needs)
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(av.row(i));
        }
        let out = Mat::from_vec(index.len(), cols, data);
        let needs = self.needs(a);
        self.push(Op::Gather { a, index }, out, needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.reduction.sum(self.value(a).as_slice());
        let needs = self.needs(a);
        self.push(Op::Sum(a), Mat::scalar(s), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = self.reduction.sum(av.as_slice()) / av.len() as f64;
        let needs = self.needs(a);
        self.push(Op::Mean(a), Mat::scalar(s), needs)
    }

    // ---- reverse mode -----------------------------------------------------

    fn check_scalar(&self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(format!("loss must be 1x1, got {:?}", self.shape(loss))));
        }
        Ok(())
    }

    fn adjoints(&self, loss: Var) -> Result<Vec<Option<Mat>>> {
        self.check_scalar(loss)?;
        let mut adj: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Param(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(adj)
    }

    fn backprop_node(&self, i: usize, g: &Mat, adj: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                if self.needs(x) {
                    acc_gemm(adj, x, self.value(x).shape(), g, false, self.value(w), true);
                }
                if self.needs(w) {
                    acc_gemm(adj, w, self.value(w).shape(), self.value(x), true, g, false);
                }
                if let Some(b) = b.filter(|&b| self.needs(b)) {
                    acc(adj, b, g.col_sums());
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    acc_ref(adj, a, g, 1.0);
                }
                if self.needs(b) {
                    acc_ref(adj, b, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    acc_ref(adj, a, g, 1.0);
                }
                if self.needs(b) {
                    acc_ref(adj, b, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    acc(adj, a, g.zip_map(self.value(b), |g, y| g * y));
                }
                if self.needs(b) {
                    acc(adj, b, g.zip_map(self.value(a), |g, x| g * x));
                }
            }
            Op::Scale(a, c) => acc_ref(adj, a, g, c),
            Op::Offset(a) => acc_ref(adj, a, g, 1.0),
            Op::Unary(a, f) => {
                let (x, y) = (self.value(a), &node.value);
                let d = Mat::from_vec(
                    x.rows(),
                    x.cols(),
                    x.as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .zip(g.as_slice())
                        .map(|((&x, &y), &g)| g * f.d1(x, y))
                        .collect(),
                );
                acc(adj, a, d);
            }
            Op::SumCols { a, start, end } => acc(adj, a, spread_cols(self.value(a).shape(), g, start, end)),
            Op::Gather { a, ref index } => acc(adj, a, scatter_rows(self.value(a).shape(), g, index)),
            Op::Sum(a) => acc(adj, a, Mat::filled(self.value(a).rows(), self.value(a).cols(), g.item())),
            Op::Mean(a) => {
                let (r, c) = self.value(a).shape();
                acc(adj, a, Mat::filled(r, c, g.item() / (r * c) as f64));
            }
        }
    }

    /// Gradient of `loss` with respect to the parameter blocks bound by
    /// [`Tape::with_params`].
    pub fn gradient(&self, loss: Var) -> Result<ParamVector> {
        let layout = self
            .layout
            .as_ref()
            .ok_or_else(|| Error::Capability("tape has no parameter blocks".into()))?;
        let adj = self.adjoints(loss)?;
        Ok(self.collect_params(layout, &adj))
    }

    /// Gradient of `loss` with respect to arbitrary recorded nodes.
    pub fn gradient_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Mat>> {
        let adj = self.adjoints(loss)?;
        Ok(wrt
            .iter()
            .map(|v| {
                adj.get(v.0)
                    .and_then(Clone::clone)
                    .unwrap_or_else(|| Mat::zeros(self.value(*v).rows(), self.value(*v).cols()))
            })
            .collect())
    }

    fn collect_params(&self, layout: &Layout, adj: &[Option<Mat>]) -> ParamVector {
        let mut out = ParamVector::zeros(layout);
        for (i, node) in self.nodes.iter().enumerate().take(adj.len()) {
            if let (Op::Param(layer), Some(g)) = (&node.op, &adj[i]) {
                for (o, v) in out.block_mut(*layer).iter_mut().zip(g.as_slice()) {
                    *o += v;
                }
            }
        }
        out
    }

    // ---- forward over reverse --------------------------------------------

    /// Hessian-vector product `∇²loss · v` by pushing the parameter tangent
    /// `v` through both the recorded forward pass and the adjoint sweep.
    /// Returns `(gradient, H v)`.
    pub fn gradient_and_hvp(&self, loss: Var, v: &ParamVector) -> Result<(ParamVector, ParamVector)> {
        self.check_scalar(loss)?;
        let layout = self
            .layout
            .as_ref()
            .ok_or_else(|| Error::Capability("tape has no parameter blocks".into()))?;
        if v.layout() != layout {
            return Err(Error::shape("direction layout does not match the tape's parameters"));
        }
        let n = loss.0 + 1;
        let tan = self.tangents(v, n);

        let mut adj: Vec<Option<Mat>> = vec![None; n];
        let mut adj_t: Vec<Option<Mat>> = vec![None; n];
        adj[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Param(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let gt = adj_t[i].take();
            self.backprop_node(i, &g, &mut adj);
            self.backprop_tangent(i, &g, gt.as_ref(), &tan, &mut adj_t);
        }
        Ok((self.collect_params(layout, &adj), self.collect_params(layout, &adj_t)))
    }

    /// Forward tangents of every node under parameter direction `v`.
    fn tangents(&self, v: &ParamVector, n: usize) -> Vec<Option<Mat>> {
        let mut tan: Vec<Option<Mat>> = Vec::with_capacity(n);
        for node in &self.nodes[..n] {
            let t = if !node.needs_grad {
                None
            } else {
                match node.op {
                    Op::Leaf => None,
                    Op::Param(layer) => Some(v.block_mat(layer)),
                    Op::Affine { x, w, b } => {
                        let (r, c) = node.value.shape();
                        let mut out: Option<Mat> = None;
                        if let Some(xt) = &tan[x.0] {
                            let mut m = Mat::zeros(r, c);
                            gemm(1.0, xt, false, self.value(w), false, 0.0, &mut m);
                            out = Some(m);
                        }
                        if let Some(wt) = &tan[w.0] {
                            let m = out.get_or_insert_with(|| Mat::zeros(r, c));
                            gemm(1.0, self.value(x), false, wt, false, 1.0, m);
                        }
                        if let Some(bt) = b.and_then(|b| tan[b.0].as_ref()) {
                            let m = out.get_or_insert_with(|| Mat::zeros(r, c));
                            for row in m.as_mut_slice().chunks_mut(c) {
                                for (o, bb) in row.iter_mut().zip(bt.as_slice()) {
                                    *o += bb;
                                }
                            }
                        }
                        out
                    }
                    Op::Add(a, b) => lin2(&tan[a.0], &tan[b.0], 1.0),
                    Op::Sub(a, b) => lin2(&tan[a.0], &tan[b.0], -1.0),
                    Op::Mul(a, b) => {
                        let ta = tan[a.0].as_ref().map(|t| t.zip_map(self.value(b), |t, y| t * y));
                        let tb = tan[b.0].as_ref().map(|t| t.zip_map(self.value(a), |t, x| t * x));
                        lin2(&ta, &tb, 1.0)
                    }
                    Op::Scale(a, c) => tan[a.0].as_ref().map(|t| t.map(|x| c * x)),
                    Op::Offset(a) => tan[a.0].clone(),
                    Op::Unary(a, f) => tan[a.0].as_ref().map(|t| {
                        let x = self.value(a);
                        Mat::from_vec(
                            t.rows(),
                            t.cols(),
                            t.as_slice()
                                .iter()
                                .zip(x.as_slice())
                                .zip(node.value.as_slice())
                                .map(|((&t, &x), &y)| t * f.d1(x, y))
                                .collect(),
                        )
                    }),
                    Op::SumCols { a, start, end } => tan[a.0]
                        .as_ref()
                        .map(|t| Mat::from_fn(t.rows(), 1, |r, _| t.row(r)[start..end].iter().sum())),
                    Op::Gather { a, ref index } => tan[a.0].as_ref().map(|t| {
                        let mut data = Vec::with_capacity(index.len() * t.cols());
                        for &i in index.iter() {
                            data.extend_from_slice(t.row(i));
                        }
                        Mat::from_vec(index.len(), t.cols(), data)
                    }),
                    Op::Sum(a) => tan[a.0].as_ref().map(|t| Mat::scalar(self.reduction.sum(t.as_slice()))),
                    Op::Mean(a) => tan[a.0]
                        .as_ref()
                        .map(|t| Mat::scalar(self.reduction.sum(t.as_slice()) / t.len() as f64)),
                }
            };
            tan.push(t);
        }
        tan
    }

    /// Tangent of the adjoint sweep for node `i`: given the adjoint `g` of the
    /// node and its tangent `gt`, accumulate the tangents of the input adjoints.
    fn backprop_tangent(&self, i: usize, g: &Mat, gt: Option<&Mat>, tan: &[Option<Mat>], adj_t: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                if self.needs(x) {
                    let shape = self.value(x).shape();
                    if let Some(gt) = gt {
                        acc_gemm(adj_t, x, shape, gt, false, self.value(w), true);
                    }
                    if let Some(wt) = &tan[w.0] {
                        acc_gemm(adj_t, x, shape, g, false, wt, true);
                    }
                }
                if self.needs(w) {
                    let shape = self.value(w).shape();
                    if let Some(xt) = &tan[x.0] {
                        acc_gemm(adj_t, w, shape, xt, true, g, false);
                    }
                    if let Some(gt) = gt {
                        acc_gemm(adj_t, w, shape, self.value(x), true, gt, false);
                    }
                }
                if let (Some(b), Some(gt)) = (b.filter(|&b| self.needs(b)), gt) {
                    acc(adj_t, b, gt.col_sums());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(gt) = gt {
                    if self.needs(a) {
                        acc_ref(adj_t, a, gt, 1.0);
                    }
                    if self.needs(b) {
                        acc_ref(adj_t, b, gt, sign);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(a, b), (b, a)] {
                    if !self.needs(this) {
                        continue;
                    }
                    if let Some(gt) = gt {
                        acc(adj_t, this, gt.zip_map(self.value(other), |g, y| g * y));
                    }
                    if let Some(ot) = &tan[other.0] {
                        acc(adj_t, this, g.zip_map(ot, |g, t| g * t));
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(gt) = gt {
                    acc_ref(adj_t, a, gt, c);
                }
            }
            Op::Offset(a) => {
                if let Some(gt) = gt {
                    acc_ref(adj_t, a, gt, 1.0);
                }
            }
            Op::Unary(a, f) => {
                let (x, y) = (self.value(a), &node.value);
                let xt = tan[a.0].as_ref();
                if gt.is_none() && xt.is_none() {
                    return;
                }
                let mut d = Mat::zeros(x.rows(), x.cols());
                let d_s = d.as_mut_slice();
                for k in 0..d_s.len() {
                    let (xk, yk) = (x.as_slice()[k], y.as_slice()[k]);
                    let mut v = 0.0;
                    if let Some(gt) = gt {
                        v += gt.as_slice()[k] * f.d1(xk, yk);
                    }
                    if let Some(xt) = xt {
                        v += g.as_slice()[k] * f.d2(yk) * xt.as_slice()[k];
                    }
                    d_s[k] = v;
                }
                acc(adj_t, a, d);
            }
            Op::SumCols { a, start, end } => {
                if let Some(gt) = gt {
                    acc(adj_t, a, spread_cols(self.value(a).shape(), gt, start, end));
                }
            }
            Op::Gather { a, ref index } => {
                if let Some(gt) = gt {
                    acc(adj_t, a, scatter_rows(self.value(a).shape(), gt, index));
                }
            }
            Op::Sum(a) => {
                if let Some(gt) = gt {
                    let (r, c) = self.value(a).shape();
                    acc(adj_t, a, Mat::filled(r, c, gt.item()));
                }
            }
            Op::Mean(a) => {
                if let Some(gt) = gt {
                    let (r, c) = self.value(a).shape();
                    acc(adj_t, a, Mat::filled(r, c, gt.item() / (r * c) as f64));
                }
            }
        }
    }

    // ---- forward mode over a scalar input ----------------------------------

    pub fn dual_constant(&mut self, value: Mat, tangent: Option<Mat>) -> Dual {
        let primal = self.constant(value);
        let tangent = tangent.map(|t| self.constant(t));
        Dual { primal, tangent }
    }

    /// Lifts a node that does not depend on the differentiation input.
    pub fn lift(&self, v: Var) -> Dual {
        Dual { primal: v, tangent: None }
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Option<Var> {
        match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)),
            (a, None) => a,
            (None, b) => b,
        }
    }

    /// Affine map with input-independent weights.
    pub fn d_affine(&mut self, x: Dual, w: Var, b: Option<Var>) -> Dual {
        let primal = self.affine(x.primal, w, b);
        let tangent = x.tangent.map(|t| self.affine(t, w, None));
        Dual { primal, tangent }
    }

    pub fn d_add(&mut self, a: Dual, b: Dual) -> Dual {
        let primal = self.add(a.primal, b.primal);
        let tangent = self.add_opt(a.tangent, b.tangent);
        Dual { primal, tangent }
    }

    pub fn d_sub(&mut self, a: Dual, b: Dual) -> Dual {
        let primal = self.sub(a.primal, b.primal);
        let tangent = match (a.tangent, b.tangent) {
            (Some(x), Some(y)) => Some(self.sub(x, y)),
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(self.scale(y, -1.0)),
            (None, None) => None,
        };
        Dual { primal, tangent }
    }

    pub fn d_mul(&mut self, a: Dual, b: Dual) -> Dual {
        let primal = self.mul(a.primal, b.primal);
        let ta = a.tangent.map(|t| self.mul(t, b.primal));
        let tb = b.tangent.map(|t| self.mul(a.primal, t));
        let tangent = self.add_opt(ta, tb);
        Dual { primal, tangent }
    }

    pub fn d_scale(&mut self, a: Dual, c: f64) -> Dual {
        let primal = self.scale(a.primal, c);
        let tangent = a.tangent.map(|t| self.scale(t, c));
        Dual { primal, tangent }
    }

    pub fn d_offset(&mut self, a: Dual, c: f64) -> Dual {
        Dual { primal: self.offset(a.primal, c), tangent: a.tangent }
    }

    pub fn d_tanh(&mut self, a: Dual) -> Dual {
        let primal = self.tanh(a.primal);
        let tangent = a.tangent.map(|t| {
            let y2 = self.square(primal);
            let slope = self.scale(y2, -1.0);
            let slope = self.offset(slope, 1.0);
            self.mul(slope, t)
        });
        Dual { primal, tangent }
    }

    pub fn d_sin(&mut self, a: Dual) -> Dual {
        let primal = self.sin(a.primal);
        let tangent = a.tangent.map(|t| {
            let c = self.cos(a.primal);
            self.mul(c, t)
        });
        Dual { primal, tangent }
    }

    pub fn d_cos(&mut self, a: Dual) -> Dual {
        let primal = self.cos(a.primal);
        let tangent = a.tangent.map(|t| {
            let s = self.sin(a.primal);
            let s = self.scale(s, -1.0);
            self.mul(s, t)
        });
        Dual { primal, tangent }
    }

    pub fn d_exp(&mut self, a: Dual) -> Dual {
        let primal = self.exp(a.primal);
        let tangent = a.tangent.map(|t| self.mul(primal, t));
        Dual { primal, tangent }
    }

    pub fn d_square(&mut self, a: Dual) -> Dual {
        let primal = self.square(a.primal);
        let tangent = a.tangent.map(|t| {
            let twice = self.scale(a.primal, 2.0);
            self.mul(twice, t)
        });
        Dual { primal, tangent }
    }

    pub fn d_sum_cols(&mut self, a: Dual, start: usize, end: usize) -> Dual {
        let primal = self.sum_cols(a.primal, start, end);
        let tangent = a.tangent.map(|t| self.sum_cols(t, start, end));
        Dual { primal, tangent }
    }

    pub fn d_gather_rows(&mut self, a: Dual, index: Arc<[usize]>) -> Dual {
        let tangent = a.tangent.map(|t| self.gather_rows(t, index.clone()));
        let primal = self.gather_rows(a.primal, index);
        Dual { primal, tangent }
    }

    /// True if `out` is computed (transitively) from `input`.
    pub fn depends_on(&self, out: Var, input: Var) -> bool {
        if out.0 < input.0 {
            return false;
        }
        let mut reach = vec![false; out.0 + 1];
        reach[input.0] = true;
        for i in input.0 + 1..=out.0 {
            reach[i] = self.nodes[i].op.inputs().iter().flatten().any(|v| v.0 >= input.0 && reach[v.0]);
        }
        reach[out.0]
    }
}

fn lin2(a: &Option<Mat>, b: &Option<Mat>, sign: f64) -> Option<Mat> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.zip_map(b, |x, y| x + sign * y)),
        (Some(a), None) => Some(a.clone()),
        (None, Some(b)) => Some(b.map(|y| sign * y)),
        (None, None) => None,
    }
}

fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn acc_ref(adj: &mut [Option<Mat>], v: Var, g: &Mat, alpha: f64) {
    match &mut adj[v.0] {
        Some(existing) => existing.axpy(alpha, g),
        slot @ None => *slot = Some(if alpha == 1.0 { g.clone() } else { g.map(|x| alpha * x) }),
    }
}

fn acc_gemm(adj: &mut [Option<Mat>], v: Var, shape: (usize, usize), a: &Mat, ta: bool, b: &Mat, tb: bool) {
    match &mut adj[v.0] {
        Some(existing) => gemm(1.0, a, ta, b, tb, 1.0, existing),
        slot @ None => {
            let mut m = Mat::zeros(shape.0, shape.1);
            gemm(1.0, a, ta, b, tb, 0.0, &mut m);
            *slot = Some(m);
        }
    }
}

fn spread_cols(shape: (usize, usize), g: &Mat, start: usize, end: usize) -> Mat {
    let mut d = Mat::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        let gr = g.get(r, 0);
        for c in start..end {
            d.set(r, c, gr);
        }
    }
    d
}

fn scatter_rows(shape: (usize, usize), g: &Mat, index: &[usize]) -> Mat {
    let mut d = Mat::zeros(shape.0, shape.1);
    let cols = shape.1;
    for (k, &i) in index.iter().enumerate() {
        let dst = &mut d.as_mut_slice()[i * cols..(i + 1) * cols];
        for (o, v) in dst.iter_mut().zip(g.row(k)) {
            *o += v;
        }
    }
    d
}
