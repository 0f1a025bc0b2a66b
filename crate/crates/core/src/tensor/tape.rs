use std::cell::RefCell;
use std::collections::HashMap;

use super::{ParameterSet, Result, Tensor, TensorError};

/// Negative-side slope of the leaky ReLU used as the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing a `1 × cols` result.
    Rows,
    /// Reduce over columns, producing a `rows × 1` result.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Acos(Var),
    Concat(Vec<Var>),
    TileRows(Var),
    MaxPoolRows(Var, Vec<usize>),
    Sum(Var, Axis),
    Mean(Var, Axis),
    MeanAll(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    MulCol(Var, Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

type Trainable = Box<dyn Fn(&str) -> bool>;

/// Dynamic computation graph, rebuilt for every forward pass.
///
/// Ops take `&self` so calls nest naturally; the tape is single-threaded
/// and meant to be created, used and dropped inside one worker.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    bound: RefCell<HashMap<String, Var>>,
    bound_order: RefCell<Vec<String>>,
    trainable: Trainable,
    record_grads: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_trainable(|_| true)
    }

    /// Tape whose bound parameters only require grad when `trainable(name)`.
    pub fn with_trainable(trainable: impl Fn(&str) -> bool + 'static) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            bound_order: RefCell::new(Vec::new()),
            trainable: Box::new(trainable),
            record_grads: true,
        }
    }

    /// Inference tape: nothing requires grad.
    pub fn no_grad() -> Self {
        let mut t = Self::with_trainable(|_| false);
        t.record_grads = false;
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        self.grads.borrow_mut().push(None);
        Var(nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].rows, nodes[v.0].cols)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        TensorError::ShapeMismatch {
            op,
            lhs: vec![ar, ac],
            rhs: vec![br, bc],
        }
    }

    // ---- leaves -------------------------------------------------------

    /// Records a leaf; it requires grad iff the tensor does.
    pub fn leaf(&self, t: &Tensor) -> Result<Var> {
        let (r, c) = t.dims2()?;
        let needs = t.requires_grad() && self.record_grads;
        Ok(self.push(r, c, t.data().to_vec(), Op::Leaf, needs))
    }

    pub fn constant(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(TensorError::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    pub fn row(&self, data: &[f64]) -> Var {
        self.push(1, data.len(), data.to_vec(), Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    /// Binds a named parameter; repeated calls return the same node.
    pub fn param(&self, params: &ParameterSet, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let (r, c) = t.dims2()?;
        let needs = self.record_grads && t.requires_grad() && (self.trainable)(name);
        let v = self.push(r, c, t.data().to_vec(), Op::Leaf, needs);
        self.bound.borrow_mut().insert(name.to_string(), v);
        self.bound_order.borrow_mut().push(name.to_string());
        Ok(v)
    }

    // ---- inspection ---------------------------------------------------

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape")
    }

    pub fn values(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let (r, c) = self.dims(v);
        self.grads.borrow()[v.0]
            .as_ref()
            .map(|g| Tensor::new(vec![r, c], g.clone()).expect("grad shape"))
    }

    /// Gradients of every trainable bound parameter, in binding order.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        let bound = self.bound.borrow();
        let grads = self.grads.borrow();
        let nodes = self.nodes.borrow();
        self.bound_order
            .borrow()
            .iter()
            .filter_map(|name| {
                let v = bound[name];
                if !nodes[v.0].needs_grad {
                    return None;
                }
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; nodes[v.0].value.len()]);
                Some((name.clone(), g))
            })
            .collect()
    }

    /// Adds the tape's parameter gradients into `params`.
    pub fn accumulate_into(&self, params: &mut ParameterSet) -> Result<()> {
        for (name, g) in self.param_grads() {
            params.accumulate_grad(&name, &g, 1.0)?;
        }
        Ok(())
    }

    // ---- ops ----------------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.nodes.borrow();
            gemm(
                m,
                k,
                n,
                &nodes[a.0].value,
                (k, 1),
                &nodes[b.0].value,
                (n, 1),
                &mut out,
                0.0,
            );
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), needs))
    }

    /// Adds a `1 × C` row to every row of `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != c {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let bv = &nodes[bias.0].value;
            let mut out = xv.clone();
            for row in out.chunks_mut(c) {
                for (o, b) in row.iter_mut().zip(bv) {
                    *o += b;
                }
            }
            out
        };
        let needs = self.needs(&[x, bias]);
        Ok(self.push(r, c, out, Op::AddBias(x, bias), needs))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(b) != (r, c) {
            return Err(self.shape_err(name, a, b));
        }
        let out: Vec<f64> = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .iter()
                .zip(&nodes[b.0].value)
                .map(|(x, y)| f(*x, *y))
                .collect()
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(r, c, out, op, needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes.borrow()[x.0].value.iter().map(|v| f(*v)).collect();
        let needs = self.needs(&[x]);
        self.push(r, c, out, op, needs)
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn leaky_relu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { LEAKY_SLOPE * v },
            Op::LeakyRelu(x),
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Clamp with zero gradient outside the open interval.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// `acos(clamp(x, -1, 1))`, zero gradient at and beyond the endpoints.
    pub fn acos(&self, x: Var) -> Var {
        self.unary(x, |v| v.clamp(-1.0, 1.0).acos(), Op::Acos(x))
    }

    /// Concatenates along the last dimension.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Rank {
            op: "concat",
            shape: vec![],
        })?;
        let (r, _) = self.dims(first);
        for p in parts {
            if self.dims(*p).0 != r {
                return Err(self.shape_err("concat", first, *p));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        {
            let nodes = self.nodes.borrow();
            let mut offset = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let src = &nodes[p.0].value;
                for i in 0..r {
                    out[i * total + offset..i * total + offset + w]
                        .copy_from_slice(&src[i * w..(i + 1) * w]);
                }
                offset += w;
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(r, total, out, Op::Concat(parts.to_vec()), needs))
    }

    /// Repeats a `1 × C` row `n` times.
    pub fn tile_rows(&self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != 1 {
            return Err(TensorError::Rank {
                op: "tile_rows",
                shape: vec![r, c],
            });
        }
        let row = self.nodes.borrow()[x.0].value.clone();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(n, c, out, Op::TileRows(x), needs))
    }

    /// Column-wise max over the set (row) dimension; returns the argmax rows.
    pub fn max_pool_rows(&self, x: Var) -> Result<(Var, Vec<usize>)> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(TensorError::Rank {
                op: "max_pool_rows",
                shape: vec![r, c],
            });
        }
        let (out, arg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let mut out = xv[..c].to_vec();
            let mut arg = vec![0usize; c];
            for i in 1..r {
                let row = &xv[i * c..(i + 1) * c];
                for j in 0..c {
                    if row[j] > out[j] {
                        out[j] = row[j];
                        arg[j] = i;
                    }
                }
            }
            (out, arg)
        };
        let needs = self.needs(&[x]);
        Ok((
            self.push(1, c, out, Op::MaxPoolRows(x, arg.clone()), needs),
            arg,
        ))
    }

    pub fn sum(&self, x: Var, axis: Axis) -> Var {
        let (out, r, c) = self.reduce(x, axis);
        let needs = self.needs(&[x]);
        self.push(r, c, out, Op::Sum(x, axis), needs)
    }

    pub fn mean(&self, x: Var, axis: Axis) -> Var {
        let (xr, xc) = self.dims(x);
        let (mut out, r, c) = self.reduce(x, axis);
        let n = match axis {
            Axis::Rows => xr,
            Axis::Cols => xc,
        } as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let needs = self.needs(&[x]);
        self.push(r, c, out, Op::Mean(x, axis), needs)
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            xv.iter().sum::<f64>() / xv.len() as f64
        };
        let needs = self.needs(&[x]);
        self.push(1, 1, vec![v], Op::MeanAll(x), needs)
    }

    fn reduce(&self, x: Var, axis: Axis) -> (Vec<f64>, usize, usize) {
        let (r, c) = self.dims(x);
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in xv.chunks(c) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                (out, 1, c)
            }
            Axis::Cols => (xv.chunks(c).map(|row| row.iter().sum()).collect(), r, 1),
        }
    }

    /// Euclidean norm of each row, `rows × 1`.
    pub fn row_norm(&self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.nodes.borrow()[x.0]
            .value
            .chunks(c)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let needs = self.needs(&[x]);
        self.push(r, 1, out, Op::RowNorm(x), needs)
    }

    /// Per-row dot product, `rows × 1`.
    pub fn row_dot(&self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(b) != (r, c) {
            return Err(self.shape_err("row_dot", a, b));
        }
        let out: Vec<f64> = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .chunks(c)
                .zip(nodes[b.0].value.chunks(c))
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
                .collect()
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(r, 1, out, Op::RowDot(a, b), needs))
    }

    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            for &i in idx {
                if i >= r {
                    return Err(TensorError::Index {
                        op: "gather_rows",
                        index: i,
                        len: r,
                    });
                }
                out.extend_from_slice(&xv[i * c..(i + 1) * c]);
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(idx.len(), c, out, Op::GatherRows(x, idx.to_vec()), needs))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start >= end || end > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                len: c,
            });
        }
        let w = end - start;
        let out: Vec<f64> = self.nodes.borrow()[x.0]
            .value
            .chunks(c)
            .flat_map(|row| row[start..end].to_vec())
            .collect();
        let needs = self.needs(&[x]);
        Ok(self.push(r, w, out, Op::SliceCols(x, start), needs))
    }

    /// Scales row `i` of `x` by `col[i]`.
    pub fn mul_col(&self, x: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(col) != (r, 1) {
            return Err(self.shape_err("mul_col", x, col));
        }
        let out: Vec<f64> = {
            let nodes = self.nodes.borrow();
            let s = &nodes[col.0].value;
            nodes[x.0]
                .value
                .chunks(c)
                .zip(s)
                .flat_map(|(row, k)| row.iter().map(move |v| v * k))
                .collect()
        };
        let needs = self.needs(&[x, col]);
        Ok(self.push(r, c, out, Op::MulCol(x, col), needs))
    }

    // ---- reverse pass -------------------------------------------------

    /// Accumulates d(loss)/d(node) into every node that requires grad.
    ///
    /// Calling it twice on the same graph adds the gradients twice.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(TensorError::NonScalarLoss(vec![r, c]));
        }
        let nodes = self.nodes.borrow();
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(d) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&nodes, node, &d, &mut adj);
            let mut grads = self.grads.borrow_mut();
            match &mut grads[i] {
                Some(g) => g.iter_mut().zip(&d).for_each(|(g, x)| *g += x),
                slot @ None => *slot = Some(d),
            }
        }
        Ok(())
    }

    fn propagate(&self, nodes: &[Node], node: &Node, d: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                if wants(*a) {
                    // dA = dC · Bᵀ
                    let g = slot(adj, *a, m * k);
                    gemm(m, n, k, d, (n, 1), val(*b), (1, n), g, 1.0);
                }
                if wants(*b) {
                    // dB = Aᵀ · dC
                    let g = slot(adj, *b, k * n);
                    gemm(k, m, n, val(*a), (1, k), d, (n, 1), g, 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    add_into(slot(adj, *x, d.len()), d, 1.0);
                }
                if wants(*b) {
                    let c = node.cols;
                    let g = slot(adj, *b, c);
                    for row in d.chunks(c) {
                        add_into(g, row, 1.0);
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot(adj, *a, d.len()), d, 1.0);
                }
                if wants(*b) {
                    add_into(slot(adj, *b, d.len()), d, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot(adj, *a, d.len()), d, 1.0);
                }
                if wants(*b) {
                    add_into(slot(adj, *b, d.len()), d, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    let g = slot(adj, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let g = slot(adj, *b, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] * av[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let g = slot(adj, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] / bv[i];
                    }
                }
                if wants(*b) {
                    let g = slot(adj, *b, d.len());
                    for i in 0..d.len() {
                        g[i] -= d[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let g = slot(adj, *a, d.len());
                    for i in 0..d.len() {
                        if av[i] <= bv[i] {
                            g[i] += d[i];
                        }
                    }
                }
                if wants(*b) {
                    let g = slot(adj, *b, d.len());
                    for i in 0..d.len() {
                        if av[i] > bv[i] {
                            g[i] += d[i];
                        }
                    }
                }
            }
            Op::Scale(x, s) => add_into(slot(adj, *x, d.len()), d, *s),
            Op::AddScalar(x) => add_into(slot(adj, *x, d.len()), d, 1.0),
            Op::LeakyRelu(x) => {
                let xv = val(*x);
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    g[i] += if xv[i] > 0.0 { d[i] } else { LEAKY_SLOPE * d[i] };
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    g[i] += d[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    g[i] += d[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    g[i] += d[i] * y[i];
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    g[i] += d[i] / xv[i];
                }
            }
            Op::Abs(x) => {
                let xv = val(*x);
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    if xv[i] > 0.0 {
                        g[i] += d[i];
                    } else if xv[i] < 0.0 {
                        g[i] -= d[i];
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x);
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    if xv[i] > *lo && xv[i] < *hi {
                        g[i] += d[i];
                    }
                }
            }
            Op::Acos(x) => {
                let xv = val(*x);
                let g = slot(adj, *x, d.len());
                for i in 0..d.len() {
                    let s = 1.0 - xv[i] * xv[i];
                    if xv[i] > -1.0 && xv[i] < 1.0 && s > 0.0 {
                        g[i] -= d[i] / s.sqrt();
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].cols;
                    if wants(*p) {
                        let g = slot(adj, *p, node.rows * w);
                        for i in 0..node.rows {
                            add_into(
                                &mut g[i * w..(i + 1) * w],
                                &d[i * total + offset..i * total + offset + w],
                                1.0,
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::TileRows(x) => {
                let c = node.cols;
                let g = slot(adj, *x, c);
                for row in d.chunks(c) {
                    add_into(g, row, 1.0);
                }
            }
            Op::MaxPoolRows(x, arg) => {
                let c = node.cols;
                let len = nodes[x.0].value.len();
                let g = slot(adj, *x, len);
                for (j, &i) in arg.iter().enumerate() {
                    g[i * c + j] += d[j];
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let (xr, xc) = (nodes[x.0].rows, nodes[x.0].cols);
                let k = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / xr as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / xc as f64,
                    _ => 1.0,
                };
                let g = slot(adj, *x, xr * xc);
                for i in 0..xr {
                    for j in 0..xc {
                        let dd = match axis {
                            Axis::Rows => d[j],
                            Axis::Cols => d[i],
                        };
                        g[i * xc + j] += k * dd;
                    }
                }
            }
            Op::MeanAll(x) => {
                let len = nodes[x.0].value.len();
                let k = d[0] / len as f64;
                slot(adj, *x, len).iter_mut().for_each(|g| *g += k);
            }
            Op::RowNorm(x) => {
                let xv = val(*x);
                let c = nodes[x.0].cols;
                let y = &node.value;
                let g = slot(adj, *x, xv.len());
                for i in 0..node.rows {
                    if y[i] > 0.0 {
                        for j in 0..c {
                            g[i * c + j] += d[i] * xv[i * c + j] / y[i];
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let c = nodes[a.0].cols;
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let g = slot(adj, *a, av.len());
                    for i in 0..node.rows {
                        for j in 0..c {
                            g[i * c + j] += d[i] * bv[i * c + j];
                        }
                    }
                }
                if wants(*b) {
                    let g = slot(adj, *b, bv.len());
                    for i in 0..node.rows {
                        for j in 0..c {
                            g[i * c + j] += d[i] * av[i * c + j];
                        }
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let c = node.cols;
                let len = nodes[x.0].value.len();
                let g = slot(adj, *x, len);
                for (k, &i) in idx.iter().enumerate() {
                    add_into(&mut g[i * c..(i + 1) * c], &d[k * c..(k + 1) * c], 1.0);
                }
            }
            Op::SliceCols(x, start) => {
                let xc = nodes[x.0].cols;
                let w = node.cols;
                let len = nodes[x.0].value.len();
                let g = slot(adj, *x, len);
                for i in 0..node.rows {
                    add_into(
                        &mut g[i * xc + start..i * xc + start + w],
                        &d[i * w..(i + 1) * w],
                        1.0,
                    );
                }
            }
            Op::MulCol(x, col) => {
                let c = node.cols;
                let (xv, sv) = (val(*x), val(*col));
                if wants(*x) {
                    let g = slot(adj, *x, xv.len());
                    for i in 0..node.rows {
                        for j in 0..c {
                            g[i * c + j] += d[i * c + j] * sv[i];
                        }
                    }
                }
                if wants(*col) {
                    let g = slot(adj, *col, node.rows);
                    for i in 0..node.rows {
                        g[i] += (0..c).map(|j| d[i * c + j] * xv[i * c + j]).sum::<f64>();
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// `c = a·b + beta·c` for row-major `c` with strides given as (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: lengths checked above, strides describe in-bounds row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        let x = t.leaf(&Tensor::scalar(0.0).with_grad()).unwrap();
        let y = t.sigmoid(x);
        assert_eq!(t.item(y), 0.5);
        t.backward(y).unwrap();
        assert!(close(t.grad(x).unwrap().data()[0], 0.25));
    }

    #[test]
    fn square_grad() {
        let t = Tape::new();
        let x = t.leaf(&Tensor::scalar(3.0).with_grad()).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert!(close(t.grad(x).unwrap().data()[0], 6.0));
    }

    #[test]
    fn identity_matmul() {
        let t = Tape::new();
        let eye = t
            .constant(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        let v = t.constant(3, 1, vec![0.3, -2.0, 7.5]).unwrap();
        let y = t.matmul(eye, v).unwrap();
        assert_eq!(t.values(y), vec![0.3, -2.0, 7.5]);
    }

    #[test]
    fn max_pool_argmax() {
        let t = Tape::new();
        let x = t.constant(2, 2, vec![1., 5., 3., 2.]).unwrap();
        let (y, arg) = t.max_pool_rows(x).unwrap();
        assert_eq!(t.values(y), vec![3., 5.]);
        assert_eq!(arg, vec![1, 0]);
    }

    #[test]
    fn shape_errors_name_op() {
        let t = Tape::new();
        let a = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = t.constant(2, 3, vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        assert!(t.add(a, t.row(&[1.0])).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let t = Tape::new();
        let a = t.leaf(&Tensor::row(vec![1.0, 2.0]).with_grad()).unwrap();
        assert!(matches!(
            t.backward(a),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn double_backward_doubles() {
        let t = Tape::new();
        let x = t.leaf(&Tensor::row(vec![0.5, -1.5]).with_grad()).unwrap();
        let y = t.mean_all(t.mul(t.tanh(x), x).unwrap());
        t.backward(y).unwrap();
        let once = t.grad(x).unwrap();
        t.backward(y).unwrap();
        let twice = t.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!(close(2.0 * a, *b));
        }
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::row(vec![1.0, 2.0])).unwrap();
        let t = Tape::no_grad();
        let w = t.param(&params, "w").unwrap();
        let y = t.mean_all(w);
        t.backward(y).unwrap();
        assert!(t.grad(w).is_none());
        assert!(t.param_grads().is_empty());
    }
}
