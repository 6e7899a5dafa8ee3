//! Reverse-mode differentiation over an explicitly recorded operation tape.
//!
//! Every forward primitive appends a node holding its saved output; the
//! reverse pass walks the nodes in strict reverse creation order (a valid
//! reverse topological order, since operands always precede their users) and
//! accumulates gradients into the bound parameter layout and into tracked
//! input slots. Inputs are tracked so callers can differentiate with respect
//! to data as well as parameters (saliency maps need both).

use crate::error::{CoreError, Result};
use crate::nn::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Input { slot: usize },
    Param { offset: usize },
    /// Row-major (rows x cols) matrix times vector.
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise x + c; the constant is irrelevant to the reverse pass.
    Offset(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    /// Scalar sum of all entries.
    Sum(NodeId),
    /// Scalar sum of squared entries.
    SumSq(NodeId),
    Dot(NodeId, NodeId),
    /// Elementwise minimum of two same-length nodes.
    Min2(NodeId, NodeId),
    /// Elementwise clamp to [lo, hi]; gradient passes only strictly inside.
    Clip(NodeId, f64, f64),
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Gradients produced by a reverse pass: one flat vector aligned with the
/// bound [`ParamVector`], plus one vector per tracked input slot.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_len: usize,
    input_lens: Vec<usize>,
}

impl Tape {
    /// A tape bound to the layout of `params`. Parameter leaves must come
    /// from the same layout or gradients would misalign.
    pub fn new(params: &ParamVector) -> Self {
        Tape {
            nodes: Vec::new(),
            param_len: params.len(),
            input_lens: Vec::new(),
        }
    }

    /// A tape with no parameter leaves (pure input differentiation).
    pub fn unparameterized() -> Self {
        Tape {
            nodes: Vec::new(),
            param_len: 0,
            input_lens: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.len_of(id), 1);
        self.nodes[id.0].value[0]
    }

    /// Untracked constant leaf.
    pub fn constant(&mut self, v: &[f64]) -> NodeId {
        self.push(Op::Const, v.to_vec())
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, vec![v])
    }

    /// Tracked input leaf; its gradient is reported in `Gradients::inputs`.
    pub fn input(&mut self, v: &[f64]) -> NodeId {
        let slot = self.input_lens.len();
        self.input_lens.push(v.len());
        self.push(Op::Input { slot }, v.to_vec())
    }

    /// Parameter leaf copied out of `params` by tensor name.
    pub fn param(&mut self, params: &ParamVector, name: &str) -> Result<NodeId> {
        let offset = params.offset(name)?;
        let value = params.tensor(name)?.to_vec();
        if params.len() != self.param_len {
            return Err(CoreError::DimMismatch(
                "parameter vector does not match the tape's bound layout".into(),
            ));
        }
        Ok(self.push(Op::Param { offset }, value))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        if self.len_of(w) != rows * cols || self.len_of(x) != cols {
            return Err(CoreError::DimMismatch(format!(
                "matvec {}x{} applied to weight len {} and input len {}",
                rows,
                cols,
                self.len_of(w),
                self.len_of(x)
            )));
        }
        let mut out = vec![0.0; rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                out[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(Op::MatVec { w, x, rows, cols }, out))
    }

    fn binary_same_len(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(CoreError::DimMismatch(format!(
                "{what}: {} vs {}",
                self.len_of(a),
                self.len_of(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b, "mul")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + c).collect();
        self.push(Op::Offset(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| stable_sigmoid(*x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        self.push(Op::SumSq(a), vec![s])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b, "dot")?;
        let s: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot(a, b), vec![s]))
    }

    pub fn min2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_len(a, b, "min2")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x.min(*y))
            .collect();
        Ok(self.push(Op::Min2(a, b), v))
    }

    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.clamp(lo, hi)).collect();
        self.push(Op::Clip(a, lo, hi), v)
    }

    /// Mean squared difference between `a` and `b` as a scalar node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let n = self.len_of(d) as f64;
        let ss = self.sum_sq(d);
        Ok(self.scale(ss, 1.0 / n))
    }

    /// Reverse pass seeded with dL/d(root) = 1. `root` must be scalar.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.backward_seeded(root, &[1.0])
    }

    /// Reverse pass with an explicit output gradient (same length as `root`).
    pub fn backward_seeded(&self, root: NodeId, seed: &[f64]) -> Result<Gradients> {
        if self.len_of(root) != seed.len() {
            return Err(CoreError::DimMismatch(format!(
                "seed len {} vs root len {}",
                seed.len(),
                self.len_of(root)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(seed.to_vec());

        let mut out = Gradients {
            params: vec![0.0; self.param_len],
            inputs: self.input_lens.iter().map(|l| vec![0.0; *l]).collect(),
        };

        for idx in (0..self.nodes.len()).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Input { slot } => {
                    for (acc, gi) in out.inputs[*slot].iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Param { offset } => {
                    for (i, gi) in g.iter().enumerate() {
                        out.params[offset + i] += gi;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wv = self.nodes[w.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    {
                        let gw = grad_slot(&mut adj, *w, rows * cols);
                        for r in 0..*rows {
                            for c in 0..*cols {
                                gw[r * cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    {
                        let gx = grad_slot(&mut adj, *x, *cols);
                        for r in 0..*rows {
                            for c in 0..*cols {
                                gx[c] += g[r] * wv[r * cols + c];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let ga: Vec<f64> = g.iter().zip(&bv).map(|(gi, b)| gi * b).collect();
                    let gb: Vec<f64> = g.iter().zip(&av).map(|(gi, a)| gi * a).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Offset(a) => accumulate(&mut adj, *a, &g),
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(av)
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, y)| gi * y)
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.len_of(*a)];
                    accumulate(&mut adj, *a, &ga);
                }
                Op::SumSq(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = av.iter().map(|x| 2.0 * x * g[0]).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Dot(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let ga: Vec<f64> = bv.iter().map(|x| x * g[0]).collect();
                    let gb: Vec<f64> = av.iter().map(|x| x * g[0]).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Min2(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let mut ga = vec![0.0; av.len()];
                    let mut gb = vec![0.0; bv.len()];
                    for i in 0..av.len() {
                        // Ties route to the first operand.
                        if av[i] <= bv[i] {
                            ga[i] = g[i];
                        } else {
                            gb[i] = g[i];
                        }
                    }
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Clip(a, lo, hi) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(av)
                        .map(|(gi, x)| if *x > *lo && *x < *hi { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
            }
        }
        Ok(out)
    }
}

fn grad_slot(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    let slot = adj[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
    for (acc, gi) in slot.iter_mut().zip(g) {
        *acc += gi;
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
