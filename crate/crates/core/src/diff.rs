//! Define-by-run reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is an append-only list of [`DiffNode`]s. Every primitive
//! appends one node holding its forward values together with the recipe
//! needed to push gradients back to its parents, so node order is always a
//! valid topological order. Graphs are rebuilt for every batch.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{numel, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{primitive}: shape mismatch: {detail}")]
    Shape { primitive: &'static str, detail: String },
    #[error("{primitive}: expected {expected} inputs, got {got}")]
    Arity {
        primitive: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{primitive}: missing attribute `{attr}`")]
    MissingAttr {
        primitive: &'static str,
        attr: &'static str,
    },
    #[error("{primitive}: {detail}")]
    InvalidAttr { primitive: &'static str, detail: String },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph builder is not deterministic: root {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("node {0} does not belong to this graph")]
    BadNode(usize),
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every differentiable operation the graph knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Concat,
    Slice,
    Tanh,
    Sigmoid,
    Relu,
    RowSoftmax,
    Embedding,
    Dropout,
    Sum,
    Mean,
    Log,
    Gather,
    CosineRows,
    Reshape,
    Transpose,
    Tile,
    RepeatRows,
    WeightedSum,
}

impl Primitive {
    pub const ALL: [Primitive; 23] = [
        Primitive::MatMul,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::Relu,
        Primitive::RowSoftmax,
        Primitive::Embedding,
        Primitive::Dropout,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::Log,
        Primitive::Gather,
        Primitive::CosineRows,
        Primitive::Reshape,
        Primitive::Transpose,
        Primitive::Tile,
        Primitive::RepeatRows,
        Primitive::WeightedSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::RowSoftmax => "row_softmax",
            Primitive::Embedding => "embedding",
            Primitive::Dropout => "dropout",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Log => "log",
            Primitive::Gather => "gather",
            Primitive::CosineRows => "cosine_rows",
            Primitive::Reshape => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::Tile => "tile",
            Primitive::RepeatRows => "repeat_rows",
            Primitive::WeightedSum => "weighted_sum",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| DiffError::UnknownPrimitive(s.to_string()))
    }
}

/// Attributes consumed by primitives. Each primitive reads only the fields it
/// needs and reports a [`DiffError::MissingAttr`] when one is absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub range: Option<(usize, usize)>,
    pub factor: Option<f64>,
    pub keep_prob: Option<f64>,
    pub ids: Option<Vec<usize>>,
    pub mask: Option<Vec<bool>>,
    pub shape: Option<Vec<usize>>,
    pub times: Option<usize>,
    pub floor: Option<f64>,
    pub eps: Option<f64>,
}

impl Attrs {
    pub fn axis(mut self, axis: usize) -> Self {
        self.axis = Some(axis);
        self
    }
    pub fn range(mut self, start: usize, end: usize) -> Self {
        self.range = Some((start, end));
        self
    }
    pub fn factor(mut self, f: f64) -> Self {
        self.factor = Some(f);
        self
    }
    pub fn keep_prob(mut self, p: f64) -> Self {
        self.keep_prob = Some(p);
        self
    }
    pub fn ids(mut self, ids: Vec<usize>) -> Self {
        self.ids = Some(ids);
        self
    }
    pub fn mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }
    pub fn shape(mut self, shape: Vec<usize>) -> Self {
        self.shape = Some(shape);
        self
    }
    pub fn times(mut self, t: usize) -> Self {
        self.times = Some(t);
        self
    }
    pub fn floor(mut self, f: f64) -> Self {
        self.floor = Some(f);
        self
    }
    pub fn eps(mut self, e: f64) -> Self {
        self.eps = Some(e);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Second operand is one row, repeated over every row of the first.
    Row,
    /// Second operand is one column, repeated over every column of the first.
    Col,
}

#[derive(Debug, Clone)]
enum Recipe {
    Leaf,
    MatMul { m: usize, k: usize, n: usize },
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    Scale(f64),
    Concat { axis: usize, widths: Vec<usize> },
    Slice { axis: usize, start: usize, end: usize },
    Tanh,
    Sigmoid,
    Relu,
    RowSoftmax { cols: usize },
    Embedding { ids: Vec<usize>, dim: usize },
    Dropout { scaled_mask: Vec<f64> },
    Sum { row_wise: bool },
    Mean,
    Log { floor: f64 },
    Gather { cols: Vec<usize>, width: usize },
    CosineRows { eps: f64, width: usize },
    Reshape,
    Transpose { rows: usize, cols: usize },
    Tile { times: usize },
    RepeatRows { times: usize, width: usize },
    WeightedSum { batch: usize, len: usize, width: usize },
}

impl Recipe {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Recipe::Leaf => return None,
            Recipe::MatMul { .. } => Primitive::MatMul,
            Recipe::Add(_) => Primitive::Add,
            Recipe::Sub(_) => Primitive::Sub,
            Recipe::Mul(_) => Primitive::Mul,
            Recipe::Scale(_) => Primitive::Scale,
            Recipe::Concat { .. } => Primitive::Concat,
            Recipe::Slice { .. } => Primitive::Slice,
            Recipe::Tanh => Primitive::Tanh,
            Recipe::Sigmoid => Primitive::Sigmoid,
            Recipe::Relu => Primitive::Relu,
            Recipe::RowSoftmax { .. } => Primitive::RowSoftmax,
            Recipe::Embedding { .. } => Primitive::Embedding,
            Recipe::Dropout { .. } => Primitive::Dropout,
            Recipe::Sum { .. } => Primitive::Sum,
            Recipe::Mean => Primitive::Mean,
            Recipe::Log { .. } => Primitive::Log,
            Recipe::Gather { .. } => Primitive::Gather,
            Recipe::CosineRows { .. } => Primitive::CosineRows,
            Recipe::Reshape => Primitive::Reshape,
            Recipe::Transpose { .. } => Primitive::Transpose,
            Recipe::Tile { .. } => Primitive::Tile,
            Recipe::RepeatRows { .. } => Primitive::RepeatRows,
            Recipe::WeightedSum { .. } => Primitive::WeightedSum,
        })
    }
}

/// One value in the computation graph.
#[derive(Debug, Clone)]
pub struct DiffNode {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    parents: Vec<NodeId>,
    recipe: Recipe,
    requires_grad: bool,
}

impl DiffNode {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }
    /// `None` for leaves.
    pub fn primitive(&self) -> Option<Primitive> {
        self.recipe.primitive()
    }
    pub fn is_leaf(&self) -> bool {
        matches!(self.recipe, Recipe::Leaf)
    }
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

pub struct Graph {
    nodes: Vec<DiffNode>,
    rng: ChaCha8Rng,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape_err(primitive: &'static str, detail: impl Into<String>) -> DiffError {
    DiffError::Shape {
        primitive,
        detail: detail.into(),
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
    /// `seed` drives every dropout mask drawn on this graph.
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DiffNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].values[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::new(n.shape.clone(), n.values.clone())
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, parents: Vec<NodeId>, recipe: Recipe) -> NodeId {
        debug_assert_eq!(numel(&shape), values.len());
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let grad = vec![0.0; values.len()];
        self.nodes.push(DiffNode {
            shape,
            values,
            grad,
            parents,
            recipe,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool) -> NodeId {
        let shape = t.shape().to_vec();
        let values = t.into_data();
        let grad = vec![0.0; values.len()];
        self.nodes.push(DiffNode {
            shape,
            values,
            grad,
            parents: Vec::new(),
            recipe: Recipe::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, true)
    }

    /// A leaf excluded from gradient propagation.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, false)
    }

    fn dims2(&self, p: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        match s.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(shape_err(p, format!("expected a 2-D input, got {s:?}"))),
        }
    }

    fn check_ids(&self, inputs: &[NodeId]) -> Result<()> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(DiffError::BadNode(id.0));
            }
        }
        Ok(())
    }

    fn broadcast(&self, p: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if let [rows, cols] = sa.as_slice() {
            if (sb.len() == 1 && sb[0] == *cols) || sb.as_slice() == [1, *cols] {
                return Ok(Broadcast::Row);
            }
            if sb.as_slice() == [*rows, 1] {
                return Ok(Broadcast::Col);
            }
        }
        Err(shape_err(p, format!("cannot combine {sa:?} with {sb:?}")))
    }

    /// Generic entry point: applies `kind` to `inputs`.
    pub fn apply(&mut self, kind: Primitive, inputs: &[NodeId], attrs: &Attrs) -> Result<NodeId> {
        self.check_ids(inputs)?;
        let p = kind.name();
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(DiffError::Arity {
                    primitive: p,
                    expected: n,
                    got: inputs.len(),
                })
            }
        };
        let missing = |attr: &'static str| DiffError::MissingAttr { primitive: p, attr };
        match kind {
            Primitive::MatMul => {
                arity(2)?;
                let (m, k) = self.dims2(p, inputs[0])?;
                let (k2, n) = self.dims2(p, inputs[1])?;
                if k != k2 {
                    return Err(shape_err(p, format!("[{m}, {k}] x [{k2}, {n}]")));
                }
                let a = &self.nodes[inputs[0].0].values;
                let b = &self.nodes[inputs[1].0].values;
                let mut out = vec![0.0; m * n];
                matmul_into(a, b, &mut out, m, k, n);
                Ok(self.push(vec![m, n], out, inputs.to_vec(), Recipe::MatMul { m, k, n }))
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                arity(2)?;
                let bc = self.broadcast(p, inputs[0], inputs[1])?;
                let a = &self.nodes[inputs[0].0];
                let b = &self.nodes[inputs[1].0].values;
                let cols = *a.shape.last().unwrap_or(&1);
                let f: fn(f64, f64) -> f64 = match kind {
                    Primitive::Add => |x, y| x + y,
                    Primitive::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let out: Vec<f64> = match bc {
                    Broadcast::Same => a.values.iter().zip(b).map(|(x, y)| f(*x, *y)).collect(),
                    Broadcast::Row => a.values.iter().enumerate().map(|(i, x)| f(*x, b[i % cols])).collect(),
                    Broadcast::Col => a.values.iter().enumerate().map(|(i, x)| f(*x, b[i / cols])).collect(),
                };
                let shape = a.shape.clone();
                let recipe = match kind {
                    Primitive::Add => Recipe::Add(bc),
                    Primitive::Sub => Recipe::Sub(bc),
                    _ => Recipe::Mul(bc),
                };
                Ok(self.push(shape, out, inputs.to_vec(), recipe))
            }
            Primitive::Scale => {
                arity(1)?;
                let c = attrs.factor.ok_or_else(|| missing("factor"))?;
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().map(|x| c * x).collect();
                let shape = a.shape.clone();
                Ok(self.push(shape, out, inputs.to_vec(), Recipe::Scale(c)))
            }
            Primitive::Tanh | Primitive::Sigmoid | Primitive::Relu => {
                arity(1)?;
                let a = &self.nodes[inputs[0].0];
                let (out, recipe): (Vec<f64>, Recipe) = match kind {
                    Primitive::Tanh => (a.values.iter().map(|x| x.tanh()).collect(), Recipe::Tanh),
                    Primitive::Sigmoid => (a.values.iter().map(|x| sigmoid(*x)).collect(), Recipe::Sigmoid),
                    _ => (a.values.iter().map(|x| x.max(0.0)).collect(), Recipe::Relu),
                };
                let shape = a.shape.clone();
                Ok(self.push(shape, out, inputs.to_vec(), recipe))
            }
            Primitive::Concat => {
                if inputs.is_empty() {
                    return Err(DiffError::Arity {
                        primitive: p,
                        expected: 1,
                        got: 0,
                    });
                }
                let axis = attrs.axis.ok_or_else(|| missing("axis"))?;
                let mut dims = Vec::with_capacity(inputs.len());
                for id in inputs {
                    dims.push(self.dims2(p, *id)?);
                }
                match axis {
                    0 => {
                        let cols = dims[0].1;
                        if let Some(d) = dims.iter().find(|d| d.1 != cols) {
                            return Err(shape_err(p, format!("axis 0 width {} vs {cols}", d.1)));
                        }
                        let rows: usize = dims.iter().map(|d| d.0).sum();
                        let mut out = Vec::with_capacity(rows * cols);
                        for id in inputs {
                            out.extend_from_slice(&self.nodes[id.0].values);
                        }
                        let widths = dims.iter().map(|d| d.0).collect();
                        Ok(self.push(vec![rows, cols], out, inputs.to_vec(), Recipe::Concat { axis, widths }))
                    }
                    1 => {
                        let rows = dims[0].0;
                        if let Some(d) = dims.iter().find(|d| d.0 != rows) {
                            return Err(shape_err(p, format!("axis 1 height {} vs {rows}", d.0)));
                        }
                        let cols: usize = dims.iter().map(|d| d.1).sum();
                        let mut out = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            for (id, d) in inputs.iter().zip(&dims) {
                                out.extend_from_slice(&self.nodes[id.0].values[r * d.1..(r + 1) * d.1]);
                            }
                        }
                        let widths = dims.iter().map(|d| d.1).collect();
                        Ok(self.push(vec![rows, cols], out, inputs.to_vec(), Recipe::Concat { axis, widths }))
                    }
                    _ => Err(DiffError::InvalidAttr {
                        primitive: p,
                        detail: format!("axis {axis} out of range for 2-D inputs"),
                    }),
                }
            }
            Primitive::Slice => {
                arity(1)?;
                let axis = attrs.axis.ok_or_else(|| missing("axis"))?;
                let (start, end) = attrs.range.ok_or_else(|| missing("range"))?;
                let (rows, cols) = self.dims2(p, inputs[0])?;
                let extent = if axis == 0 { rows } else { cols };
                if axis > 1 || start >= end || end > extent {
                    return Err(shape_err(
                        p,
                        format!("range {start}..{end} on axis {axis} of [{rows}, {cols}]"),
                    ));
                }
                let a = &self.nodes[inputs[0].0].values;
                let (shape, out) = if axis == 0 {
                    (vec![end - start, cols], a[start * cols..end * cols].to_vec())
                } else {
                    let w = end - start;
                    let mut out = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        out.extend_from_slice(&a[r * cols + start..r * cols + end]);
                    }
                    (vec![rows, w], out)
                };
                Ok(self.push(shape, out, inputs.to_vec(), Recipe::Slice { axis, start, end }))
            }
            Primitive::RowSoftmax => {
                arity(1)?;
                let (rows, cols) = self.dims2(p, inputs[0])?;
                if let Some(m) = &attrs.mask {
                    if m.len() != rows * cols {
                        return Err(shape_err(p, format!("mask length {} vs {}", m.len(), rows * cols)));
                    }
                }
                let a = &self.nodes[inputs[0].0].values;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let keep = |c: usize| attrs.mask.as_ref().is_none_or(|m| m[r * cols + c]);
                    let row = &a[r * cols..(r + 1) * cols];
                    let mut max = f64::NEG_INFINITY;
                    for (c, x) in row.iter().enumerate() {
                        if keep(c) && *x > max {
                            max = *x;
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        return Err(DiffError::InvalidAttr {
                            primitive: p,
                            detail: format!("row {r} has every position masked"),
                        });
                    }
                    let o = &mut out[r * cols..(r + 1) * cols];
                    let mut z = 0.0;
                    for c in 0..cols {
                        if keep(c) {
                            o[c] = (row[c] - max).exp();
                            z += o[c];
                        }
                    }
                    for v in o.iter_mut() {
                        *v /= z;
                    }
                }
                Ok(self.push(vec![rows, cols], out, inputs.to_vec(), Recipe::RowSoftmax { cols }))
            }
            Primitive::Embedding => {
                arity(1)?;
                let ids = attrs.ids.clone().ok_or_else(|| missing("ids"))?;
                let (v, dim) = self.dims2(p, inputs[0])?;
                if let Some(bad) = ids.iter().find(|&&i| i >= v) {
                    return Err(shape_err(p, format!("id {bad} out of range for {v} rows")));
                }
                let table = &self.nodes[inputs[0].0].values;
                let mut out = Vec::with_capacity(ids.len() * dim);
                for &i in &ids {
                    out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
                }
                let n = ids.len();
                Ok(self.push(vec![n, dim], out, inputs.to_vec(), Recipe::Embedding { ids, dim }))
            }
            Primitive::Dropout => {
                arity(1)?;
                let keep = attrs.keep_prob.ok_or_else(|| missing("keep_prob"))?;
                if !(keep > 0.0 && keep <= 1.0) {
                    return Err(DiffError::InvalidAttr {
                        primitive: p,
                        detail: format!("keep probability {keep} outside (0, 1]"),
                    });
                }
                let n = self.nodes[inputs[0].0].values.len();
                let scaled_mask: Vec<f64> = match &attrs.mask {
                    Some(m) if m.len() == n => m.iter().map(|&k| if k { 1.0 / keep } else { 0.0 }).collect(),
                    Some(m) => {
                        return Err(shape_err(p, format!("mask length {} vs {n}", m.len())));
                    }
                    None => (0..n)
                        .map(|_| {
                            if self.rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                };
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().zip(&scaled_mask).map(|(x, m)| x * m).collect();
                let shape = a.shape.clone();
                Ok(self.push(shape, out, inputs.to_vec(), Recipe::Dropout { scaled_mask }))
            }
            Primitive::Sum => {
                arity(1)?;
                match attrs.axis {
                    None => {
                        let s = self.nodes[inputs[0].0].values.iter().sum();
                        Ok(self.push(vec![1], vec![s], inputs.to_vec(), Recipe::Sum { row_wise: false }))
                    }
                    Some(1) => {
                        let (rows, cols) = self.dims2(p, inputs[0])?;
                        let a = &self.nodes[inputs[0].0].values;
                        let out = (0..rows).map(|r| a[r * cols..(r + 1) * cols].iter().sum()).collect();
                        Ok(self.push(vec![rows, 1], out, inputs.to_vec(), Recipe::Sum { row_wise: true }))
                    }
                    Some(ax) => Err(DiffError::InvalidAttr {
                        primitive: p,
                        detail: format!("unsupported reduction axis {ax}"),
                    }),
                }
            }
            Primitive::Mean => {
                arity(1)?;
                let a = &self.nodes[inputs[0].0].values;
                let m = a.iter().sum::<f64>() / a.len() as f64;
                Ok(self.push(vec![1], vec![m], inputs.to_vec(), Recipe::Mean))
            }
            Primitive::Log => {
                arity(1)?;
                let floor = attrs.floor.unwrap_or(0.0);
                let a = &self.nodes[inputs[0].0];
                let out = a.values.iter().map(|x| x.max(floor).ln()).collect();
                let shape = a.shape.clone();
                Ok(self.push(shape, out, inputs.to_vec(), Recipe::Log { floor }))
            }
            Primitive::Gather => {
                arity(1)?;
                let cols = attrs.ids.clone().ok_or_else(|| missing("ids"))?;
                let (rows, width) = self.dims2(p, inputs[0])?;
                if cols.len() != rows {
                    return Err(shape_err(p, format!("{} indices for {rows} rows", cols.len())));
                }
                if let Some(bad) = cols.iter().find(|&&c| c >= width) {
                    return Err(shape_err(p, format!("column {bad} out of range for width {width}")));
                }
                let a = &self.nodes[inputs[0].0].values;
                let out = cols.iter().enumerate().map(|(r, &c)| a[r * width + c]).collect();
                Ok(self.push(vec![rows, 1], out, inputs.to_vec(), Recipe::Gather { cols, width }))
            }
            Primitive::CosineRows => {
                arity(2)?;
                let eps = attrs.eps.unwrap_or(1e-8);
                let (rows, width) = self.dims2(p, inputs[0])?;
                let d2 = self.dims2(p, inputs[1])?;
                if d2 != (rows, width) {
                    return Err(shape_err(p, format!("[{rows}, {width}] vs [{}, {}]", d2.0, d2.1)));
                }
                let a = &self.nodes[inputs[0].0].values;
                let b = &self.nodes[inputs[1].0].values;
                let out = (0..rows)
                    .map(|r| {
                        let x = &a[r * width..(r + 1) * width];
                        let y = &b[r * width..(r + 1) * width];
                        cosine_guarded(x, y, eps)
                    })
                    .collect();
                Ok(self.push(vec![rows, 1], out, inputs.to_vec(), Recipe::CosineRows { eps, width }))
            }
            Primitive::Reshape => {
                arity(1)?;
                let shape = attrs.shape.clone().ok_or_else(|| missing("shape"))?;
                let a = &self.nodes[inputs[0].0];
                if numel(&shape) != a.values.len() || shape.contains(&0) {
                    return Err(shape_err(p, format!("{:?} -> {shape:?}", a.shape)));
                }
                let out = a.values.clone();
                Ok(self.push(shape, out, inputs.to_vec(), Recipe::Reshape))
            }
            Primitive::Transpose => {
                arity(1)?;
                let (rows, cols) = self.dims2(p, inputs[0])?;
                let a = &self.nodes[inputs[0].0].values;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        out[c * rows + r] = a[r * cols + c];
                    }
                }
                Ok(self.push(vec![cols, rows], out, inputs.to_vec(), Recipe::Transpose { rows, cols }))
            }
            Primitive::Tile => {
                arity(1)?;
                let times = attrs.times.ok_or_else(|| missing("times"))?;
                let (rows, cols) = self.dims2(p, inputs[0])?;
                if times == 0 {
                    return Err(DiffError::InvalidAttr {
                        primitive: p,
                        detail: "times must be positive".into(),
                    });
                }
                let a = &self.nodes[inputs[0].0].values;
                let out = a.repeat(times);
                Ok(self.push(vec![rows * times, cols], out, inputs.to_vec(), Recipe::Tile { times }))
            }
            Primitive::RepeatRows => {
                arity(1)?;
                let times = attrs.times.ok_or_else(|| missing("times"))?;
                let (rows, cols) = self.dims2(p, inputs[0])?;
                if times == 0 {
                    return Err(DiffError::InvalidAttr {
                        primitive: p,
                        detail: "times must be positive".into(),
                    });
                }
                let a = &self.nodes[inputs[0].0].values;
                let mut out = Vec::with_capacity(rows * cols * times);
                for r in 0..rows {
                    for _ in 0..times {
                        out.extend_from_slice(&a[r * cols..(r + 1) * cols]);
                    }
                }
                Ok(self.push(
                    vec![rows * times, cols],
                    out,
                    inputs.to_vec(),
                    Recipe::RepeatRows { times, width: cols },
                ))
            }
            Primitive::WeightedSum => {
                // weights [B, L] against position-major states [L * B, D].
                arity(2)?;
                let (batch, len) = self.dims2(p, inputs[0])?;
                let (srows, width) = self.dims2(p, inputs[1])?;
                if srows != batch * len {
                    return Err(shape_err(
                        p,
                        format!("weights [{batch}, {len}] against states [{srows}, {width}]"),
                    ));
                }
                let w = &self.nodes[inputs[0].0].values;
                let s = &self.nodes[inputs[1].0].values;
                let mut out = vec![0.0; batch * width];
                for b in 0..batch {
                    let o = &mut out[b * width..(b + 1) * width];
                    for l in 0..len {
                        let wt = w[b * len + l];
                        let row = &s[(l * batch + b) * width..(l * batch + b + 1) * width];
                        for (oi, si) in o.iter_mut().zip(row) {
                            *oi += wt * si;
                        }
                    }
                }
                Ok(self.push(
                    vec![batch, width],
                    out,
                    inputs.to_vec(),
                    Recipe::WeightedSum { batch, len, width },
                ))
            }
        }
    }

    /// Parses `name` as a primitive id before applying it.
    pub fn apply_named(&mut self, name: &str, inputs: &[NodeId], attrs: &Attrs) -> Result<NodeId> {
        let kind: Primitive = name.parse()?;
        self.apply(kind, inputs, attrs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b], &Attrs::default())
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b], &Attrs::default())
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b], &Attrs::default())
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b], &Attrs::default())
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale, &[a], &Attrs::default().factor(factor))
    }
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Primitive::Concat, inputs, &Attrs::default().axis(axis))
    }
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Primitive::Slice, &[a], &Attrs::default().axis(axis).range(start, end))
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Tanh, &[a], &Attrs::default())
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[a], &Attrs::default())
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Relu, &[a], &Attrs::default())
    }
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::RowSoftmax, &[a], &Attrs::default())
    }
    /// Row softmax where `mask == false` positions get exactly zero weight.
    pub fn masked_softmax_rows(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        self.apply(Primitive::RowSoftmax, &[a], &Attrs::default().mask(mask))
    }
    pub fn embedding(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::Embedding, &[table], &Attrs::default().ids(ids))
    }
    /// Inverted dropout with a mask drawn from the graph's generator.
    pub fn dropout(&mut self, a: NodeId, keep_prob: f64) -> Result<NodeId> {
        self.apply(Primitive::Dropout, &[a], &Attrs::default().keep_prob(keep_prob))
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a], &Attrs::default())
    }
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a], &Attrs::default().axis(1))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mean, &[a], &Attrs::default())
    }
    pub fn log(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.apply(Primitive::Log, &[a], &Attrs::default().floor(floor))
    }
    pub fn gather(&mut self, a: NodeId, cols: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::Gather, &[a], &Attrs::default().ids(cols))
    }
    pub fn cosine_rows(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Primitive::CosineRows, &[a, b], &Attrs::default().eps(eps))
    }
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::Reshape, &[a], &Attrs::default().shape(shape))
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Transpose, &[a], &Attrs::default())
    }
    pub fn tile(&mut self, a: NodeId, times: usize) -> Result<NodeId> {
        self.apply(Primitive::Tile, &[a], &Attrs::default().times(times))
    }
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> Result<NodeId> {
        self.apply(Primitive::RepeatRows, &[a], &Attrs::default().times(times))
    }
    pub fn weighted_sum(&mut self, weights: NodeId, states: NodeId) -> Result<NodeId> {
        self.apply(Primitive::WeightedSum, &[weights, states], &Attrs::default())
    }

    /// Fills every gradient with d(root)/d(node). Gradients from earlier
    /// calls are discarded first.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        self.check_ids(&[root])?;
        if self.nodes[root.0].values.len() != 1 {
            return Err(DiffError::NonScalarRoot(self.nodes[root.0].shape.clone()));
        }
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad || node.is_leaf() {
                continue;
            }
            propagate(node, before);
        }
        Ok(())
    }
}

fn cosine_guarded(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
    dot / (nx * ny)
}

/// `out += a[m, k] * b[k, n]`. Each output row only ever reads its own
/// input row, so results do not depend on how many rows are batched.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (oj, bj) in o.iter_mut().zip(brow) {
                *oj += av * bj;
            }
        }
    }
}

/// Runs `f` on the gradient buffer of parent `p` together with the parent's
/// values, when that parent takes gradients at all.
fn with_parent<F>(before: &mut [DiffNode], p: NodeId, f: F)
where
    F: FnOnce(&mut [f64], &[f64]),
{
    let parent = &mut before[p.0];
    if !parent.requires_grad {
        return;
    }
    let mut g = std::mem::take(&mut parent.grad);
    f(&mut g, &parent.values);
    parent.grad = g;
}

fn reduce_broadcast(bc: Broadcast, upstream: &[f64], cols: usize, gb: &mut [f64], sign: f64) {
    match bc {
        Broadcast::Same => {
            for (g, u) in gb.iter_mut().zip(upstream) {
                *g += sign * u;
            }
        }
        Broadcast::Row => {
            for (i, u) in upstream.iter().enumerate() {
                gb[i % cols] += sign * u;
            }
        }
        Broadcast::Col => {
            for (i, u) in upstream.iter().enumerate() {
                gb[i / cols] += sign * u;
            }
        }
    }
}

fn propagate(node: &DiffNode, before: &mut [DiffNode]) {
    let go = &node.grad;
    let y = &node.values;
    let ps = &node.parents;
    let cols = *node.shape.last().unwrap_or(&1);
    match &node.recipe {
        Recipe::Leaf => {}
        Recipe::MatMul { m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (a, b) = (ps[0], ps[1]);
            if before[a.0].requires_grad {
                let bv = std::mem::take(&mut before[b.0].values);
                with_parent(before, a, |ga, _| {
                    for i in 0..m {
                        let gorow = &go[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let s: f64 = gorow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[i * k + p] += s;
                        }
                    }
                });
                before[b.0].values = bv;
            }
            if before[b.0].requires_grad {
                let av = std::mem::take(&mut before[a.0].values);
                with_parent(before, b, |gb, _| {
                    for i in 0..m {
                        let gorow = &go[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = &mut gb[p * n..(p + 1) * n];
                            for (g, u) in grow.iter_mut().zip(gorow) {
                                *g += aip * u;
                            }
                        }
                    }
                });
                before[a.0].values = av;
            }
        }
        Recipe::Add(bc) | Recipe::Sub(bc) => {
            let sign = if matches!(node.recipe, Recipe::Sub(_)) {
                -1.0
            } else {
                1.0
            };
            with_parent(before, ps[0], |ga, _| {
                for (g, u) in ga.iter_mut().zip(go) {
                    *g += u;
                }
            });
            with_parent(before, ps[1], |gb, _| reduce_broadcast(*bc, go, cols, gb, sign));
        }
        Recipe::Mul(bc) => {
            let (a, b) = (ps[0], ps[1]);
            let bc = *bc;
            let bv = before[b.0].values.clone();
            with_parent(before, a, |ga, _| {
                for (i, g) in ga.iter_mut().enumerate() {
                    let bi = match bc {
                        Broadcast::Same => i,
                        Broadcast::Row => i % cols,
                        Broadcast::Col => i / cols,
                    };
                    *g += go[i] * bv[bi];
                }
            });
            if before[b.0].requires_grad {
                let av = before[a.0].values.clone();
                let prod: Vec<f64> = go.iter().zip(&av).map(|(u, x)| u * x).collect();
                with_parent(before, b, |gb, _| reduce_broadcast(bc, &prod, cols, gb, 1.0));
            }
        }
        Recipe::Scale(c) => {
            with_parent(before, ps[0], |ga, _| {
                for (g, u) in ga.iter_mut().zip(go) {
                    *g += c * u;
                }
            });
        }
        Recipe::Tanh => with_parent(before, ps[0], |ga, _| {
            for ((g, u), t) in ga.iter_mut().zip(go).zip(y) {
                *g += u * (1.0 - t * t);
            }
        }),
        Recipe::Sigmoid => with_parent(before, ps[0], |ga, _| {
            for ((g, u), s) in ga.iter_mut().zip(go).zip(y) {
                *g += u * s * (1.0 - s);
            }
        }),
        Recipe::Relu => with_parent(before, ps[0], |ga, x| {
            for ((g, u), xi) in ga.iter_mut().zip(go).zip(x) {
                if *xi > 0.0 {
                    *g += u;
                }
            }
        }),
        Recipe::Concat { axis, widths } => {
            if *axis == 0 {
                let mut offset = 0;
                for (p, rows) in ps.iter().zip(widths) {
                    let len = rows * cols;
                    with_parent(before, *p, |g, _| {
                        for (gi, u) in g.iter_mut().zip(&go[offset..offset + len]) {
                            *gi += u;
                        }
                    });
                    offset += len;
                }
            } else {
                let rows = node.shape[0];
                let mut offset = 0;
                for (p, w) in ps.iter().zip(widths) {
                    let w = *w;
                    with_parent(before, *p, |g, _| {
                        for r in 0..rows {
                            let src = &go[r * cols + offset..r * cols + offset + w];
                            for (gi, u) in g[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *gi += u;
                            }
                        }
                    });
                    offset += w;
                }
            }
        }
        Recipe::Slice { axis, start, end } => {
            let (axis, start, end) = (*axis, *start, *end);
            let in_cols = before[ps[0].0].shape[1];
            with_parent(before, ps[0], |g, _| {
                if axis == 0 {
                    for (gi, u) in g[start * in_cols..end * in_cols].iter_mut().zip(go) {
                        *gi += u;
                    }
                } else {
                    let w = end - start;
                    let rows = go.len() / w;
                    for r in 0..rows {
                        let dst = &mut g[r * in_cols + start..r * in_cols + end];
                        for (gi, u) in dst.iter_mut().zip(&go[r * w..(r + 1) * w]) {
                            *gi += u;
                        }
                    }
                }
            });
        }
        Recipe::RowSoftmax { cols } => {
            let cols = *cols;
            with_parent(before, ps[0], |g, _| {
                for r in 0..y.len() / cols {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let ur = &go[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        g[r * cols + c] += yr[c] * (ur[c] - dot);
                    }
                }
            });
        }
        Recipe::Embedding { ids, dim } => {
            let dim = *dim;
            with_parent(before, ps[0], |g, _| {
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut g[id * dim..(id + 1) * dim];
                    for (gi, u) in dst.iter_mut().zip(&go[row * dim..(row + 1) * dim]) {
                        *gi += u;
                    }
                }
            });
        }
        Recipe::Dropout { scaled_mask } => with_parent(before, ps[0], |g, _| {
            for ((gi, u), m) in g.iter_mut().zip(go).zip(scaled_mask) {
                *gi += u * m;
            }
        }),
        Recipe::Sum { row_wise } => {
            let row_wise = *row_wise;
            with_parent(before, ps[0], |g, _| {
                if row_wise {
                    let w = g.len() / go.len();
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += go[i / w];
                    }
                } else {
                    for gi in g.iter_mut() {
                        *gi += go[0];
                    }
                }
            });
        }
        Recipe::Mean => with_parent(before, ps[0], |g, _| {
            let scale = go[0] / g.len() as f64;
            for gi in g.iter_mut() {
                *gi += scale;
            }
        }),
        Recipe::Log { floor } => with_parent(before, ps[0], |g, x| {
            for ((gi, u), xi) in g.iter_mut().zip(go).zip(x) {
                if *xi > *floor {
                    *gi += u / xi;
                }
            }
        }),
        Recipe::Gather { cols: idx, width } => {
            let width = *width;
            with_parent(before, ps[0], |g, _| {
                for (r, &c) in idx.iter().enumerate() {
                    g[r * width + c] += go[r];
                }
            });
        }
        Recipe::CosineRows { eps, width } => {
            let (eps, width) = (*eps, *width);
            let (a, b) = (ps[0], ps[1]);
            let av = before[a.0].values.clone();
            let bv = before[b.0].values.clone();
            let rows = go.len();
            // d cos / dx = y / (|x|' |y|') - cos x / |x|^2 when |x| > eps,
            // and y / (eps |y|') when the norm is clamped.
            let grad_wrt = |x: &[f64], other: &[f64], g: &mut [f64]| {
                for r in 0..rows {
                    let xr = &x[r * width..(r + 1) * width];
                    let yr = &other[r * width..(r + 1) * width];
                    let nx_raw = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nx = nx_raw.max(eps);
                    let ny = yr.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
                    let dot: f64 = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    let cos = dot / (nx * ny);
                    let u = go[r];
                    for c in 0..width {
                        let mut d = yr[c] / (nx * ny);
                        if nx_raw > eps {
                            d -= cos * xr[c] / (nx * nx);
                        }
                        g[r * width + c] += u * d;
                    }
                }
            };
            with_parent(before, a, |g, _| grad_wrt(&av, &bv, g));
            with_parent(before, b, |g, _| grad_wrt(&bv, &av, g));
        }
        Recipe::Reshape => with_parent(before, ps[0], |g, _| {
            for (gi, u) in g.iter_mut().zip(go) {
                *gi += u;
            }
        }),
        Recipe::Transpose { rows, cols } => {
            let (rows, cols) = (*rows, *cols);
            with_parent(before, ps[0], |g, _| {
                for r in 0..rows {
                    for c in 0..cols {
                        g[r * cols + c] += go[c * rows + r];
                    }
                }
            });
        }
        Recipe::Tile { times } => {
            let times = *times;
            with_parent(before, ps[0], |g, _| {
                let n = g.len();
                for t in 0..times {
                    for (gi, u) in g.iter_mut().zip(&go[t * n..(t + 1) * n]) {
                        *gi += u;
                    }
                }
            });
        }
        Recipe::RepeatRows { times, width } => {
            let (times, width) = (*times, *width);
            with_parent(before, ps[0], |g, _| {
                let rows = g.len() / width;
                for r in 0..rows {
                    for t in 0..times {
                        let src = &go[(r * times + t) * width..(r * times + t + 1) * width];
                        for (gi, u) in g[r * width..(r + 1) * width].iter_mut().zip(src) {
                            *gi += u;
                        }
                    }
                }
            });
        }
        Recipe::WeightedSum { batch, len, width } => {
            let (batch, len, width) = (*batch, *len, *width);
            let (w, s) = (ps[0], ps[1]);
            let wv = before[w.0].values.clone();
            let sv = before[s.0].values.clone();
            with_parent(before, w, |g, _| {
                for b in 0..batch {
                    let u = &go[b * width..(b + 1) * width];
                    for l in 0..len {
                        let row = &sv[(l * batch + b) * width..(l * batch + b + 1) * width];
                        g[b * len + l] += u.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            with_parent(before, s, |g, _| {
                for b in 0..batch {
                    let u = &go[b * width..(b + 1) * width];
                    for l in 0..len {
                        let wt = wv[b * len + l];
                        let dst = &mut g[(l * batch + b) * width..(l * batch + b + 1) * width];
                        for (gi, ui) in dst.iter_mut().zip(u) {
                            *gi += wt * ui;
                        }
                    }
                }
            });
        }
    }
}

/// Per-coordinate comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    /// Coordinates whose relative error exceeds the tolerance, as
    /// `(leaf index, coordinate)`.
    pub flagged: Vec<(usize, usize)>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Denominator floor of [`relative_error`] for a function of unit size.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Relative error with a floor on the denominator so coordinates whose true
/// gradient is (nearly) zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_ERROR_FLOOR)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Checks the gradient of a scalar-rooted graph with respect to one leaf.
pub fn grad_check<F>(build: F, leaf: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    grad_check_many(|g, ids| build(g, ids[0]), std::slice::from_ref(leaf), step, tol)
}

/// Checks gradients with respect to several leaves at once. `build` receives
/// a fresh graph (always seeded with 0) and one node per leaf tensor.
pub fn grad_check_many<F>(build: F, leaves: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(0);
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        if g.value(root).len() != 1 {
            return Err(DiffError::NonScalarRoot(g.shape(root).to_vec()));
        }
        Ok(g.scalar(root))
    };

    let mut g = Graph::new(0);
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    g.backward(root)?;
    let first = g.scalar(root);
    let second = eval(leaves)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::NonDeterministic { first, second });
    }

    let mut report = GradCheckReport {
        analytic: Vec::new(),
        numeric: Vec::new(),
        rel_errors: Vec::new(),
        flagged: Vec::new(),
        max_rel_error: 0.0,
        tol,
    };
    // Rounding in f(x +- h) grows with |f|, and so does the floor.
    let floor = REL_ERROR_FLOOR * first.abs().max(1.0);
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (li, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).to_vec();
        for (ci, a) in analytic.iter().enumerate() {
            let orig = work[li].data()[ci];
            work[li].data_mut()[ci] = orig + step;
            let plus = eval(&work)?;
            work[li].data_mut()[ci] = orig - step;
            let minus = eval(&work)?;
            work[li].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error_with_floor(*a, numeric, floor);
            if rel > tol || !rel.is_finite() {
                report.flagged.push((li, ci));
            }
            report.max_rel_error = report.max_rel_error.max(rel);
            report.analytic.push(*a);
            report.numeric.push(numeric);
            report.rel_errors.push(rel);
        }
    }
    Ok(report)
}
