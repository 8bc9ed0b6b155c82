//! Named-node layer graphs with static shape propagation, truncation and a
//! batched inference-only forward pass.

use std::collections::{BTreeSet, HashMap};

use ndarray::{s, Array2, Array3, Array4, ArrayD, ArrayView3, ArrayView4, Axis, IxDyn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::Scalar;

/// `(height, width, channels)` of a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape3 { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Output length and leading pad for one spatial axis (TensorFlow rules).
    pub fn resolve(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Valid => {
                if input < kernel {
                    None
                } else {
                    Some(((input - kernel) / stride + 1, 0))
                }
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                Some((out, total / 2))
            }
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Input,
    Conv2d {
        input: NodeId,
        filters: usize,
        kernel: (usize, usize),
        strides: (usize, usize),
        padding: Padding,
        bias: bool,
    },
    BatchNorm {
        input: NodeId,
        epsilon: f64,
        scale: bool,
    },
    Relu {
        input: NodeId,
    },
    MaxPool {
        input: NodeId,
        pool: (usize, usize),
        strides: (usize, usize),
        padding: Padding,
    },
    AvgPool {
        input: NodeId,
        pool: (usize, usize),
        strides: (usize, usize),
        padding: Padding,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
}

impl Layer {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Layer::Input => vec![],
            Layer::Conv2d { input, .. }
            | Layer::BatchNorm { input, .. }
            | Layer::Relu { input }
            | Layer::MaxPool { input, .. }
            | Layer::AvgPool { input, .. } => vec![*input],
            Layer::Concat { inputs } => inputs.clone(),
        }
    }

    fn remap(&self, map: &HashMap<NodeId, NodeId>) -> Layer {
        let mut l = self.clone();
        match &mut l {
            Layer::Input => {}
            Layer::Conv2d { input, .. }
            | Layer::BatchNorm { input, .. }
            | Layer::Relu { input }
            | Layer::MaxPool { input, .. }
            | Layer::AvgPool { input, .. } => *input = map[input],
            Layer::Concat { inputs } => inputs.iter_mut().for_each(|i| *i = map[i]),
        }
        l
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input => "Input",
            Layer::Conv2d { .. } => "Conv2D",
            Layer::BatchNorm { .. } => "BatchNormalization",
            Layer::Relu { .. } => "Activation",
            Layer::MaxPool { .. } => "MaxPooling2D",
            Layer::AvgPool { .. } => "AveragePooling2D",
            Layer::Concat { .. } => "Concatenate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    pub output: Shape3,
}

/// A parameter tensor declared by a node: `<node>/<suffix>` with its shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    /// BatchNorm moving statistics are never trainable.
    pub trainable: bool,
}

impl ParamDecl {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A directed acyclic layer graph whose node list is in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    /// Named concatenation nodes that are meaningful truncation points.
    endpoints: Vec<String>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn output(&self) -> &Node {
        self.nodes.last().expect("graphs always hold an input node")
    }

    pub fn input_shape(&self) -> Shape3 {
        self.nodes[0].output
    }

    pub fn endpoints(&self) -> &[String] {
        &self.endpoints
    }

    pub fn param_decls(&self) -> Vec<ParamDecl> {
        self.nodes.iter().flat_map(|n| self.node_params(n)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_decls().iter().map(ParamDecl::len).sum()
    }

    pub fn node_params(&self, node: &Node) -> Vec<ParamDecl> {
        let decl = |suffix: &str, shape: Vec<usize>, trainable: bool| ParamDecl {
            name: format!("{}/{}", node.name, suffix),
            shape,
            trainable,
        };
        match &node.layer {
            Layer::Conv2d {
                input,
                filters,
                kernel,
                bias,
                ..
            } => {
                let cin = self.nodes[*input].output.c;
                let mut v = vec![decl("kernel", vec![kernel.0, kernel.1, cin, *filters], true)];
                if *bias {
                    v.push(decl("bias", vec![*filters], true));
                }
                v
            }
            Layer::BatchNorm { scale, .. } => {
                let c = node.output.c;
                let mut v = Vec::new();
                if *scale {
                    v.push(decl("gamma", vec![c], true));
                }
                v.push(decl("beta", vec![c], true));
                v.push(decl("moving_mean", vec![c], false));
                v.push(decl("moving_variance", vec![c], false));
                v
            }
            _ => vec![],
        }
    }

    /// Keeps `node` and its ancestors only. Everything downstream disappears,
    /// parameters included.
    pub fn truncate(&self, node: &str) -> Result<Graph> {
        let target = *self.index.get(node).ok_or_else(|| Error::UnknownNode {
            node: node.to_string(),
            valid: self.endpoints.clone(),
        })?;
        let mut keep = BTreeSet::new();
        let mut stack = vec![target];
        while let Some(id) = stack.pop() {
            if keep.insert(id) {
                stack.extend(self.nodes[id].layer.inputs());
            }
        }
        let mut map = HashMap::new();
        let mut nodes = Vec::with_capacity(keep.len());
        for old in keep {
            map.insert(old, nodes.len());
            let n = &self.nodes[old];
            nodes.push(Node {
                name: n.name.clone(),
                layer: n.layer.remap(&map),
                output: n.output,
            });
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let endpoints = self
            .endpoints
            .iter()
            .filter(|e| map.contains_key(&self.index[*e]))
            .cloned()
            .collect();
        Ok(Graph {
            nodes,
            index,
            endpoints,
        })
    }
}

/// Incremental graph construction with shape checking.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    endpoints: Vec<String>,
}

impl GraphBuilder {
    pub fn new(input_name: &str, input: Shape3) -> Self {
        let mut b = GraphBuilder {
            nodes: Vec::new(),
            index: HashMap::new(),
            endpoints: Vec::new(),
        };
        b.nodes.push(Node {
            name: input_name.to_string(),
            layer: Layer::Input,
            output: input,
        });
        b.index.insert(input_name.to_string(), 0);
        b
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> Shape3 {
        self.nodes[id].output
    }

    pub fn add(&mut self, name: impl Into<String>, layer: Layer) -> Result<NodeId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate node name `{name}`")));
        }
        let output = self.infer(&name, &layer)?;
        let id = self.nodes.len();
        self.index.insert(name.clone(), id);
        self.nodes.push(Node { name, layer, output });
        Ok(id)
    }

    /// Adds a concatenation and registers it as a truncation endpoint.
    pub fn endpoint(&mut self, name: &str, inputs: Vec<NodeId>) -> Result<NodeId> {
        let id = self.add(name, Layer::Concat { inputs })?;
        self.endpoints.push(name.to_string());
        Ok(id)
    }

    fn infer(&self, name: &str, layer: &Layer) -> Result<Shape3> {
        let too_small = |s: Shape3| Error::InvalidConfig(format!("input {s} is too small for node `{name}`"));
        let spatial = |s: Shape3, k: (usize, usize), st: (usize, usize), p: Padding| -> Result<(usize, usize)> {
            let (oh, _) = p.resolve(s.h, k.0, st.0).ok_or_else(|| too_small(s))?;
            let (ow, _) = p.resolve(s.w, k.1, st.1).ok_or_else(|| too_small(s))?;
            if oh == 0 || ow == 0 {
                return Err(too_small(s));
            }
            Ok((oh, ow))
        };
        Ok(match layer {
            Layer::Input => return Err(Error::InvalidConfig("only one input node is allowed".into())),
            Layer::Conv2d {
                input,
                filters,
                kernel,
                strides,
                padding,
                ..
            } => {
                let (h, w) = spatial(self.shape(*input), *kernel, *strides, *padding)?;
                Shape3::new(h, w, *filters)
            }
            Layer::BatchNorm { input, .. } | Layer::Relu { input } => self.shape(*input),
            Layer::MaxPool {
                input,
                pool,
                strides,
                padding,
            }
            | Layer::AvgPool {
                input,
                pool,
                strides,
                padding,
            } => {
                let s = self.shape(*input);
                let (h, w) = spatial(s, *pool, *strides, *padding)?;
                Shape3::new(h, w, s.c)
            }
            Layer::Concat { inputs } => {
                let first = self.shape(
                    *inputs
                        .first()
                        .ok_or_else(|| Error::InvalidConfig(format!("concatenation `{name}` has no inputs")))?,
                );
                let mut c = 0;
                for &i in inputs {
                    let s = self.shape(i);
                    if (s.h, s.w) != (first.h, first.w) {
                        return Err(Error::shape("concatenation", first, s));
                    }
                    c += s.c;
                }
                Shape3::new(first.h, first.w, c)
            }
        })
    }

    pub fn build(self) -> Graph {
        Graph {
            nodes: self.nodes,
            index: self.index,
            endpoints: self.endpoints,
        }
    }
}

/// Parameter values keyed by declaration name.
pub type ParamStore<T> = HashMap<String, ArrayD<T>>;

/// Evaluates `graph` on a batch. Samples are processed independently (and in
/// parallel), so results do not depend on the thread count.
pub fn forward<T: Scalar>(graph: &Graph, params: &ParamStore<T>, batch: ArrayView4<'_, T>) -> Result<Array4<T>> {
    let expected = graph.input_shape();
    let (_, h, w, c) = batch.dim();
    if (h, w, c) != (expected.h, expected.w, expected.c) {
        return Err(Error::shape("backbone input", expected, Shape3::new(h, w, c)));
    }
    let out = graph.output().output;
    let views: Vec<ArrayView3<'_, T>> = batch.axis_iter(Axis(0)).collect();
    let samples: Vec<Array3<T>> = views.into_par_iter().map(|x| forward_one(graph, params, x)).collect();
    let mut result = Array4::zeros((samples.len(), out.h, out.w, out.c));
    for (i, s) in samples.iter().enumerate() {
        result.slice_mut(s![i, .., .., ..]).assign(s);
    }
    Ok(result)
}

fn forward_one<T: Scalar>(graph: &Graph, params: &ParamStore<T>, x: ArrayView3<'_, T>) -> Array3<T> {
    let nodes = graph.nodes();
    let mut last_use = vec![0usize; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for j in n.layer.inputs() {
            last_use[j] = i;
        }
    }
    last_use[nodes.len() - 1] = usize::MAX;

    let mut values: Vec<Option<Array3<T>>> = vec![None; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let get = |id: NodeId| values[id].as_ref().expect("inputs precede their consumers");
        let p = |suffix: &str| &params[&format!("{}/{}", node.name, suffix)];
        let v = match &node.layer {
            Layer::Input => x.to_owned(),
            Layer::Conv2d {
                input,
                filters,
                kernel,
                strides,
                padding,
                bias,
            } => {
                let b = if *bias { Some(p("bias")) } else { None };
                conv2d(
                    get(*input).view(),
                    p("kernel"),
                    b,
                    *filters,
                    *kernel,
                    *strides,
                    *padding,
                )
            }
            Layer::BatchNorm { input, epsilon, scale } => {
                let gamma = if *scale { Some(p("gamma")) } else { None };
                batch_norm(
                    get(*input),
                    gamma,
                    p("beta"),
                    p("moving_mean"),
                    p("moving_variance"),
                    *epsilon,
                )
            }
            Layer::Relu { input } => get(*input).mapv(|v| v.max(T::zero())),
            Layer::MaxPool {
                input,
                pool,
                strides,
                padding,
            } => pool2d(get(*input).view(), *pool, *strides, *padding, PoolKind::Max),
            Layer::AvgPool {
                input,
                pool,
                strides,
                padding,
            } => pool2d(get(*input).view(), *pool, *strides, *padding, PoolKind::Avg),
            Layer::Concat { inputs } => {
                let views: Vec<_> = inputs.iter().map(|&j| get(j).view()).collect();
                ndarray::concatenate(Axis(2), &views).expect("concat shapes checked at build time")
            }
        };
        values[i] = Some(v);
        for j in node.layer.inputs() {
            if last_use[j] == i {
                values[j] = None;
            }
        }
    }
    values.pop().flatten().expect("output node evaluated")
}

fn conv2d<T: Scalar>(
    x: ArrayView3<'_, T>,
    kernel: &ArrayD<T>,
    bias: Option<&ArrayD<T>>,
    filters: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    padding: Padding,
) -> Array3<T> {
    let (h, w, cin) = x.dim();
    let (oh, ph) = padding.resolve(h, kh, sh).expect("checked at build time");
    let (ow, pw) = padding.resolve(w, kw, sw).expect("checked at build time");
    let k = kh * kw * cin;
    let kernel = kernel
        .view()
        .into_shape_with_order((k, filters))
        .expect("kernel shape checked at load time");

    let out = if kh == 1 && kw == 1 && sh == 1 && sw == 1 {
        let flat = x.as_standard_layout();
        let flat = flat.view().into_shape_with_order((h * w, cin)).expect("contiguous");
        flat.dot(&kernel)
    } else {
        let mut patches = Array2::<T>::zeros((oh * ow, k));
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = patches.row_mut(oy * ow + ox);
                let row = row.as_slice_mut().expect("standard layout");
                for dy in 0..kh {
                    let iy = (oy * sh + dy) as isize - ph as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = (ox * sw + dx) as isize - pw as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let base = (dy * kw + dx) * cin;
                        for (ci, v) in x.slice(s![iy as usize, ix as usize, ..]).iter().enumerate() {
                            row[base + ci] = *v;
                        }
                    }
                }
            }
        }
        patches.dot(&kernel)
    };
    let mut out = out
        .into_shape_with_order((oh, ow, filters))
        .expect("rows match output pixels");
    if let Some(b) = bias {
        let b = b.view().into_shape_with_order(filters).expect("bias shape checked");
        out += &b;
    }
    out
}

fn batch_norm<T: Scalar>(
    x: &Array3<T>,
    gamma: Option<&ArrayD<T>>,
    beta: &ArrayD<T>,
    mean: &ArrayD<T>,
    var: &ArrayD<T>,
    epsilon: f64,
) -> Array3<T> {
    let c = x.dim().2;
    let eps = T::of(epsilon);
    let scale: Vec<T> = (0..c)
        .map(|i| {
            let g = gamma.map(|g| g[[i]]).unwrap_or_else(T::one);
            g / (var[[i]] + eps).sqrt()
        })
        .collect();
    let mut out = x.clone();
    for mut px in out.lanes_mut(Axis(2)) {
        for (i, v) in px.iter_mut().enumerate() {
            *v = (*v - mean[[i]]) * scale[i] + beta[[i]];
        }
    }
    out
}

#[derive(Clone, Copy)]
enum PoolKind {
    Max,
    Avg,
}

/// Max/average pooling; padded positions never contribute (TensorFlow semantics).
fn pool2d<T: Scalar>(
    x: ArrayView3<'_, T>,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    padding: Padding,
    kind: PoolKind,
) -> Array3<T> {
    let (h, w, c) = x.dim();
    let (oh, ph) = padding.resolve(h, kh, sh).expect("checked at build time");
    let (ow, pw) = padding.resolve(w, kw, sw).expect("checked at build time");
    let mut out = Array3::zeros((oh, ow, c));
    let mut acc = vec![T::zero(); c];
    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = (oy * sh) as isize - ph as isize;
            let x0 = (ox * sw) as isize - pw as isize;
            let ys = y0.max(0) as usize..((y0 + kh as isize).min(h as isize)) as usize;
            let xs = x0.max(0) as usize..((x0 + kw as isize).min(w as isize)) as usize;
            let count = T::of((ys.len() * xs.len()) as f64);
            let init = match kind {
                PoolKind::Max => T::neg_infinity(),
                PoolKind::Avg => T::zero(),
            };
            acc.iter_mut().for_each(|a| *a = init);
            for iy in ys.clone() {
                for ix in xs.clone() {
                    for (a, v) in acc.iter_mut().zip(x.slice(s![iy, ix, ..]).iter()) {
                        *a = match kind {
                            PoolKind::Max => a.max(*v),
                            PoolKind::Avg => *a + *v,
                        };
                    }
                }
            }
            for (ch, a) in acc.iter().enumerate() {
                out[[oy, ox, ch]] = match kind {
                    PoolKind::Max => *a,
                    PoolKind::Avg => *a / count,
                };
            }
        }
    }
    out
}

/// Allocates zero-filled parameters for every declaration of `graph`.
pub fn zero_params<T: Scalar>(graph: &Graph) -> ParamStore<T> {
    graph
        .param_decls()
        .into_iter()
        .map(|d| (d.name, ArrayD::zeros(IxDyn(&d.shape))))
        .collect()
}
