//! Forward-only inference over (H, W, C) tensors.
//!
//! A [`Graph`] is built node by node; each node may only consume nodes that
//! already exist, so insertion order is a topological order and shapes are
//! propagated (and checked) as the graph is built. Execution lives in
//! [`run_graph`], parameters in [`Weights`], cost accounting in
//! [`flop_count`].

mod exec;
mod flops;
pub mod ops;
mod weights;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::codec::DctPlane;

pub use exec::run_graph;
pub use flops::{flop_count, FlopReport, LayerCost};
pub use weights::{read_weights, seed_weights, write_weights, ParamTensor, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub fn elements(&self) -> usize {
        self.h * self.w * self.c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.h, self.w, self.c)
    }
}

/// A single image, row-major H×W×C.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.elements()],
        }
    }

    pub fn filled(shape: Shape, v: f32) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.elements()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self, GraphError> {
        if data.len() != shape.elements() {
            return Err(GraphError::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.shape.w + x) * self.shape.c + c]
    }

    /// One block per spatial position, its 64 coefficients as channels.
    pub fn from_dct_plane(plane: &DctPlane) -> Self {
        let shape = Shape::new(plane.blocks_high, plane.blocks_wide, 64);
        let data = plane.blocks.iter().flat_map(|b| b.iter().copied()).collect();
        Tensor { shape, data }
    }

    /// Channel-wise concatenation of tensors with equal H and W.
    pub fn concat(parts: &[&Tensor]) -> Result<Self, GraphError> {
        let first = parts.first().ok_or(GraphError::EmptyConcat)?.shape;
        let mut c = 0;
        for p in parts {
            if (p.shape.h, p.shape.w) != (first.h, first.w) {
                return Err(GraphError::ConcatMismatch {
                    layer: "concat".into(),
                    first,
                    other: p.shape,
                });
            }
            c += p.shape.c;
        }
        let shape = Shape::new(first.h, first.w, c);
        Ok(Tensor {
            shape,
            data: ops::concat(parts, shape),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output = ceil(input / stride); odd padding puts the extra row/column
    /// at the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvParams {
    /// Square kernel, "same" padding, no dilation.
    pub fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvParams {
            out_channels,
            kernel: (kernel, kernel),
            stride,
            dilation: 1,
            padding: Padding::Same,
        }
    }

    pub fn valid(mut self) -> Self {
        self.padding = Padding::Valid;
        self
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input {
        shape: Shape,
    },
    Conv(ConvParams),
    /// Transposed convolution; only kernel 2, stride 2 is supported.
    Deconv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        epsilon: f32,
    },
    Relu,
    MaxPool {
        pool: usize,
        stride: usize,
        padding: Padding,
    },
    Concat,
    /// Per-position unit L2 norm over channels times a learned per-channel scale.
    L2Norm {
        epsilon: f32,
    },
    GlobalAvgPool,
    /// Elementwise sum of two equally shaped tensors (residual connections).
    Add,
    /// Channels `start..start + len` of the input.
    Slice {
        start: usize,
        len: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::Deconv { .. } => "deconv",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Concat => "concat",
            LayerKind::L2Norm { .. } => "l2norm",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Add => "add",
            LayerKind::Slice { .. } => "slice",
        }
    }

    /// A short description of the parameters, e.g. `conv 3x3/1 d6 256 same`.
    pub fn describe(&self) -> String {
        let pad = |p: &Padding| match p {
            Padding::Same => "same",
            Padding::Valid => "valid",
        };
        match self {
            LayerKind::Input { shape } => format!("input {shape}"),
            LayerKind::Conv(p) => {
                let dil = if p.dilation > 1 {
                    format!(" d{}", p.dilation)
                } else {
                    String::new()
                };
                format!(
                    "conv {}x{}/{}{} {} {}",
                    p.kernel.0,
                    p.kernel.1,
                    p.stride,
                    dil,
                    p.out_channels,
                    pad(&p.padding)
                )
            }
            LayerKind::Deconv {
                out_channels,
                kernel,
                stride,
            } => {
                format!("deconv {kernel}x{kernel}/{stride} {out_channels}")
            }
            LayerKind::MaxPool { pool, stride, padding } => {
                format!("maxpool {pool}x{pool}/{stride} {}", pad(padding))
            }
            LayerKind::Slice { start, len } => format!("slice {start}..{}", start + len),
            other => other.name().to_string(),
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
    #[error("layer {layer:?}: input node {input} does not exist yet")]
    UnknownNode { layer: String, input: NodeId },
    #[error("layer {layer:?}: expected {expected} input(s), got {actual}")]
    Arity {
        layer: String,
        expected: &'static str,
        actual: usize,
    },
    #[error("layer {layer:?}: channel mismatch, expected {expected}, got {actual}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer:?}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: Shape,
        actual: Shape,
    },
    #[error("layer {layer:?}: output would have non-positive size for input {input}")]
    NonPositiveOutput { layer: String, input: Shape },
    #[error("layer {layer:?}: concat inputs disagree on H/W: {first} vs {other}")]
    ConcatMismatch { layer: String, first: Shape, other: Shape },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("layer {layer:?}: pool {pool} larger than input {input}")]
    PoolTooLarge { layer: String, pool: usize, input: Shape },
    #[error("layer {layer:?}: only kernel 2 / stride 2 deconvolution is supported (got {kernel}/{stride})")]
    UnsupportedDeconv {
        layer: String,
        kernel: usize,
        stride: usize,
    },
    #[error("layer {layer:?}: invalid parameter: {reason}")]
    InvalidParam { layer: String, reason: String },
    #[error("no tensor bound for graph input {0:?}")]
    MissingInput(String),
    #[error("missing weight {0:?}")]
    MissingWeight(String),
    #[error("weight {name:?}: expected dims {expected:?}, got {actual:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("weight {0:?}: negative variance")]
    NegativeVariance(String),
    #[error("tensor data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("weight file: {0}")]
    WeightFile(String),
}

/// Output size along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, dilation: usize, padding: Padding) -> Option<usize> {
    let span = (kernel - 1) * dilation + 1;
    match padding {
        Padding::Same => (input > 0).then(|| input.div_ceil(stride)),
        Padding::Valid => (input >= span).then(|| (input - span) / stride + 1),
    }
}

/// (before, after) padding along one axis; the odd pixel goes after.
pub fn same_padding(input: usize, kernel: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let span = (kernel - 1) * dilation + 1;
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + span).saturating_sub(input);
    (total / 2, total - total / 2)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    layers: Vec<Layer>,
    outputs: Vec<NodeId>,
    index: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: NodeId) -> &Layer {
        &self.layers[id]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.layers[id].shape
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn mark_output(&mut self, id: NodeId) {
        if !self.outputs.contains(&id) {
            self.outputs.push(id);
        }
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Layer> {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Input { .. }))
    }

    /// Total number of values fed to the graph.
    pub fn input_elements(&self) -> usize {
        self.inputs().map(|l| l.shape.elements()).sum()
    }

    /// Appends a layer, checking its inputs and computing its output shape.
    pub fn add(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(GraphError::DuplicateName(name));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.layers.len()) {
            return Err(GraphError::UnknownNode {
                layer: name,
                input: bad,
            });
        }
        let in_shapes: Vec<Shape> = inputs.iter().map(|&i| self.layers[i].shape).collect();
        let shape = infer_shape(&name, &kind, &in_shapes)?;
        let id = self.layers.len();
        self.index.insert(name.clone(), id);
        self.layers.push(Layer {
            name,
            kind,
            inputs: inputs.to_vec(),
            shape,
        });
        Ok(id)
    }

    pub fn input(&mut self, name: impl Into<String>, shape: Shape) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Input { shape }, &[])
    }

    pub fn conv(&mut self, name: impl Into<String>, x: NodeId, p: ConvParams) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Conv(p), &[x])
    }

    pub fn deconv(&mut self, name: impl Into<String>, x: NodeId, out_channels: usize) -> Result<NodeId, GraphError> {
        self.add(
            name,
            LayerKind::Deconv {
                out_channels,
                kernel: 2,
                stride: 2,
            },
            &[x],
        )
    }

    pub fn batchnorm(&mut self, name: impl Into<String>, x: NodeId) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::BatchNorm { epsilon: 1e-3 }, &[x])
    }

    pub fn relu(&mut self, name: impl Into<String>, x: NodeId) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Relu, &[x])
    }

    pub fn maxpool(
        &mut self,
        name: impl Into<String>,
        x: NodeId,
        pool: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::MaxPool { pool, stride, padding }, &[x])
    }

    pub fn concat(&mut self, name: impl Into<String>, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Concat, xs)
    }

    pub fn l2norm(&mut self, name: impl Into<String>, x: NodeId) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::L2Norm { epsilon: 1e-10 }, &[x])
    }

    pub fn global_avg_pool(&mut self, name: impl Into<String>, x: NodeId) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::GlobalAvgPool, &[x])
    }

    pub fn residual_add(&mut self, name: impl Into<String>, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Add, &[a, b])
    }

    pub fn slice(
        &mut self,
        name: impl Into<String>,
        x: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, GraphError> {
        self.add(name, LayerKind::Slice { start, len }, &[x])
    }

    /// One line per layer: `name kind-description inputs -> shape`.
    pub fn shape_table(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            let inputs: Vec<&str> = l.inputs.iter().map(|&i| self.layers[i].name.as_str()).collect();
            out.push_str(&format!(
                "{} | {} | {} | {}\n",
                l.name,
                l.kind.describe(),
                inputs.join(","),
                l.shape
            ));
        }
        out
    }
}

fn infer_shape(layer: &str, kind: &LayerKind, inputs: &[Shape]) -> Result<Shape, GraphError> {
    let arity = |expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(GraphError::Arity {
                layer: layer.to_string(),
                expected,
                actual: inputs.len(),
            })
        }
    };
    let positive = |v: usize, what: &str| {
        if v == 0 {
            Err(GraphError::InvalidParam {
                layer: layer.to_string(),
                reason: format!("{what} must be positive"),
            })
        } else {
            Ok(())
        }
    };
    match kind {
        LayerKind::Input { shape } => {
            arity("0", inputs.is_empty())?;
            positive(shape.elements(), "input size")?;
            Ok(*shape)
        }
        LayerKind::Conv(p) => {
            arity("1", inputs.len() == 1)?;
            positive(p.out_channels, "out_channels")?;
            positive(p.kernel.0 * p.kernel.1, "kernel")?;
            positive(p.stride, "stride")?;
            positive(p.dilation, "dilation")?;
            let x = inputs[0];
            let h = conv_out_len(x.h, p.kernel.0, p.stride, p.dilation, p.padding);
            let w = conv_out_len(x.w, p.kernel.1, p.stride, p.dilation, p.padding);
            match (h, w) {
                (Some(h), Some(w)) => Ok(Shape::new(h, w, p.out_channels)),
                _ => Err(GraphError::NonPositiveOutput {
                    layer: layer.to_string(),
                    input: x,
                }),
            }
        }
        LayerKind::Deconv {
            out_channels,
            kernel,
            stride,
        } => {
            arity("1", inputs.len() == 1)?;
            if (*kernel, *stride) != (2, 2) {
                return Err(GraphError::UnsupportedDeconv {
                    layer: layer.to_string(),
                    kernel: *kernel,
                    stride: *stride,
                });
            }
            positive(*out_channels, "out_channels")?;
            let x = inputs[0];
            Ok(Shape::new(2 * x.h, 2 * x.w, *out_channels))
        }
        LayerKind::BatchNorm { .. } | LayerKind::Relu | LayerKind::L2Norm { .. } => {
            arity("1", inputs.len() == 1)?;
            Ok(inputs[0])
        }
        LayerKind::MaxPool { pool, stride, padding } => {
            arity("1", inputs.len() == 1)?;
            positive(*pool, "pool")?;
            positive(*stride, "stride")?;
            let x = inputs[0];
            if *pool > x.h || *pool > x.w {
                return Err(GraphError::PoolTooLarge {
                    layer: layer.to_string(),
                    pool: *pool,
                    input: x,
                });
            }
            let h = conv_out_len(x.h, *pool, *stride, 1, *padding).unwrap_or(0);
            let w = conv_out_len(x.w, *pool, *stride, 1, *padding).unwrap_or(0);
            Ok(Shape::new(h, w, x.c))
        }
        LayerKind::Concat => {
            arity("at least 1", !inputs.is_empty())?;
            let first = inputs[0];
            let mut c = 0;
            for s in inputs {
                if (s.h, s.w) != (first.h, first.w) {
                    return Err(GraphError::ConcatMismatch {
                        layer: layer.to_string(),
                        first,
                        other: *s,
                    });
                }
                c += s.c;
            }
            Ok(Shape::new(first.h, first.w, c))
        }
        LayerKind::GlobalAvgPool => {
            arity("1", inputs.len() == 1)?;
            Ok(Shape::new(1, 1, inputs[0].c))
        }
        LayerKind::Add => {
            arity("2", inputs.len() == 2)?;
            if inputs[0] != inputs[1] {
                return Err(GraphError::ShapeMismatch {
                    layer: layer.to_string(),
                    expected: inputs[0],
                    actual: inputs[1],
                });
            }
            Ok(inputs[0])
        }
        LayerKind::Slice { start, len } => {
            arity("1", inputs.len() == 1)?;
            positive(*len, "slice length")?;
            let x = inputs[0];
            if start + len > x.c {
                return Err(GraphError::ChannelMismatch {
                    layer: layer.to_string(),
                    expected: start + len,
                    actual: x.c,
                });
            }
            Ok(Shape::new(x.h, x.w, *len))
        }
    }
}
