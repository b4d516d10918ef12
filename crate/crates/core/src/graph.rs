//! Computation-graph IR and the ENet builder.
//!
//! A [`Graph`] is an ordered list of [`NodeSpec`]s whose storage order is a
//! topological order: every node's inputs are defined earlier in the list.
//! Weights are not stored in the graph; nodes carry name references into a
//! [`WeightStore`].

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvParams, ConvTransposeParams};
use crate::tensor::{Shape, WeightTensor};
use crate::weights::WeightStore;

pub type NodeId = usize;

/// Batch norm epsilon used by every normalization layer the builder emits.
pub const BN_EPSILON: f32 = 1e-5;

/// Initial PReLU slope.
pub const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Input,
    Output,
    Conv(ConvParams),
    ConvTranspose(ConvTransposeParams),
    /// 5×1 then 1×5 convolution, both producing `out_channels`.
    AsymConv5 { out_channels: usize, has_bias: bool },
    MaxPool,
    MaxUnpool,
    BatchNorm { epsilon: f32 },
    PRelu,
    Add,
    ConcatChannels,
    PadChannels { target: usize },
    Dropout { rate: f32 },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Input => "Input",
            NodeKind::Output => "Output",
            NodeKind::Conv(_) => "Conv",
            NodeKind::ConvTranspose(_) => "ConvTranspose",
            NodeKind::AsymConv5 { .. } => "AsymConv5",
            NodeKind::MaxPool => "MaxPool",
            NodeKind::MaxUnpool => "MaxUnpool",
            NodeKind::BatchNorm { .. } => "BatchNorm",
            NodeKind::PRelu => "PReLU",
            NodeKind::Add => "Add",
            NodeKind::ConcatChannels => "ConcatChannels",
            NodeKind::PadChannels { .. } => "PadChannels",
            NodeKind::Dropout { .. } => "Dropout",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Input => 0,
            NodeKind::Add | NodeKind::ConcatChannels => 2,
            _ => 1,
        }
    }

    pub fn is_conv_like(&self) -> bool {
        matches!(
            self,
            NodeKind::Conv(_) | NodeKind::ConvTranspose(_) | NodeKind::AsymConv5 { .. }
        )
    }

    pub fn has_bias(&self) -> bool {
        match self {
            NodeKind::Conv(p) => p.has_bias,
            NodeKind::ConvTranspose(p) => p.has_bias,
            NodeKind::AsymConv5 { has_bias, .. } => *has_bias,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightRole {
    Weight,
    Weight5x1,
    Weight1x5,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
    Slope,
}

impl WeightRole {
    pub fn suffix(self) -> &'static str {
        match self {
            WeightRole::Weight => "weight",
            WeightRole::Weight5x1 => "weight_5x1",
            WeightRole::Weight1x5 => "weight_1x5",
            WeightRole::Bias => "bias",
            WeightRole::Gamma => "gamma",
            WeightRole::Beta => "beta",
            WeightRole::RunningMean => "running_mean",
            WeightRole::RunningVar => "running_var",
            WeightRole::Slope => "slope",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Hierarchical layer name, e.g. `bottleneck2.3.conv`. Weight names are
    /// derived from it.
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub weight_refs: Vec<(WeightRole, String)>,
    /// For `MaxUnpool`: the `MaxPool` whose indices it scatters with.
    pub index_link: Option<NodeId>,
}

impl NodeSpec {
    pub fn weight_ref(&self, role: WeightRole) -> Option<&str> {
        self.weight_refs
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, name)| name.as_str())
    }

    /// Pipeline stage encoded in the node name: `initial` → 0,
    /// `bottleneckS.x` → S, `fullconv` → 6.
    pub fn stage(&self) -> Option<usize> {
        let head = self.name.split('.').next()?;
        if head == "initial" {
            Some(0)
        } else if head == "fullconv" {
            Some(6)
        } else {
            head.strip_prefix("bottleneck")?.parse().ok()
        }
    }
}

/// Weight arrays a node of `kind` needs, given the shape of its first input.
pub fn expected_weights(kind: &NodeKind, input: Shape) -> Vec<(WeightRole, Vec<usize>)> {
    let c = input.channels;
    let mut out = Vec::new();
    match *kind {
        NodeKind::Conv(p) => {
            out.push((WeightRole::Weight, p.weight_dims(c).to_vec()));
            if p.has_bias {
                out.push((WeightRole::Bias, vec![p.out_channels]));
            }
        }
        NodeKind::ConvTranspose(p) => {
            out.push((WeightRole::Weight, p.weight_dims(c).to_vec()));
            if p.has_bias {
                out.push((WeightRole::Bias, vec![p.out_channels]));
            }
        }
        NodeKind::AsymConv5 {
            out_channels,
            has_bias,
        } => {
            out.push((WeightRole::Weight5x1, vec![out_channels, c, 5, 1]));
            out.push((WeightRole::Weight1x5, vec![out_channels, out_channels, 1, 5]));
            if has_bias {
                out.push((WeightRole::Bias, vec![out_channels]));
            }
        }
        NodeKind::BatchNorm { .. } => {
            for role in [
                WeightRole::Gamma,
                WeightRole::Beta,
                WeightRole::RunningMean,
                WeightRole::RunningVar,
            ] {
                out.push((role, vec![c]));
            }
        }
        NodeKind::PRelu => out.push((WeightRole::Slope, vec![c])),
        _ => {}
    }
    out
}

/// Output shape of one node. `unpool_target` is the input shape of the
/// `MaxPool` an unpool node is linked to.
pub fn node_output_shape(
    kind: &NodeKind,
    inputs: &[Shape],
    unpool_target: Option<Shape>,
) -> Result<Shape> {
    if inputs.len() != kind.arity() {
        return Err(Error::shape(format!(
            "{} expects {} inputs, got {}",
            kind.label(),
            kind.arity(),
            inputs.len()
        )));
    }
    match *kind {
        NodeKind::Input => Err(Error::shape("input shape comes from the graph")),
        NodeKind::Output
        | NodeKind::BatchNorm { .. }
        | NodeKind::PRelu
        | NodeKind::Dropout { .. } => Ok(inputs[0]),
        NodeKind::Conv(p) => p.output_shape(inputs[0]),
        NodeKind::ConvTranspose(p) => p.output_shape(inputs[0]),
        NodeKind::AsymConv5 { out_channels, .. } => Shape::new(out_channels, inputs[0].height, inputs[0].width),
        NodeKind::MaxPool => kernels::pool_output_shape(inputs[0]),
        NodeKind::MaxUnpool => {
            let target = unpool_target.ok_or_else(|| Error::shape("unpool index source missing"))?;
            let src = inputs[0];
            if target.height != 2 * src.height || target.width != 2 * src.width {
                return Err(Error::shape(format!(
                    "unpool input {src} does not match pooled source {target}"
                )));
            }
            Shape::new(src.channels, target.height, target.width)
        }
        NodeKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(Error::shape(format!(
                    "cannot add {} and {}",
                    inputs[0], inputs[1]
                )));
            }
            Ok(inputs[0])
        }
        NodeKind::ConcatChannels => kernels::concat_output_shape(inputs[0], inputs[1]),
        NodeKind::PadChannels { target } => {
            if target < inputs[0].channels {
                return Err(Error::shape(format!(
                    "cannot pad {} down to {target} channels",
                    inputs[0]
                )));
            }
            Ok(inputs[0].with_channels(target))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<NodeSpec>,
    input_shape: Shape,
    num_classes: usize,
    position: HashMap<NodeId, usize>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.input_shape == other.input_shape
            && self.num_classes == other.num_classes
    }
}

impl Graph {
    /// Assembles a graph from raw parts, checking only that ids are unique.
    /// Use [`crate::passes::validate`] for the full set of invariants.
    pub fn from_parts(nodes: Vec<NodeSpec>, input_shape: Shape, num_classes: usize) -> Result<Self> {
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if position.insert(n.id, i).is_some() {
                return Err(Error::Validation {
                    node: n.id,
                    message: "duplicate node id".into(),
                });
            }
        }
        Ok(Graph {
            nodes,
            input_shape,
            num_classes,
            position,
        })
    }

    pub fn into_parts(self) -> (Vec<NodeSpec>, Shape, usize) {
        (self.nodes, self.input_shape, self.num_classes)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.position.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn input_node(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Input)
    }

    pub fn output_node(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Output)
    }

    /// Ids of nodes that read `id` as a data input (index links excluded).
    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.contains(&id))
            .map(|n| n.id)
            .collect()
    }

    pub fn count_kind(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    /// Compares kinds, hyperparameters, names, weight references and edges,
    /// with edges expressed as storage positions so node ids may differ.
    pub fn structurally_eq(&self, other: &Graph) -> bool {
        if self.nodes.len() != other.nodes.len()
            || self.input_shape != other.input_shape
            || self.num_classes != other.num_classes
        {
            return false;
        }
        let pos_a = |id: &NodeId| self.position(*id);
        let pos_b = |id: &NodeId| other.position(*id);
        self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
            a.kind == b.kind
                && a.name == b.name
                && a.weight_refs == b.weight_refs
                && a.inputs.iter().map(pos_a).eq(b.inputs.iter().map(pos_b))
                && a.index_link.as_ref().map(pos_a) == b.index_link.as_ref().map(pos_b)
        })
    }
}

impl fmt::Display for Graph {
    /// One line per node: `id kind name <- inputs [index link]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# graph input {} classes {} nodes {}",
            self.input_shape,
            self.num_classes,
            self.nodes.len()
        )?;
        for n in &self.nodes {
            write!(f, "{} {} {}", n.id, n.kind.label(), n.name)?;
            if !n.inputs.is_empty() {
                let ins: Vec<String> = n.inputs.iter().map(|i| i.to_string()).collect();
                write!(f, " <- {}", ins.join(","))?;
            }
            if let Some(link) = n.index_link {
                write!(f, " [indices {link}]")?;
            }
            match n.kind {
                NodeKind::Conv(p) => write!(
                    f,
                    " k={}x{} s={} p={},{} d={} out={} bias={}",
                    p.kernel_h, p.kernel_w, p.stride, p.pad_h, p.pad_w, p.dilation, p.out_channels, p.has_bias
                )?,
                NodeKind::ConvTranspose(p) => write!(
                    f,
                    " k={}x{} s={} p={} op={} out={} bias={}",
                    p.kernel_h, p.kernel_w, p.stride, p.pad, p.output_pad, p.out_channels, p.has_bias
                )?,
                NodeKind::AsymConv5 { out_channels, has_bias } => {
                    write!(f, " out={out_channels} bias={has_bias}")?
                }
                NodeKind::PadChannels { target } => write!(f, " target={target}")?,
                NodeKind::Dropout { rate } => write!(f, " p={rate}")?,
                _ => {}
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub type ShapeMap = HashMap<NodeId, Shape>;

/// Infers the output shape of every node for the graph's own input shape.
pub fn infer_shapes(g: &Graph) -> Result<ShapeMap> {
    infer_shapes_for(g, g.input_shape())
}

/// Infers shapes for an arbitrary input resolution. The network is fully
/// convolutional, so any input meeting the divisibility constraints works.
pub fn infer_shapes_for(g: &Graph, input: Shape) -> Result<ShapeMap> {
    input.check()?;
    let mut shapes: ShapeMap = HashMap::with_capacity(g.len());
    for (pos, n) in g.nodes().iter().enumerate() {
        let fail = |message: String| Error::Validation {
            node: n.id,
            message,
        };
        if n.kind == NodeKind::Input {
            shapes.insert(n.id, input);
            continue;
        }
        let mut ins = Vec::with_capacity(n.inputs.len());
        for i in &n.inputs {
            match (g.position(*i), shapes.get(i)) {
                (Some(p), Some(s)) if p < pos => ins.push(*s),
                _ => return Err(fail(format!("input {i} is not defined before this node"))),
            }
        }
        let target = match n.kind {
            NodeKind::MaxUnpool => {
                let link = n
                    .index_link
                    .and_then(|l| g.node(l).filter(|p| p.kind == NodeKind::MaxPool))
                    .ok_or_else(|| fail("unpool index source missing".into()))?;
                let pool_in = link
                    .inputs
                    .first()
                    .and_then(|i| shapes.get(i))
                    .ok_or_else(|| fail("unpool index source is not defined before this node".into()))?;
                Some(*pool_in)
            }
            _ => None,
        };
        let shape = node_output_shape(&n.kind, &ins, target).map_err(|e| fail(e.to_string()))?;
        shapes.insert(n.id, shape);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckKind {
    Regular,
    Downsampling,
    Upsampling,
    Dilated(usize),
    Asymmetric5,
}

/// Incremental graph construction with eager shape inference.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<NodeSpec>,
    shapes: ShapeMap,
    input_shape: Shape,
    num_classes: usize,
    input: NodeId,
    /// Pools opened by downsampling bottlenecks, consumed LIFO by upsampling
    /// bottlenecks.
    pool_stack: Vec<NodeId>,
}

impl GraphBuilder {
    pub fn new(input_shape: Shape, num_classes: usize) -> Result<Self> {
        input_shape.check()?;
        let mut b = GraphBuilder {
            nodes: Vec::new(),
            shapes: HashMap::new(),
            input_shape,
            num_classes,
            input: 0,
            pool_stack: Vec::new(),
        };
        b.nodes.push(NodeSpec {
            id: 0,
            name: "input".into(),
            kind: NodeKind::Input,
            inputs: vec![],
            weight_refs: vec![],
            index_link: None,
        });
        b.shapes.insert(0, input_shape);
        Ok(b)
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.shapes[&id]
    }

    /// Appends a node, inferring its shape and deriving weight names from
    /// `name`.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        kind: NodeKind,
        inputs: &[NodeId],
        index_link: Option<NodeId>,
    ) -> Result<NodeId> {
        let name = name.into();
        let mut ins = Vec::with_capacity(inputs.len());
        for i in inputs {
            ins.push(
                *self
                    .shapes
                    .get(i)
                    .ok_or_else(|| Error::Build(format!("{name}: unknown input node {i}")))?,
            );
        }
        let target = match index_link {
            Some(l) => {
                let pool = self
                    .nodes
                    .iter()
                    .find(|n| n.id == l && n.kind == NodeKind::MaxPool)
                    .ok_or_else(|| Error::Build(format!("{name}: index link {l} is not a max pool")))?;
                Some(self.shapes[&pool.inputs[0]])
            }
            None => None,
        };
        let shape = node_output_shape(&kind, &ins, target)
            .map_err(|e| Error::Build(format!("{name}: {e}")))?;
        let weight_refs = match ins.first() {
            Some(&first) => expected_weights(&kind, first)
                .into_iter()
                .map(|(role, _)| (role, format!("{name}.{}", role.suffix())))
                .collect(),
            None => vec![],
        };
        let id = self.nodes.len();
        self.nodes.push(NodeSpec {
            id,
            name,
            kind,
            inputs: inputs.to_vec(),
            weight_refs,
            index_link,
        });
        self.shapes.insert(id, shape);
        Ok(id)
    }

    fn bn_prelu(&mut self, prefix: &str, from: NodeId) -> Result<NodeId> {
        let bn = self.add(
            format!("{prefix}_bn"),
            NodeKind::BatchNorm { epsilon: BN_EPSILON },
            &[from],
            None,
        )?;
        self.add(format!("{prefix}_prelu"), NodeKind::PRelu, &[bn], None)
    }

    pub fn finish(mut self, from: NodeId) -> Result<Graph> {
        self.add("output", NodeKind::Output, &[from], None)?;
        Graph::from_parts(self.nodes, self.input_shape, self.num_classes)
    }
}

/// Parallel 3×3 stride-2 convolution (13 filters) and 2×2 max pool of the
/// input, concatenated to 16 channels, then batch norm and PReLU.
pub fn build_initial_block(b: &mut GraphBuilder) -> Result<NodeId> {
    let input = b.input();
    let shape = b.shape(input);
    if shape.channels != 3 {
        return Err(Error::Build(format!(
            "initial block expects a 3-channel input, got {shape}"
        )));
    }
    if !shape.height.is_multiple_of(2) || !shape.width.is_multiple_of(2) {
        return Err(Error::Build(format!(
            "initial block expects even spatial dims, got {shape}"
        )));
    }
    let conv = b.add(
        "initial.conv",
        NodeKind::Conv(ConvParams::square(3, 13).with_stride(2).with_pad(1, 1)),
        &[input],
        None,
    )?;
    let pool = b.add("initial.pool", NodeKind::MaxPool, &[input], None)?;
    let cat = b.add("initial.concat", NodeKind::ConcatChannels, &[conv, pool], None)?;
    let bn = b.add(
        "initial.bn",
        NodeKind::BatchNorm { epsilon: BN_EPSILON },
        &[cat],
        None,
    )?;
    b.add("initial.prelu", NodeKind::PRelu, &[bn], None)
}

/// Appends one bottleneck module reading from `from` and returns its output
/// node.
pub fn build_bottleneck(
    b: &mut GraphBuilder,
    name: &str,
    from: NodeId,
    kind: BottleneckKind,
    in_ch: usize,
    out_ch: usize,
    dropout: f32,
) -> Result<NodeId> {
    let resampling = matches!(kind, BottleneckKind::Downsampling | BottleneckKind::Upsampling);
    if !resampling && in_ch != out_ch {
        return Err(Error::Build(format!(
            "{name}: {kind:?} bottleneck must keep channels ({in_ch} → {out_ch})"
        )));
    }
    if !out_ch.is_multiple_of(4) || out_ch == 0 {
        return Err(Error::Build(format!(
            "{name}: output channels {out_ch} not divisible by 4"
        )));
    }
    if b.shape(from).channels != in_ch {
        return Err(Error::Build(format!(
            "{name}: input has {} channels, expected {in_ch}",
            b.shape(from).channels
        )));
    }
    if let BottleneckKind::Dilated(rate) = kind {
        if ![2, 4, 8, 16].contains(&rate) {
            return Err(Error::Build(format!("{name}: unsupported dilation rate {rate}")));
        }
    }
    let inner = out_ch / 4;

    // Extension branch.
    let proj = match kind {
        BottleneckKind::Downsampling => ConvParams::square(2, inner).with_stride(2),
        _ => ConvParams::square(1, inner),
    };
    let x = b.add(format!("{name}.proj"), NodeKind::Conv(proj), &[from], None)?;
    let x = b.bn_prelu(&format!("{name}.proj"), x)?;
    let main = match kind {
        BottleneckKind::Regular | BottleneckKind::Downsampling => {
            NodeKind::Conv(ConvParams::square(3, inner).with_pad(1, 1))
        }
        BottleneckKind::Dilated(rate) => NodeKind::Conv(
            ConvParams::square(3, inner)
                .with_pad(rate, rate)
                .with_dilation(rate),
        ),
        BottleneckKind::Asymmetric5 => NodeKind::AsymConv5 {
            out_channels: inner,
            has_bias: false,
        },
        BottleneckKind::Upsampling => NodeKind::ConvTranspose(ConvTransposeParams {
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            pad: 1,
            output_pad: 1,
            out_channels: inner,
            has_bias: false,
        }),
    };
    let x = b.add(format!("{name}.conv"), main, &[x], None)?;
    let x = b.bn_prelu(&format!("{name}.conv"), x)?;
    let x = b.add(
        format!("{name}.expand"),
        NodeKind::Conv(ConvParams::square(1, out_ch)),
        &[x],
        None,
    )?;
    let x = b.add(
        format!("{name}.expand_bn"),
        NodeKind::BatchNorm { epsilon: BN_EPSILON },
        &[x],
        None,
    )?;
    let ext = b.add(format!("{name}.dropout"), NodeKind::Dropout { rate: dropout }, &[x], None)?;

    // Main branch.
    let main = match kind {
        BottleneckKind::Downsampling => {
            let pool = b.add(format!("{name}.pool"), NodeKind::MaxPool, &[from], None)?;
            b.pool_stack.push(pool);
            b.add(
                format!("{name}.pad"),
                NodeKind::PadChannels { target: out_ch },
                &[pool],
                None,
            )?
        }
        BottleneckKind::Upsampling => {
            let pool = b.pool_stack.pop().ok_or_else(|| {
                Error::Build(format!("{name}: no downsampling pool left to unpool against"))
            })?;
            let c = b.add(
                format!("{name}.main_conv"),
                NodeKind::Conv(ConvParams::square(1, out_ch)),
                &[from],
                None,
            )?;
            let c = b.add(
                format!("{name}.main_bn"),
                NodeKind::BatchNorm { epsilon: BN_EPSILON },
                &[c],
                None,
            )?;
            b.add(format!("{name}.unpool"), NodeKind::MaxUnpool, &[c], Some(pool))?
        }
        _ => from,
    };

    let sum = b.add(format!("{name}.add"), NodeKind::Add, &[main, ext], None)?;
    b.add(format!("{name}.prelu"), NodeKind::PRelu, &[sum], None)
}

const STAGE2_KINDS: [BottleneckKind; 8] = [
    BottleneckKind::Regular,
    BottleneckKind::Dilated(2),
    BottleneckKind::Asymmetric5,
    BottleneckKind::Dilated(4),
    BottleneckKind::Regular,
    BottleneckKind::Dilated(8),
    BottleneckKind::Asymmetric5,
    BottleneckKind::Dilated(16),
];

/// Builds the full ENet graph for a `3 × input_h × input_w` input.
pub fn build_enet(num_classes: usize, input_h: usize, input_w: usize) -> Result<Graph> {
    if num_classes < 2 {
        return Err(Error::Build(format!("need at least 2 classes, got {num_classes}")));
    }
    if !input_h.is_multiple_of(8) || !input_w.is_multiple_of(8) || input_h == 0 || input_w == 0 {
        return Err(Error::Build(format!(
            "input height and width must be positive and divisible by 8, got {input_h}×{input_w}"
        )));
    }
    let mut b = GraphBuilder::new(Shape::new(3, input_h, input_w)?, num_classes)?;
    let mut x = build_initial_block(&mut b)?;

    x = build_bottleneck(&mut b, "bottleneck1.0", x, BottleneckKind::Downsampling, 16, 64, 0.01)?;
    for i in 1..=4 {
        x = build_bottleneck(&mut b, &format!("bottleneck1.{i}"), x, BottleneckKind::Regular, 64, 64, 0.01)?;
    }

    x = build_bottleneck(&mut b, "bottleneck2.0", x, BottleneckKind::Downsampling, 64, 128, 0.1)?;
    for stage in [2, 3] {
        for (i, kind) in STAGE2_KINDS.iter().enumerate() {
            x = build_bottleneck(&mut b, &format!("bottleneck{stage}.{}", i + 1), x, *kind, 128, 128, 0.1)?;
        }
    }

    x = build_bottleneck(&mut b, "bottleneck4.0", x, BottleneckKind::Upsampling, 128, 64, 0.1)?;
    for i in 1..=2 {
        x = build_bottleneck(&mut b, &format!("bottleneck4.{i}"), x, BottleneckKind::Regular, 64, 64, 0.1)?;
    }

    x = build_bottleneck(&mut b, "bottleneck5.0", x, BottleneckKind::Upsampling, 64, 16, 0.1)?;
    x = build_bottleneck(&mut b, "bottleneck5.1", x, BottleneckKind::Regular, 16, 16, 0.1)?;

    let full = ConvTransposeParams {
        kernel_h: 2,
        kernel_w: 2,
        stride: 2,
        pad: 0,
        output_pad: 0,
        out_channels: num_classes,
        has_bias: true,
    };
    x = b.add("fullconv", NodeKind::ConvTranspose(full), &[x], None)?;
    b.finish(x)
}

/// Names of the 29 top-level modules in build order (`initial`,
/// `bottleneck1.0`, …, `fullconv`).
pub fn module_names(g: &Graph) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for n in g.nodes() {
        if matches!(n.kind, NodeKind::Input | NodeKind::Output) {
            continue;
        }
        let module = match n.name.split_once('.') {
            Some((head, rest)) if head.starts_with("bottleneck") => {
                let idx = rest.split('.').next().unwrap_or_default();
                format!("{head}.{idx}")
            }
            Some((head, _)) => head.to_string(),
            None => n.name.clone(),
        };
        if names.last() != Some(&module) {
            names.push(module);
        }
    }
    names
}

/// Deterministic pseudo-random weights: convolution kernels uniform in
/// `±1/sqrt(fan_in)`, biases zero, identity batch norm, PReLU slopes 0.25.
pub fn init_weights(g: &Graph, seed: u64) -> Result<WeightStore> {
    let shapes = infer_shapes(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for n in g.nodes() {
        let Some(first) = n.inputs.first() else { continue };
        for (role, dims) in expected_weights(&n.kind, shapes[first]) {
            let numel: usize = dims.iter().product();
            let data = match role {
                WeightRole::Weight | WeightRole::Weight5x1 | WeightRole::Weight1x5 => {
                    // dims are [out, in, kh, kw] (or [in, out, kh, kw] for
                    // transposed), so fan-in is dims[1..] or dims[0]·kh·kw.
                    let fan_in = match n.kind {
                        NodeKind::ConvTranspose(_) => dims[0] * dims[2] * dims[3],
                        _ => dims[1] * dims[2] * dims[3],
                    };
                    let scale = 1.0 / (fan_in as f32).sqrt();
                    (0..numel).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect()
                }
                WeightRole::Bias | WeightRole::Beta | WeightRole::RunningMean => vec![0.0; numel],
                WeightRole::Gamma | WeightRole::RunningVar => vec![1.0; numel],
                WeightRole::Slope => vec![PRELU_INIT; numel],
            };
            let name = n
                .weight_ref(role)
                .map(str::to_string)
                .unwrap_or_else(|| format!("{}.{}", n.name, role.suffix()));
            store.insert(name, WeightTensor::new(dims, data)?);
        }
    }
    Ok(store)
}
