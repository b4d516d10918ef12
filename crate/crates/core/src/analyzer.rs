//! Static cost model: multiply-accumulates, FLOPs, parameter counts, storage
//! size, plus the logarithmic class-weighting scheme for imbalanced labels.
//!
//! Counting rules, per node, with `out` the number of output elements:
//!
//! | node                  | MACs                                        |
//! |-----------------------|---------------------------------------------|
//! | Conv                  | `out × in_ch × kh × kw`                     |
//! | ConvTranspose         | MACs of the forward conv it is the adjoint of: `in_elems × out_ch × kh × kw` |
//! | AsymConv5             | sum of its 5×1 and 1×5 convolutions         |
//! | BatchNorm, PReLU, Add, MaxPool, MaxUnpool | `out`                   |
//! | everything else       | 0                                           |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{expected_weights, infer_shapes, infer_shapes_for, Graph, NodeId, NodeKind};
use crate::tensor::{DType, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One multiply-accumulate counts as two FLOPs.
    #[default]
    Fma2,
    /// One multiply-accumulate counts as one FLOP.
    Mac,
}

impl FlopConvention {
    pub fn flops_per_mac(self) -> u64 {
        match self {
            FlopConvention::Fma2 => 2,
            FlopConvention::Mac => 1,
        }
    }
}

impl std::str::FromStr for FlopConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fma2" => Ok(FlopConvention::Fma2),
            "mac" => Ok(FlopConvention::Mac),
            other => Err(Error::Domain(format!("unknown FLOP convention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeCost {
    pub id: NodeId,
    pub name: String,
    pub kind: &'static str,
    pub macs: u64,
    pub params: u64,
    pub activation_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub input: Shape,
    pub convention: FlopConvention,
    pub nodes: Vec<NodeCost>,
    pub total_macs: u64,
    pub total_flops: u64,
    pub total_params: u64,
    pub fp16_bytes: u64,
}

impl CostReport {
    /// MACs grouped by pipeline stage (0 = initial block, 6 = final
    /// transposed convolution). Unnamed nodes are skipped.
    pub fn macs_by_stage(&self) -> BTreeMap<usize, u64> {
        self.group_by_stage(|n| n.macs)
    }

    pub fn params_by_stage(&self) -> BTreeMap<usize, u64> {
        self.group_by_stage(|n| n.params)
    }

    fn group_by_stage(&self, f: impl Fn(&NodeCost) -> u64) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for n in &self.nodes {
            if let Some(stage) = stage_of(&n.name) {
                *out.entry(stage).or_default() += f(n);
            }
        }
        out
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }
}

fn stage_of(name: &str) -> Option<usize> {
    let head = name.split('.').next()?;
    match head {
        "initial" => Some(0),
        "fullconv" => Some(6),
        _ => head.strip_prefix("bottleneck")?.parse().ok(),
    }
}

pub fn stage_label(stage: usize) -> String {
    match stage {
        0 => "initial".into(),
        6 => "fullconv".into(),
        s => format!("stage {s}"),
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input        {}", self.input)?;
        writeln!(f, "params       {} ({:.3}M)", self.total_params, self.total_params as f64 / 1e6)?;
        writeln!(f, "macs         {}", self.total_macs)?;
        writeln!(
            f,
            "GFLOPs       {:.3} ({})",
            self.gflops(),
            match self.convention {
                FlopConvention::Fma2 => "2 FLOPs per MAC",
                FlopConvention::Mac => "1 FLOP per MAC",
            }
        )?;
        writeln!(f, "fp16 size    {:.3} MB ({} bytes)", self.fp16_bytes as f64 / 1e6, self.fp16_bytes)?;
        writeln!(f, "per stage:")?;
        let macs = self.macs_by_stage();
        let params = self.params_by_stage();
        for (stage, m) in &macs {
            let share = if self.total_macs > 0 {
                100.0 * *m as f64 / self.total_macs as f64
            } else {
                0.0
            };
            writeln!(
                f,
                "  {:<9} GFLOPs {:>7.3} ({:>5.1}%)  params {:>7}",
                stage_label(*stage),
                (*m * self.convention.flops_per_mac()) as f64 / 1e9,
                share,
                params.get(stage).copied().unwrap_or(0)
            )?;
        }
        Ok(())
    }
}

/// Number of weight elements: convolution kernels and biases, the four
/// per-channel batch norm vectors, PReLU slopes.
pub fn count_params(g: &Graph) -> Result<u64> {
    let shapes = infer_shapes(g)?;
    Ok(g.nodes()
        .iter()
        .map(|n| node_params(&n.kind, n.inputs.first().map(|i| shapes[i])))
        .sum())
}

fn node_params(kind: &NodeKind, input: Option<Shape>) -> u64 {
    input.map_or(0, |s| {
        expected_weights(kind, s)
            .iter()
            .map(|(_, dims)| dims.iter().product::<usize>() as u64)
            .sum()
    })
}

fn node_macs(kind: &NodeKind, inputs: &[Shape], out: Shape) -> u64 {
    let out_elems = out.numel() as u64;
    match *kind {
        NodeKind::Conv(p) => out_elems * (inputs[0].channels * p.kernel_h * p.kernel_w) as u64,
        NodeKind::ConvTranspose(p) => {
            inputs[0].numel() as u64 * (p.out_channels * p.kernel_h * p.kernel_w) as u64
        }
        NodeKind::AsymConv5 { out_channels, .. } => {
            let plane = out.plane() as u64;
            plane * out_channels as u64 * 5 * (inputs[0].channels + out_channels) as u64
        }
        NodeKind::BatchNorm { .. }
        | NodeKind::PRelu
        | NodeKind::Add
        | NodeKind::MaxPool
        | NodeKind::MaxUnpool => out_elems,
        NodeKind::Input
        | NodeKind::Output
        | NodeKind::ConcatChannels
        | NodeKind::PadChannels { .. }
        | NodeKind::Dropout { .. } => 0,
    }
}

/// Per-node and total cost of running `g` on an input of shape `input`.
pub fn count_flops(g: &Graph, input: Shape, convention: FlopConvention) -> Result<CostReport> {
    if input.channels != g.input_shape().channels {
        return Err(Error::shape(format!(
            "graph expects {} input channels, got {input}",
            g.input_shape().channels
        )));
    }
    let shapes = infer_shapes_for(g, input)?;
    let mut nodes = Vec::with_capacity(g.len());
    for n in g.nodes() {
        let ins: Vec<Shape> = n.inputs.iter().map(|i| shapes[i]).collect();
        let out = shapes[&n.id];
        let activation_bytes = match n.kind {
            NodeKind::Output => 0,
            _ => out.bytes() as u64,
        };
        nodes.push(NodeCost {
            id: n.id,
            name: n.name.clone(),
            kind: n.kind.label(),
            macs: if n.kind == NodeKind::Input { 0 } else { node_macs(&n.kind, &ins, out) },
            params: node_params(&n.kind, ins.first().copied()),
            activation_bytes,
        });
    }
    let total_macs = nodes.iter().map(|n| n.macs).sum();
    let total_params: u64 = nodes.iter().map(|n| n.params).sum();
    Ok(CostReport {
        input,
        convention,
        nodes,
        total_macs,
        total_flops: total_macs * convention.flops_per_mac(),
        total_params,
        fp16_bytes: total_params * DType::F16.size() as u64,
    })
}

/// Storage needed for a model's parameters in half precision. The payload is
/// two bytes per parameter; `overhead` is the weight-file framing (header and
/// per-record name/dims) for the graph's weight names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSize {
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
}

impl ModelSize {
    pub fn total(&self) -> u64 {
        self.payload_bytes + self.overhead_bytes
    }
}

pub fn model_size_fp16(g: &Graph) -> Result<ModelSize> {
    let shapes = infer_shapes(g)?;
    let mut payload = 0u64;
    let mut overhead = crate::enwt::HEADER_LEN as u64;
    for n in g.nodes() {
        let Some(first) = n.inputs.first() else { continue };
        for (role, dims) in expected_weights(&n.kind, shapes[first]) {
            payload += dims.iter().product::<usize>() as u64 * DType::F16.size() as u64;
            let name_len = n
                .weight_ref(role)
                .map_or(n.name.len() + 1 + role.suffix().len(), str::len);
            overhead += crate::enwt::record_overhead(name_len, dims.len()) as u64;
        }
    }
    Ok(ModelSize {
        payload_bytes: payload,
        overhead_bytes: overhead,
    })
}

/// Label → pixel count. Labels are kept in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHistogram {
    entries: Vec<(String, u64)>,
}

impl ClassHistogram {
    pub fn new(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.is_empty() || entries.iter().all(|(_, c)| *c == 0) {
            return Err(Error::Domain("histogram has no pixels".into()));
        }
        Ok(ClassHistogram { entries })
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.entries.iter().map(|(_, c)| *c as f64 / total).collect()
    }

    /// Parses `label count` pairs, one per line; blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |message: String| Error::Parse { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let (Some(label), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(fail(format!("expected `label count`, got {line:?}")));
            };
            let count = count
                .parse::<u64>()
                .map_err(|e| fail(format!("bad count {count:?}: {e}")))?;
            entries.push((label.to_string(), count));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// `1 / ln(c + p)`. Requires `c > 1` so the logarithm stays positive at
/// `p = 0`.
pub fn class_weight(p: f64, c: f64) -> Result<f64> {
    if !(c > 1.0) {
        return Err(Error::Domain(format!("class weight constant must exceed 1, got {c}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("class probability {p} outside [0, 1]")));
    }
    Ok(1.0 / (c + p).ln())
}

pub fn compute_class_weights(h: &ClassHistogram, c: f64) -> Result<Vec<f64>> {
    h.probabilities().into_iter().map(|p| class_weight(p, c)).collect()
}
