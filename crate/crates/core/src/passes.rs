//! Inference-time graph rewrites and structural validation.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{
    expected_weights, node_output_shape, Graph, NodeId, NodeKind, NodeSpec, WeightRole,
};
use crate::kernels::BnParams;
use crate::tensor::{Shape, WeightTensor};
use crate::weights::WeightStore;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassReport {
    pub pass: &'static str,
    pub nodes_removed: usize,
    pub nodes_rewritten: usize,
    pub nodes_inserted: usize,
}

impl fmt::Display for PassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: removed {}, rewritten {}, inserted {}",
            self.pass, self.nodes_removed, self.nodes_rewritten, self.nodes_inserted
        )
    }
}

/// Removes every dropout node (an identity at inference) and rewires its
/// consumers to its input.
pub fn elide_dropout(g: &Graph) -> (Graph, PassReport) {
    let (nodes, input_shape, classes) = g.clone().into_parts();
    let mut forward: HashMap<NodeId, NodeId> = HashMap::new();
    let mut kept = Vec::with_capacity(nodes.len());
    for mut n in nodes {
        for i in n.inputs.iter_mut() {
            if let Some(&src) = forward.get(i) {
                *i = src;
            }
        }
        if matches!(n.kind, NodeKind::Dropout { .. }) {
            forward.insert(n.id, n.inputs[0]);
        } else {
            kept.push(n);
        }
    }
    let report = PassReport {
        pass: "elide_dropout",
        nodes_removed: forward.len(),
        nodes_rewritten: 0,
        nodes_inserted: 0,
    };
    let graph = Graph::from_parts(kept, input_shape, classes).expect("node ids stay unique");
    (graph, report)
}

fn bn_params(node: &NodeSpec, w: &WeightStore, epsilon: f32) -> Result<BnParams> {
    let fetch = |role: WeightRole| -> Result<Vec<f32>> {
        node.weight_ref(role)
            .and_then(|name| w.get(name))
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::Fold {
                node: node.id,
                message: format!("missing {} weights", role.suffix()),
            })
    };
    let p = BnParams {
        gamma: fetch(WeightRole::Gamma)?,
        beta: fetch(WeightRole::Beta)?,
        running_mean: fetch(WeightRole::RunningMean)?,
        running_var: fetch(WeightRole::RunningVar)?,
        epsilon,
    };
    p.check().map_err(|e| Error::Fold {
        node: node.id,
        message: e.to_string(),
    })?;
    Ok(p)
}

fn bn_slice(p: &BnParams, range: std::ops::Range<usize>) -> BnParams {
    BnParams {
        gamma: p.gamma[range.clone()].to_vec(),
        beta: p.beta[range.clone()].to_vec(),
        running_mean: p.running_mean[range.clone()].to_vec(),
        running_var: p.running_var[range].to_vec(),
        epsilon: p.epsilon,
    }
}

/// Absorbs `bn` into the convolution `conv`: each output channel's kernel is
/// scaled by `gamma/sqrt(var+eps)` and the bias becomes
/// `gamma·(b − mean)/sqrt(var+eps) + beta`. The convolution gains a bias if
/// it had none.
fn fold_into_conv(conv: &mut NodeSpec, bn: &BnParams, w: &mut WeightStore) -> Result<()> {
    let fail = |message: String| Error::Fold {
        node: conv.id,
        message,
    };
    let (scale, shift) = bn.affine();
    let (kernel_role, out_axis) = match conv.kind {
        NodeKind::Conv(_) => (WeightRole::Weight, 0),
        NodeKind::ConvTranspose(_) => (WeightRole::Weight, 1),
        NodeKind::AsymConv5 { .. } => (WeightRole::Weight1x5, 0),
        _ => return Err(fail("not a convolution".into())),
    };
    let kernel_name = conv
        .weight_ref(kernel_role)
        .ok_or_else(|| fail("missing kernel reference".into()))?
        .to_string();
    let kernel = w
        .get_mut(&kernel_name)
        .ok_or_else(|| fail(format!("missing kernel {kernel_name}")))?;
    let dims = kernel.dims().to_vec();
    if dims.len() != 4 || dims[out_axis] != scale.len() {
        return Err(fail(format!(
            "kernel {kernel_name} dims {dims:?} do not match {} batch norm channels",
            scale.len()
        )));
    }
    let inner = dims[2] * dims[3];
    for (i, chunk) in kernel.data_mut().chunks_mut(inner).enumerate() {
        let o = if out_axis == 0 { i / dims[1] } else { i % dims[1] };
        chunk.iter_mut().for_each(|v| *v *= scale[o]);
    }

    let old_bias: Vec<f32> = match conv.weight_ref(WeightRole::Bias) {
        Some(name) => w
            .get(name)
            .ok_or_else(|| fail(format!("missing bias {name}")))?
            .data()
            .to_vec(),
        None => vec![0.0; scale.len()],
    };
    // gamma·(b − mean)/sqrt(var+eps) + beta == b·scale + shift
    let bias: Vec<f32> = old_bias
        .iter()
        .zip(scale.iter().zip(&shift))
        .map(|(b, (s, t))| b * s + t)
        .collect();
    let bias_name = match conv.weight_ref(WeightRole::Bias) {
        Some(name) => name.to_string(),
        None => {
            let name = format!("{}.bias", conv.name);
            conv.weight_refs.push((WeightRole::Bias, name.clone()));
            name
        }
    };
    w.insert(bias_name, WeightTensor::vector(bias));
    match &mut conv.kind {
        NodeKind::Conv(p) => p.has_bias = true,
        NodeKind::ConvTranspose(p) => p.has_bias = true,
        NodeKind::AsymConv5 { has_bias, .. } => *has_bias = true,
        _ => unreachable!(),
    }
    Ok(())
}

/// Folds inference-mode batch norm into the preceding convolution.
///
/// A batch norm whose input is a single-consumer convolution is absorbed into
/// it. A batch norm over a channel concatenation is split per concat operand:
/// operands that are single-consumer convolutions absorb their slice, the
/// rest get a batch norm over just their channels, placed before the concat.
/// Any other batch norm is an error.
pub fn fold_batchnorm(g: &Graph, w: &WeightStore) -> Result<(Graph, WeightStore, PassReport)> {
    let mut store = w.clone();
    let (mut nodes, input_shape, classes) = g.clone().into_parts();
    let shapes = crate::graph::infer_shapes(g)?;
    let mut next_id = nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1);
    let mut report = PassReport {
        pass: "fold_batchnorm",
        nodes_removed: 0,
        nodes_rewritten: 0,
        nodes_inserted: 0,
    };

    let consumers = |nodes: &[NodeSpec], id: NodeId| -> Vec<NodeId> {
        nodes
            .iter()
            .filter(|n| n.inputs.contains(&id))
            .map(|n| n.id)
            .collect()
    };
    let pos_of = |nodes: &[NodeSpec], id: NodeId| nodes.iter().position(|n| n.id == id);

    let bn_ids: Vec<NodeId> = nodes
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::BatchNorm { .. }))
        .map(|n| n.id)
        .collect();

    for bn_id in bn_ids {
        let bn_pos = pos_of(&nodes, bn_id).expect("batch norm node present");
        let bn_node = nodes[bn_pos].clone();
        let NodeKind::BatchNorm { epsilon } = bn_node.kind else {
            unreachable!()
        };
        let fail = |message: String| Error::Fold {
            node: bn_id,
            message,
        };
        let &[src] = bn_node.inputs.as_slice() else {
            return Err(fail("batch norm must have exactly one input".into()));
        };
        let src_pos = pos_of(&nodes, src).ok_or_else(|| fail(format!("input {src} missing")))?;
        let params = bn_params(&bn_node, &store, epsilon)?;
        let single_consumer = |nodes: &[NodeSpec], id: NodeId, who: NodeId| consumers(nodes, id) == [who];

        match nodes[src_pos].kind {
            k if k.is_conv_like() => {
                if !single_consumer(&nodes, src, bn_id) {
                    return Err(fail(format!(
                        "convolution {} ({}) has other consumers",
                        src, nodes[src_pos].name
                    )));
                }
                fold_into_conv(&mut nodes[src_pos], &params, &mut store)?;
                report.nodes_rewritten += 1;
            }
            NodeKind::ConcatChannels => {
                if !single_consumer(&nodes, src, bn_id) {
                    return Err(fail(format!("concat {src} has other consumers")));
                }
                let operands = nodes[src_pos].inputs.clone();
                let mut start = 0;
                for (k, op) in operands.iter().enumerate() {
                    let ch = shapes
                        .get(op)
                        .ok_or_else(|| fail(format!("no shape for concat operand {op}")))?
                        .channels;
                    let part = bn_slice(&params, start..start + ch);
                    start += ch;
                    let op_pos = pos_of(&nodes, *op).expect("operand present");
                    if nodes[op_pos].kind.is_conv_like() && single_consumer(&nodes, *op, src) {
                        fold_into_conv(&mut nodes[op_pos], &part, &mut store)?;
                        report.nodes_rewritten += 1;
                        continue;
                    }
                    let name = format!("{}.part{k}", bn_node.name);
                    let new_id = next_id;
                    next_id += 1;
                    let weight_refs: Vec<(WeightRole, String)> = [
                        (WeightRole::Gamma, part.gamma),
                        (WeightRole::Beta, part.beta),
                        (WeightRole::RunningMean, part.running_mean),
                        (WeightRole::RunningVar, part.running_var),
                    ]
                    .into_iter()
                    .map(|(role, data)| {
                        let wname = format!("{name}.{}", role.suffix());
                        store.insert(wname.clone(), WeightTensor::vector(data));
                        (role, wname)
                    })
                    .collect();
                    let concat_pos = pos_of(&nodes, src).expect("concat present");
                    nodes[concat_pos].inputs[k] = new_id;
                    nodes.insert(
                        concat_pos,
                        NodeSpec {
                            id: new_id,
                            name,
                            kind: NodeKind::BatchNorm { epsilon },
                            inputs: vec![*op],
                            weight_refs,
                            index_link: None,
                        },
                    );
                    report.nodes_inserted += 1;
                }
            }
            _ => {
                return Err(fail(format!(
                    "input {} ({}) is a {}, not a convolution",
                    src,
                    nodes[src_pos].name,
                    nodes[src_pos].kind.label()
                )))
            }
        }

        for (_, name) in &bn_node.weight_refs {
            store.remove(name);
        }
        let bn_pos = pos_of(&nodes, bn_id).expect("batch norm node present");
        nodes.remove(bn_pos);
        for n in nodes.iter_mut() {
            for i in n.inputs.iter_mut() {
                if *i == bn_id {
                    *i = src;
                }
            }
        }
        report.nodes_removed += 1;
    }

    let graph = Graph::from_parts(nodes, input_shape, classes)?;
    Ok((graph, store, report))
}

/// Runs [`fold_batchnorm`] then [`elide_dropout`].
pub fn fuse(g: &Graph, w: &WeightStore) -> Result<(Graph, WeightStore, Vec<PassReport>)> {
    let (g1, w1, r1) = fold_batchnorm(g, w)?;
    let (g2, r2) = elide_dropout(&g1);
    Ok((g2, w1, vec![r1, r2]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "node {id}: {}", self.message),
            None => write!(f, "graph: {}", self.message),
        }
    }
}

/// Checks every structural and weight invariant. An empty result means the
/// graph can be executed with `w`.
pub fn validate(g: &Graph, w: &WeightStore) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |node: Option<NodeId>, message: String| diags.push(Diagnostic { node, message });

    let inputs = g.count_kind(|k| *k == NodeKind::Input);
    let outputs = g.count_kind(|k| *k == NodeKind::Output);
    if inputs != 1 {
        push(None, format!("expected exactly one Input node, found {inputs}"));
    }
    if outputs != 1 {
        push(None, format!("expected exactly one Output node, found {outputs}"));
    }

    let mut shapes: HashMap<NodeId, Shape> = HashMap::new();
    for (pos, n) in g.nodes().iter().enumerate() {
        let label = format!("{} ({})", n.name, n.kind.label());
        let mut ok = true;
        for i in &n.inputs {
            match g.position(*i) {
                Some(p) if p < pos => {}
                Some(_) => {
                    push(Some(n.id), format!("{label}: input {i} is defined after its consumer"));
                    ok = false;
                }
                None => {
                    push(Some(n.id), format!("{label}: input {i} does not exist"));
                    ok = false;
                }
            }
        }
        if n.inputs.len() != n.kind.arity() {
            push(
                Some(n.id),
                format!("{label}: expects {} inputs, has {}", n.kind.arity(), n.inputs.len()),
            );
            ok = false;
        }

        let mut target = None;
        if n.kind == NodeKind::MaxUnpool {
            let link = n.index_link.and_then(|l| {
                g.node(l)
                    .filter(|p| p.kind == NodeKind::MaxPool && g.position(l) < Some(pos))
            });
            match link {
                Some(pool) => target = pool.inputs.first().and_then(|i| shapes.get(i)).copied(),
                None => {
                    push(Some(n.id), "unpool index source missing".into());
                    ok = false;
                }
            }
        } else if n.index_link.is_some() {
            push(Some(n.id), format!("{label}: only unpool nodes may carry an index link"));
        }

        if n.kind == NodeKind::Input {
            shapes.insert(n.id, g.input_shape());
            continue;
        }
        if !ok {
            continue;
        }
        let Some(in_shapes) = n
            .inputs
            .iter()
            .map(|i| shapes.get(i).copied())
            .collect::<Option<Vec<Shape>>>()
        else {
            continue;
        };
        if n.kind == NodeKind::MaxUnpool && target.is_none() {
            continue;
        }
        match node_output_shape(&n.kind, &in_shapes, target) {
            Ok(s) => {
                shapes.insert(n.id, s);
            }
            Err(e) => {
                push(Some(n.id), format!("{label}: {e}"));
                continue;
            }
        }

        for (role, dims) in expected_weights(&n.kind, in_shapes[0]) {
            let Some(name) = n.weight_ref(role) else {
                push(Some(n.id), format!("{label}: no {} weight reference", role.suffix()));
                continue;
            };
            match w.get(name) {
                None => push(Some(n.id), format!("{label}: weight {name} missing from store")),
                Some(t) if t.dims() != dims => push(
                    Some(n.id),
                    format!("{label}: weight {name} has dims {:?}, expected {dims:?}", t.dims()),
                ),
                Some(t) if role == WeightRole::RunningVar && t.data().iter().any(|&v| !(v >= 0.0)) => {
                    push(Some(n.id), format!("{label}: weight {name} has a negative variance"))
                }
                Some(_) => {}
            }
        }
    }
    diags
}
