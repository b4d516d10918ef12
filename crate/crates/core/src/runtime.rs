//! Graph execution with liveness-planned buffer reuse, per-pixel argmax and a
//! single-frame timing harness.
//!
//! Dropout and Output nodes never get storage of their own: they alias their
//! input. Every other node writes into a slot. Max-pool nodes additionally
//! produce an index map that stays live until the last unpool linked to it.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{infer_shapes_for, Graph, NodeId, NodeKind, NodeSpec, WeightRole};
use crate::kernels::{self, asymmetric_params, BnParams};
use crate::tensor::{IndexTensor, Shape, Tensor, WeightTensor};
use crate::weights::WeightStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Activation(NodeId),
    Indices(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    F32,
    U32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub kind: SlotKind,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub value: Value,
    pub bytes: usize,
    /// Position of the producing node.
    pub def: usize,
    /// Position of the last reader; the graph length if the value is the
    /// network output.
    pub last_use: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub input: Shape,
    pub order: Vec<NodeId>,
    pub slots: Vec<Slot>,
    pub assignment: HashMap<Value, usize>,
    pub intervals: Vec<Interval>,
    /// Pools whose index maps are held until a later unpool reads them.
    pub retained: Vec<NodeId>,
    /// `releases[i]`: values whose lifetime ends once node `i` has run.
    pub releases: Vec<Vec<Value>>,
    pub peak_bytes: usize,
    pub no_reuse_bytes: usize,
}

impl ExecutionPlan {
    /// Slot holding `node`'s activation, following aliases.
    pub fn slot_of(&self, node: NodeId) -> Option<usize> {
        self.assignment.get(&Value::Activation(node)).copied()
    }
}

/// Resolves Dropout/Output aliases to the node that owns the storage.
fn canonical_ids(g: &Graph) -> HashMap<NodeId, NodeId> {
    let mut canon = HashMap::with_capacity(g.len());
    for n in g.nodes() {
        let c = match n.kind {
            NodeKind::Dropout { .. } | NodeKind::Output => n
                .inputs
                .first()
                .and_then(|i| canon.get(i).copied())
                .unwrap_or(n.id),
            _ => n.id,
        };
        canon.insert(n.id, c);
    }
    canon
}

/// Liveness intervals over the storage order and greedy first-fit slot
/// assignment. Deterministic for a given graph and input shape.
pub fn plan_buffers(g: &Graph, input: Shape) -> Result<ExecutionPlan> {
    let shapes = infer_shapes_for(g, input)?;
    let canon = canonical_ids(g);
    let end = g.len();

    let mut last_use: HashMap<Value, usize> = HashMap::new();
    let mut defs: Vec<(Value, usize, usize)> = Vec::new();
    for (pos, n) in g.nodes().iter().enumerate() {
        for i in &n.inputs {
            last_use.insert(Value::Activation(canon[i]), pos);
        }
        if let Some(link) = n.index_link {
            last_use.insert(Value::Indices(link), pos);
        }
        if n.kind == NodeKind::Output {
            if let Some(i) = n.inputs.first() {
                last_use.insert(Value::Activation(canon[i]), end);
            }
        }
        if canon[&n.id] == n.id {
            let bytes = shapes[&n.id].bytes();
            defs.push((Value::Activation(n.id), pos, bytes));
            if n.kind == NodeKind::MaxPool {
                defs.push((Value::Indices(n.id), pos, shapes[&n.id].numel() * 4));
            }
        }
    }

    let intervals: Vec<Interval> = defs
        .into_iter()
        .map(|(value, def, bytes)| Interval {
            value,
            bytes,
            def,
            last_use: last_use.get(&value).copied().unwrap_or(def).max(def),
        })
        .collect();

    let mut releases = vec![Vec::new(); end];
    for iv in &intervals {
        if iv.last_use < end {
            releases[iv.last_use].push(iv.value);
        }
    }
    let retained: Vec<NodeId> = intervals
        .iter()
        .filter_map(|iv| match iv.value {
            Value::Indices(p) if iv.last_use > iv.def => Some(p),
            _ => None,
        })
        .collect();

    let mut slots: Vec<Slot> = Vec::new();
    let mut free: Vec<bool> = Vec::new();
    let mut assignment = HashMap::new();
    let mut by_def: Vec<Vec<&Interval>> = vec![Vec::new(); end];
    for iv in &intervals {
        by_def[iv.def].push(iv);
    }
    for pos in 0..end {
        if pos > 0 {
            for v in &releases[pos - 1] {
                free[assignment[v]] = true;
            }
        }
        for iv in &by_def[pos] {
            let kind = match iv.value {
                Value::Activation(_) => SlotKind::F32,
                Value::Indices(_) => SlotKind::U32,
            };
            let candidates = || (0..slots.len()).filter(|&s| free[s] && slots[s].kind == kind);
            let chosen = candidates()
                .find(|&s| slots[s].bytes >= iv.bytes)
                .or_else(|| candidates().next());
            let s = match chosen {
                Some(s) => {
                    slots[s].bytes = slots[s].bytes.max(iv.bytes);
                    s
                }
                None => {
                    slots.push(Slot { kind, bytes: iv.bytes });
                    free.push(true);
                    slots.len() - 1
                }
            };
            free[s] = false;
            assignment.insert(iv.value, s);
        }
    }
    for n in g.nodes() {
        let c = canon[&n.id];
        if c != n.id {
            if let Some(&s) = assignment.get(&Value::Activation(c)) {
                assignment.insert(Value::Activation(n.id), s);
            }
        }
    }

    Ok(ExecutionPlan {
        input,
        order: g.nodes().iter().map(|n| n.id).collect(),
        peak_bytes: slots.iter().map(|s| s.bytes).sum(),
        no_reuse_bytes: intervals.iter().map(|iv| iv.bytes).sum(),
        slots,
        assignment,
        intervals,
        retained,
        releases,
    })
}

fn weight<'a>(n: &NodeSpec, w: &'a WeightStore, role: WeightRole) -> Result<&'a WeightTensor> {
    let name = n.weight_ref(role).ok_or_else(|| Error::Execution {
        node: n.id,
        message: format!("{} has no {} reference", n.name, role.suffix()),
    })?;
    w.get(name).ok_or_else(|| Error::Execution {
        node: n.id,
        message: format!("{}: weight {name} missing", n.name),
    })
}

fn optional_bias<'a>(n: &NodeSpec, w: &'a WeightStore, has_bias: bool) -> Result<Option<&'a [f32]>> {
    if has_bias {
        Ok(Some(weight(n, w, WeightRole::Bias)?.data()))
    } else {
        Ok(None)
    }
}

/// Computes one node into `out` (and `idx_out` for max pools).
fn run_node(
    n: &NodeSpec,
    w: &WeightStore,
    ins: &[&Tensor],
    indices: Option<&IndexTensor>,
    out_shape: Shape,
    out: &mut [f32],
    idx_out: Option<&mut [u32]>,
) -> Result<()> {
    match n.kind {
        NodeKind::Conv(p) => {
            let k = weight(n, w, WeightRole::Weight)?;
            kernels::conv2d_into(ins[0], k, optional_bias(n, w, p.has_bias)?, &p, out)?;
        }
        NodeKind::ConvTranspose(p) => {
            let k = weight(n, w, WeightRole::Weight)?;
            kernels::conv_transpose2d_into(ins[0], k, optional_bias(n, w, p.has_bias)?, &p, out)?;
        }
        NodeKind::AsymConv5 { has_bias, .. } => {
            let w51 = weight(n, w, WeightRole::Weight5x1)?;
            let w15 = weight(n, w, WeightRole::Weight1x5)?;
            let (first, second) = asymmetric_params(w51, w15, has_bias)?;
            let mid = kernels::conv2d(ins[0], w51, None, &first)?;
            kernels::conv2d_into(&mid, w15, optional_bias(n, w, has_bias)?, &second, out)?;
        }
        NodeKind::MaxPool => {
            let idx = idx_out.ok_or_else(|| Error::Execution {
                node: n.id,
                message: "no index buffer for max pool".into(),
            })?;
            kernels::maxpool2x2_into(ins[0], out, idx)?;
        }
        NodeKind::MaxUnpool => {
            let idx = indices.ok_or_else(|| Error::Execution {
                node: n.id,
                message: "unpool index source missing".into(),
            })?;
            kernels::max_unpool2x2_into(ins[0], idx, out_shape, out)?;
        }
        NodeKind::BatchNorm { epsilon } => {
            let p = BnParams {
                gamma: weight(n, w, WeightRole::Gamma)?.data().to_vec(),
                beta: weight(n, w, WeightRole::Beta)?.data().to_vec(),
                running_mean: weight(n, w, WeightRole::RunningMean)?.data().to_vec(),
                running_var: weight(n, w, WeightRole::RunningVar)?.data().to_vec(),
                epsilon,
            };
            kernels::batchnorm_infer_into(ins[0], &p, out)?;
        }
        NodeKind::PRelu => {
            kernels::prelu_into(ins[0], weight(n, w, WeightRole::Slope)?.data(), out)?;
        }
        NodeKind::Add => kernels::add_into(ins[0], ins[1], out)?,
        NodeKind::ConcatChannels => kernels::concat_channels_into(ins[0], ins[1], out)?,
        NodeKind::PadChannels { target } => kernels::pad_channels_into(ins[0], target, out)?,
        NodeKind::Input | NodeKind::Output | NodeKind::Dropout { .. } => {
            unreachable!("{} nodes carry no computation", n.kind.label())
        }
    }
    Ok(())
}

/// Owns scratch buffers between runs. Use one executor per thread; graphs and
/// weights can be shared.
#[derive(Debug, Default)]
pub struct Executor {
    f32_slots: Vec<Vec<f32>>,
    u32_slots: Vec<Vec<u32>>,
    in_use: Vec<bool>,
}

#[cfg(debug_assertions)]
const POISON_F32: f32 = f32::NAN;
#[cfg(debug_assertions)]
const POISON_U32: u32 = u32::MAX;

impl Executor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `g` on `input`. With a plan, intermediate values live in recycled
    /// slot buffers; without one, each value gets a fresh allocation. Both
    /// paths give bitwise-identical results.
    pub fn run(
        &mut self,
        g: &Graph,
        w: &WeightStore,
        input: &Tensor,
        plan: Option<&ExecutionPlan>,
    ) -> Result<Tensor> {
        let shapes = infer_shapes_for(g, input.shape())?;
        if input.shape() != g.input_shape() {
            return Err(Error::Execution {
                node: g.input_node().map_or(0, |n| n.id),
                message: format!(
                    "input shape {} does not match graph input {}",
                    input.shape(),
                    g.input_shape()
                ),
            });
        }
        if let Some(p) = plan {
            if p.input != input.shape() || p.order.len() != g.len() {
                return Err(Error::Execution {
                    node: 0,
                    message: "execution plan was built for a different graph or input".into(),
                });
            }
            self.prepare(p);
        }
        let canon = canonical_ids(g);
        let mut live: HashMap<NodeId, Tensor> = HashMap::new();
        let mut live_idx: HashMap<NodeId, IndexTensor> = HashMap::new();
        let mut output = None;

        for (pos, n) in g.nodes().iter().enumerate() {
            let exec_err = |message: String| Error::Execution { node: n.id, message };
            match n.kind {
                NodeKind::Input => {
                    let mut buf = self.take_f32(plan, n.id, input.shape().numel())?;
                    buf.copy_from_slice(input.data());
                    live.insert(n.id, Tensor::from_vec(input.shape(), buf)?);
                }
                NodeKind::Dropout { .. } => {}
                NodeKind::Output => {
                    let src = canon[&n.inputs[0]];
                    output = Some(
                        live.get(&src)
                            .ok_or_else(|| exec_err("network output is not live".into()))?
                            .clone(),
                    );
                }
                _ => {
                    let out_shape = shapes[&n.id];
                    let mut ins = Vec::with_capacity(n.inputs.len());
                    for i in &n.inputs {
                        ins.push(
                            live.get(&canon[i])
                                .ok_or_else(|| exec_err(format!("input {i} is not live")))?,
                        );
                    }
                    let indices = match n.index_link {
                        Some(l) => Some(
                            live_idx
                                .get(&l)
                                .ok_or_else(|| exec_err("unpool index source missing".into()))?,
                        ),
                        None => None,
                    };
                    let mut buf = self.take_f32(plan, n.id, out_shape.numel())?;
                    let mut idx_buf = if n.kind == NodeKind::MaxPool {
                        Some(self.take_u32(plan, n.id, out_shape.numel())?)
                    } else {
                        None
                    };
                    run_node(n, w, &ins, indices, out_shape, &mut buf, idx_buf.as_deref_mut())
                        .map_err(|e| match e {
                            Error::Execution { .. } => e,
                            other => exec_err(format!("{}: {other}", n.name)),
                        })?;
                    live.insert(n.id, Tensor::from_vec(out_shape, buf)?);
                    if let Some(idx) = idx_buf {
                        live_idx.insert(n.id, IndexTensor::from_vec(out_shape, idx)?);
                    }
                }
            }
            if let Some(p) = plan {
                for v in &p.releases[pos] {
                    match *v {
                        Value::Activation(id) => {
                            if let Some(t) = live.remove(&id) {
                                self.give_f32(p, id, t.into_vec());
                            }
                        }
                        Value::Indices(id) => {
                            if let Some(t) = live_idx.remove(&id) {
                                self.give_u32(p, id, t.into_vec());
                            }
                        }
                    }
                }
            }
        }
        output.ok_or_else(|| Error::Execution {
            node: 0,
            message: "graph has no Output node".into(),
        })
    }

    fn prepare(&mut self, plan: &ExecutionPlan) {
        self.f32_slots.resize_with(plan.slots.len(), Vec::new);
        self.u32_slots.resize_with(plan.slots.len(), Vec::new);
        self.in_use.clear();
        self.in_use.resize(plan.slots.len(), false);
        for (i, s) in plan.slots.iter().enumerate() {
            match s.kind {
                SlotKind::F32 => {
                    let need = s.bytes / 4;
                    let v = &mut self.f32_slots[i];
                    v.reserve(need.saturating_sub(v.len()));
                }
                SlotKind::U32 => {
                    let need = s.bytes / 4;
                    let v = &mut self.u32_slots[i];
                    v.reserve(need.saturating_sub(v.len()));
                }
            }
        }
    }

    fn slot(plan: &ExecutionPlan, value: Value) -> Result<usize> {
        let (Value::Activation(node) | Value::Indices(node)) = value;
        plan.assignment.get(&value).copied().ok_or_else(|| Error::Execution {
            node,
            message: "no slot assigned".into(),
        })
    }

    fn take_f32(&mut self, plan: Option<&ExecutionPlan>, node: NodeId, len: usize) -> Result<Vec<f32>> {
        let Some(p) = plan else {
            return Ok(vec![0.0; len]);
        };
        let s = self.claim(p, Value::Activation(node))?;
        let mut buf = std::mem::take(&mut self.f32_slots[s]);
        buf.resize(len, 0.0);
        Ok(buf)
    }

    fn take_u32(&mut self, plan: Option<&ExecutionPlan>, node: NodeId, len: usize) -> Result<Vec<u32>> {
        let Some(p) = plan else {
            return Ok(vec![0; len]);
        };
        let s = self.claim(p, Value::Indices(node))?;
        let mut buf = std::mem::take(&mut self.u32_slots[s]);
        buf.resize(len, 0);
        Ok(buf)
    }

    fn claim(&mut self, plan: &ExecutionPlan, value: Value) -> Result<usize> {
        let s = Self::slot(plan, value)?;
        if std::mem::replace(&mut self.in_use[s], true) {
            let (Value::Activation(node) | Value::Indices(node)) = value;
            return Err(Error::Execution {
                node,
                message: format!("slot {s} is still held by a live value"),
            });
        }
        Ok(s)
    }

    #[allow(unused_mut)]
    fn give_f32(&mut self, plan: &ExecutionPlan, node: NodeId, mut buf: Vec<f32>) {
        #[cfg(debug_assertions)]
        buf.fill(POISON_F32);
        if let Some(&s) = plan.assignment.get(&Value::Activation(node)) {
            self.f32_slots[s] = buf;
            self.in_use[s] = false;
        }
    }

    #[allow(unused_mut)]
    fn give_u32(&mut self, plan: &ExecutionPlan, node: NodeId, mut buf: Vec<u32>) {
        #[cfg(debug_assertions)]
        buf.fill(POISON_U32);
        if let Some(&s) = plan.assignment.get(&Value::Indices(node)) {
            self.u32_slots[s] = buf;
            self.in_use[s] = false;
        }
    }
}

/// One-shot execution with a fresh [`Executor`].
pub fn execute(
    g: &Graph,
    w: &WeightStore,
    input: &Tensor,
    plan: Option<&ExecutionPlan>,
) -> Result<Tensor> {
    Executor::new().run(g, w, input, plan)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Per-pixel index of the largest logit; ties go to the smallest class.
pub fn argmax_labels(logits: &Tensor) -> LabelMap {
    let s = logits.shape();
    let plane = s.plane();
    let mut best = logits.channel(0).to_vec();
    let mut labels = vec![0u32; plane];
    for c in 1..s.channels {
        for ((b, l), &v) in best.iter_mut().zip(labels.iter_mut()).zip(logits.channel(c)) {
            if v > *b {
                *b = v;
                *l = c as u32;
            }
        }
    }
    LabelMap {
        height: s.height,
        width: s.width,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub input: Shape,
    pub warmup: usize,
    pub iters: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub fps: f64,
}

/// Uniform `[0, 1)` input, the same for a given seed.
pub fn random_input(shape: Shape, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.numel()).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_vec(shape, data)
}

/// Times `iters` planned executions after `warmup` untimed ones. Weight
/// loading and input generation are outside the timed region.
pub fn benchmark(
    g: &Graph,
    w: &WeightStore,
    input: Shape,
    warmup: usize,
    iters: usize,
) -> Result<BenchResult> {
    if iters == 0 {
        return Err(Error::Domain("benchmark needs at least one timed iteration".into()));
    }
    let x = random_input(input, 0)?;
    let plan = plan_buffers(g, input)?;
    let mut exec = Executor::new();
    for _ in 0..warmup {
        exec.run(g, w, &x, Some(&plan))?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        let y = exec.run(g, w, &x, Some(&plan))?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(y);
    }
    let mean_ms = samples.iter().sum::<f64>() / iters as f64;
    let std_ms = if iters > 1 {
        (samples.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / (iters - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BenchResult {
        input,
        warmup,
        iters,
        mean_ms,
        std_ms,
        fps: 1000.0 / mean_ms,
    })
}
