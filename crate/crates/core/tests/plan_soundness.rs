mod common;

use common::rng;
use enet::graph::{GraphBuilder, NodeKind, BN_EPSILON};
use enet::kernels::ConvParams;
use enet::runtime::{execute, plan_buffers, random_input, Executor};
use enet::{init_weights, Graph, NodeId, Shape};
use rand::Rng;

/// A random chain over one channel count with residual Adds back to earlier
/// same-shaped nodes, and pool/unpool pairs so index buffers stay live across
/// the chain.
fn random_chain(seed: u64) -> Graph {
    let mut r = rng(seed);
    let c = r.gen_range(1..=4);
    let side = 4 * r.gen_range(1..=3);
    let mut b = GraphBuilder::new(Shape::new(c, side, side).unwrap(), 2).unwrap();
    let mut seen: Vec<NodeId> = vec![b.input()];
    let mut pools: Vec<NodeId> = Vec::new();
    let mut cur = b.input();
    let len = r.gen_range(3..=14);
    for k in 0..len {
        let name = format!("n{k}");
        let s = b.shape(cur);
        let choice = r.gen_range(0..8);
        let next = match choice {
            0 => b.add(name, NodeKind::PRelu, &[cur], None),
            1 => b.add(name, NodeKind::BatchNorm { epsilon: BN_EPSILON }, &[cur], None),
            2 => b.add(name, NodeKind::Conv(ConvParams::square(3, c).with_pad(1, 1).with_bias(r.gen_bool(0.5))), &[cur], None),
            3 => b.add(name, NodeKind::Dropout { rate: 0.1 }, &[cur], None),
            4 if s.height.is_multiple_of(2) && s.width.is_multiple_of(2) && s.height > 1 => {
                let p = b.add(name, NodeKind::MaxPool, &[cur], None).unwrap();
                pools.push(p);
                Ok(p)
            }
            5 if !pools.is_empty() => {
                let p = pools.pop().unwrap();
                b.add(name, NodeKind::MaxUnpool, &[cur], Some(p))
            }
            _ => {
                let same: Vec<NodeId> = seen.iter().copied().filter(|&n| b.shape(n) == s && n != cur).collect();
                if same.is_empty() {
                    b.add(name, NodeKind::PRelu, &[cur], None)
                } else {
                    let other = same[r.gen_range(0..same.len())];
                    b.add(name, NodeKind::Add, &[other, cur], None)
                }
            }
        };
        cur = next.unwrap();
        seen.push(cur);
    }
    while let Some(p) = pools.pop() {
        cur = b.add(format!("close{p}"), NodeKind::MaxUnpool, &[cur], Some(p)).unwrap();
    }
    b.finish(cur).unwrap()
}

#[test]
fn planned_equals_unplanned_on_random_chains() {
    let (mut adds, mut unpools) = (0, 0);
    for seed in 0..50 {
        let g = random_chain(seed);
        adds += g.count_kind(|k| *k == NodeKind::Add);
        unpools += g.count_kind(|k| *k == NodeKind::MaxUnpool);
        let w = init_weights(&g, seed).unwrap();
        let x = random_input(g.input_shape(), seed).unwrap();
        let plan = plan_buffers(&g, g.input_shape()).unwrap();
        let planned = execute(&g, &w, &x, Some(&plan)).unwrap();
        let plain = execute(&g, &w, &x, None).unwrap();
        let a: Vec<u32> = planned.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = plain.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "seed {seed}:\n{g}");
        assert!(plan.peak_bytes <= plan.no_reuse_bytes);

        // one executor reused across calls keeps producing the same bits
        let mut exec = Executor::new();
        for _ in 0..2 {
            let again = exec.run(&g, &w, &x, Some(&plan)).unwrap();
            assert_eq!(again.data(), planned.data());
        }
    }
    assert!(adds >= 20 && unpools >= 10, "generator too tame: {adds} adds, {unpools} unpools");
}

#[test]
fn plan_intervals_never_share_a_live_slot() {
    for seed in 100..150 {
        let g = random_chain(seed);
        let plan = plan_buffers(&g, g.input_shape()).unwrap();
        for (i, a) in plan.intervals.iter().enumerate() {
            for b in &plan.intervals[i + 1..] {
                let overlap = a.def <= b.last_use && b.def <= a.last_use;
                if overlap {
                    assert_ne!(plan.assignment[&a.value], plan.assignment[&b.value], "seed {seed}");
                }
            }
        }
    }
}
