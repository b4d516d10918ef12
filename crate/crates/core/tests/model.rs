//! Cross-module properties of the ENet graph, the cost model and the weight
//! initializer.

use enet::analyzer::{class_weight, count_flops, count_params, model_size_fp16, FlopConvention};
use enet::graph::{build_enet, infer_shapes, init_weights, module_names, NodeKind};
use enet::kernels::ConvParams;
use enet::passes::fuse;
use enet::{Graph, Shape};
use proptest::prelude::*;

fn node_shape(g: &Graph, name: &str) -> Shape {
    let shapes = infer_shapes(g).unwrap();
    let n = g.nodes().iter().find(|n| n.name == name).unwrap_or_else(|| panic!("no node {name}"));
    shapes[&n.id]
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn encoder_and_output_shapes(c in 2usize..30, h8 in 1usize..12, w8 in 1usize..12) {
        let (h, w) = (8 * h8, 8 * w8);
        let g = build_enet(c, h, w).unwrap();
        prop_assert_eq!(node_shape(&g, "bottleneck3.8.prelu"), Shape::new(128, h / 8, w / 8).unwrap());
        prop_assert_eq!(node_shape(&g, "fullconv"), Shape::new(c, h, w).unwrap());
    }

    #[test]
    fn params_independent_of_resolution(h8 in 1usize..10, w8 in 1usize..10) {
        let a = count_params(&build_enet(19, 8 * h8, 8 * w8).unwrap()).unwrap();
        let b = count_params(&build_enet(19, 64, 64).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fma2_is_twice_mac(h8 in 1usize..10, w8 in 1usize..10, c in 2usize..25) {
        let g = build_enet(c, 8 * h8, 8 * w8).unwrap();
        let s = g.input_shape();
        let f = count_flops(&g, s, FlopConvention::Fma2).unwrap();
        let m = count_flops(&g, s, FlopConvention::Mac).unwrap();
        prop_assert_eq!(f.total_flops, 2 * m.total_flops);
        prop_assert_eq!(f.total_macs, m.total_macs);
    }

    #[test]
    fn class_weight_strictly_decreasing(p in 0.0f64..0.999, dp in 1e-6f64..1e-3, c in 1.001f64..3.0) {
        let q = (p + dp).min(1.0);
        let (a, b) = (class_weight(p, c).unwrap(), class_weight(q, c).unwrap());
        prop_assert!(b < a);
        prop_assert!(a > 1.0 / (c + 1.0).ln() && a <= 1.0 / c.ln());
    }
}

#[test]
fn macs_scale_with_resolution() {
    let g1 = build_enet(19, 64, 64).unwrap();
    let g4 = build_enet(19, 128, 128).unwrap();
    let m1 = count_flops(&g1, g1.input_shape(), FlopConvention::Mac).unwrap().total_macs;
    let m4 = count_flops(&g4, g4.input_shape(), FlopConvention::Mac).unwrap().total_macs;
    // every counted op is per-pixel, so four times the pixels is four times the work
    assert_eq!(m4, 4 * m1);
}

#[test]
fn init_weights_matches_param_count() {
    for c in [2, 12, 19] {
        let g = build_enet(c, 32, 32).unwrap();
        let w = init_weights(&g, 1).unwrap();
        assert_eq!(w.total_elements() as u64, count_params(&g).unwrap());
        assert_eq!(model_size_fp16(&g).unwrap().payload_bytes, 2 * count_params(&g).unwrap());
    }
}

#[test]
fn fusion_never_adds_macs() {
    let g = build_enet(19, 64, 64).unwrap();
    let w = init_weights(&g, 2).unwrap();
    let (f, _, _) = fuse(&g, &w).unwrap();
    let before = count_flops(&g, g.input_shape(), FlopConvention::Mac).unwrap().total_macs;
    let after = count_flops(&f, f.input_shape(), FlopConvention::Mac).unwrap().total_macs;
    assert!(after <= before, "{after} > {before}");
    assert!(f.len() < g.len());
}

#[test]
fn stages_two_and_three_dominate() {
    let g = build_enet(19, 360, 640).unwrap();
    let r = count_flops(&g, g.input_shape(), FlopConvention::Fma2).unwrap();
    let by = r.macs_by_stage();
    let share = (by[&2] + by[&3]) as f64 / r.total_macs as f64;
    assert!(share >= 0.60, "stages 2–3 hold {:.1}% of macs", 100.0 * share);
    assert_eq!(by.values().sum::<u64>(), r.total_macs);
}

#[test]
fn graph_structure() {
    let g = build_enet(19, 64, 64).unwrap();
    // topological storage order
    for (pos, n) in g.nodes().iter().enumerate() {
        for i in &n.inputs {
            assert!(g.position(*i).unwrap() < pos, "{} reads a later node", n.name);
        }
    }
    // unpools read pools that halved exactly their output size
    let shapes = infer_shapes(&g).unwrap();
    let mut links = Vec::new();
    for n in g.nodes().iter().filter(|n| n.kind == NodeKind::MaxUnpool) {
        let pool = g.node(n.index_link.unwrap()).unwrap();
        assert_eq!(pool.kind, NodeKind::MaxPool);
        let (p, u) = (shapes[&pool.id], shapes[&n.id]);
        assert_eq!((2 * p.height, 2 * p.width), (u.height, u.width));
        links.push((n.name.clone(), pool.name.clone()));
    }
    assert_eq!(
        links,
        vec![
            ("bottleneck4.0.unpool".to_string(), "bottleneck2.0.pool".to_string()),
            ("bottleneck5.0.unpool".to_string(), "bottleneck1.0.pool".to_string()),
        ]
    );
    // dilation rates in module order
    let rates: Vec<usize> = g
        .nodes()
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Conv(ConvParams { dilation, .. }) if dilation > 1 => Some(dilation),
            _ => None,
        })
        .collect();
    assert_eq!(rates, vec![2, 4, 8, 16, 2, 4, 8, 16]);
    assert!(build_enet(19, 64, 64).unwrap().structurally_eq(&g));
    assert_eq!(module_names(&g).len(), 29);
}
