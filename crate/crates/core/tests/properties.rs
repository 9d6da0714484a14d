//! Randomized law checks for graphs, traversals, the simulator, generators
//! and the policy head.

use std::collections::VecDeque;

use placelab::generators::{gen_random_dag, generate, Family, FamilySpec};
use placelab::graph::{from_json, graph_stats, load_graph, save_graph, sources, to_json, validate};
use placelab::linalg::ParamSet;
use placelab::policy::{policy_forward, PolicyParams};
use placelab::simulator::{simulate, Simulator};
use placelab::traversal::{topo_order, traverse};
use placelab::{ClusterSpec, ComputationGraph, GraphBuilder, NodeId, Placement, TraversalKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dag() -> impl Strategy<Value = ComputationGraph> {
    (1usize..60, 0.0f64..0.3, any::<u64>()).prop_map(|(n, p, seed)| gen_random_dag(n, p, seed).unwrap())
}

fn dag_with_placement(max_devices: usize) -> impl Strategy<Value = (ComputationGraph, usize, Placement)> {
    (dag(), 1..=max_devices, any::<u64>()).prop_map(|(g, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assignment = (0..g.len()).map(|_| rng.random_range(0..d)).collect();
        (g, d, Placement { assignment })
    })
}

fn cluster(devices: usize, bandwidth: f64) -> ClusterSpec {
    ClusterSpec::homogeneous(devices, u64::MAX / 4, bandwidth, 1e-5)
}

fn positions(order: &[NodeId], n: usize) -> Vec<usize> {
    let mut pos = vec![usize::MAX; n];
    for (i, v) in order.iter().enumerate() {
        pos[v.0] = i;
    }
    pos
}

/// Directed hop distance from the nearest source.
fn source_distance(g: &ComputationGraph) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.len()];
    let mut queue = VecDeque::new();
    for s in sources(g) {
        dist[s.0] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &w in g.succs(v) {
            if dist[w.0] == usize::MAX {
                dist[w.0] = dist[v.0] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Random rooted tree built twice: once with ascending names and once with
/// every name comparison flipped, which mirrors each child list.
fn tree_pair(parents: &[usize]) -> (ComputationGraph, ComputationGraph) {
    let n = parents.len() + 1;
    let build = |name: &dyn Fn(usize) -> String| {
        let mut b = GraphBuilder::new();
        let ids: Vec<_> = (0..n).map(|i| b.add_node(name(i), 100, 10, 10)).collect();
        for (c, &p) in parents.iter().enumerate() {
            b.add_edge(ids[p % (c + 1)], ids[c + 1]);
        }
        b.build().unwrap()
    };
    (build(&|i| format!("t{i:04}")), build(&|i| format!("t{:04}", 9999 - i)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_dags_validate_and_sort(g in dag()) {
        prop_assert!(validate(&g).is_empty());
        prop_assert_eq!(topo_order(&g).unwrap().len(), g.len());
    }

    #[test]
    fn degree_times_nodes_is_edges(g in dag()) {
        let s = graph_stats(&g);
        prop_assert!((s.avg_degree * s.num_nodes as f64 - s.num_edges as f64).abs() < 1e-9);
        if g.len() >= 2 {
            prop_assert!(s.diameter >= 1);
        }
    }

    #[test]
    fn json_round_trip_is_exact(g in dag()) {
        let text = to_json(&g);
        let back = from_json(&text, "round trip").unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(to_json(&back), text);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_graph(&g, &path).unwrap();
        prop_assert_eq!(load_graph(&path).unwrap(), g);
    }

    #[test]
    fn every_order_is_a_permutation(g in dag()) {
        for kind in TraversalKind::ALL {
            let t = traverse(&g, kind).unwrap();
            let mut seen = vec![false; g.len()];
            for v in &t.order {
                prop_assert!(!seen[v.0], "{kind} repeats {}", v.0);
                seen[v.0] = true;
            }
            prop_assert!(seen.iter().all(|&s| s), "{kind} misses a node");
        }
    }

    #[test]
    fn topo_and_reverse_respect_edges(g in dag()) {
        let fwd = positions(&traverse(&g, TraversalKind::Topo).unwrap().order, g.len());
        let rev = positions(&traverse(&g, TraversalKind::ReversedTopo).unwrap().order, g.len());
        for e in g.edges() {
            prop_assert!(fwd[e.src.0] < fwd[e.dst.0]);
            prop_assert!(rev[e.dst.0] < rev[e.src.0]);
        }
    }

    #[test]
    fn dfs_preorder_follows_a_parent(g in dag()) {
        let pos = positions(&traverse(&g, TraversalKind::DfsPreorder).unwrap().order, g.len());
        for v in g.node_ids() {
            let preds = g.preds(v);
            if !preds.is_empty() {
                prop_assert!(preds.iter().any(|p| pos[p.0] < pos[v.0]));
            }
        }
    }

    #[test]
    fn bfs_layers_never_decrease(g in dag()) {
        let dist = source_distance(&g);
        let order = traverse(&g, TraversalKind::Bfs).unwrap().order;
        for w in order.windows(2) {
            prop_assert!(dist[w[0].0] <= dist[w[1].0]);
        }
    }

    #[test]
    fn traversals_repeat_exactly(g in dag()) {
        for kind in TraversalKind::ALL {
            prop_assert_eq!(traverse(&g, kind).unwrap(), traverse(&g, kind).unwrap());
        }
    }

    #[test]
    fn tree_postorder_is_mirrored_preorder_reversed(parents in prop::collection::vec(any::<usize>(), 0..40)) {
        let (tree, mirror) = tree_pair(&parents);
        let post = traverse(&tree, TraversalKind::DfsPostorder).unwrap().order;
        let mut pre = traverse(&mirror, TraversalKind::DfsPreorder).unwrap().order;
        pre.reverse();
        prop_assert_eq!(post, pre);
    }

    #[test]
    fn single_device_makespan_is_serial_sum(g in dag(), devices in 1usize..4, dev in 0usize..4) {
        let c = cluster(devices, 1e9);
        let p = Placement::single_device(g.len(), dev % devices);
        let r = simulate(&g, &p, &c).unwrap();
        prop_assert_eq!(r.makespan_sec, g.total_compute());
    }

    #[test]
    fn makespan_respects_lower_bounds((g, d, p) in dag_with_placement(4), bw in 1e6f64..1e10) {
        let r = simulate(&g, &p, &cluster(d, bw)).unwrap();
        let cp = g.critical_path().unwrap();
        let longest = g.nodes().iter().map(|n| n.compute_time()).fold(0.0, f64::max);
        prop_assert!(r.makespan_sec >= cp, "{} < {}", r.makespan_sec, cp);
        prop_assert!(r.makespan_sec >= longest);
        let busy: f64 = r.per_device_busy_sec.iter().sum();
        prop_assert!((busy - g.total_compute()).abs() <= 1e-9 * g.total_compute());
    }

    #[test]
    fn device_relabel_leaves_makespan((g, d, p) in dag_with_placement(4), shift in 1usize..4) {
        let c = cluster(d, 1e8);
        let q = Placement { assignment: p.assignment.iter().map(|&x| (x + shift) % d).collect() };
        let (a, b) = (simulate(&g, &p, &c).unwrap(), simulate(&g, &q, &c).unwrap());
        prop_assert_eq!(a.makespan_sec, b.makespan_sec);
        prop_assert_eq!(a.cross_device_bytes, b.cross_device_bytes);
        for dev in 0..d {
            prop_assert_eq!(a.per_device_busy_sec[dev], b.per_device_busy_sec[(dev + shift) % d]);
        }
    }

    #[test]
    fn simulation_is_deterministic((g, d, p) in dag_with_placement(4)) {
        let c = cluster(d, 1e8);
        prop_assert_eq!(simulate(&g, &p, &c).unwrap(), simulate(&g, &p, &c).unwrap());
    }

    /// With one node per device no two nodes compete for a device, so start
    /// times are max-plus functions of transfer times and cannot rise when
    /// bandwidth grows.
    #[test]
    fn bandwidth_monotone_without_contention(g in dag(), bw in 1e6f64..1e10, k in 1.0f64..100.0) {
        let n = g.len();
        let p = Placement { assignment: (0..n).collect() };
        let sim = Simulator::new(&g).unwrap();
        let slow = sim.makespan(&p, &cluster(n, bw));
        let fast = sim.makespan(&p, &cluster(n, bw * k));
        prop_assert!(fast <= slow, "{fast} > {slow}");
    }

    #[test]
    fn generated_families_are_valid_and_seeded(
        family in prop::sample::select(Family::ALL.to_vec()),
        nodes in 8usize..120,
        seed in any::<u64>(),
    ) {
        let spec = FamilySpec::new(family, nodes, seed);
        let g = generate(&spec).unwrap();
        prop_assert!(validate(&g).is_empty());
        prop_assert_eq!(&generate(&spec).unwrap(), &g);
        let mut names: Vec<_> = g.nodes().iter().map(|n| n.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        prop_assert_eq!(names.len(), g.len());
    }

    #[test]
    fn policy_output_is_a_distribution(
        seed in any::<u64>(),
        scale in prop::sample::select(vec![0.0, 1.0, 10.0, 1e3, 1e6]),
        devices in 1usize..9,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let mut params = PolicyParams::init(dim, 8, devices, &mut rng);
        params.scale(scale);
        let node: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let global: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = policy_forward(&params, &node, &global).unwrap();
        prop_assert_eq!(p.len(), devices);
        prop_assert!(p.iter().all(|&x| x > 0.0 && x.ln().is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

/// Ready-list scheduling is not monotone in link speed under contention: a
/// faster transfer lets a higher-priority node grab device 0 first and delays
/// a long successor of the other ready node.
#[test]
fn faster_link_can_delay_a_ready_list_schedule() {
    let mut b = GraphBuilder::new();
    let a = b.add_node("a", 1_000_000, 1, 1);
    let x = b.add_node("b", 500_000, 800, 1);
    let c = b.add_node("c", 2_000_000, 1, 1);
    let d = b.add_node("d", 1_000_000, 1, 1);
    let e = b.add_node("e", 5_000_000, 1, 1);
    b.add_edge(x, c).add_edge(d, e).add_edge(a, c).add_edge(a, e);
    let g = b.build().unwrap();
    let p = Placement {
        assignment: vec![0, 1, 0, 0, 1],
    };
    let slow = simulate(&g, &p, &ClusterSpec::homogeneous(2, 1 << 20, 1000.0, 0.0)).unwrap();
    let fast = simulate(&g, &p, &ClusterSpec::homogeneous(2, 1 << 20, 2000.0, 0.0)).unwrap();
    // slow: a 0-1, d 1-2, c 2-4, e 2.001-7.001
    // fast: a 0-1, c 1-3, d 3-4, e 4.0005-9.0005
    assert_eq!(slow.makespan_sec, 7.001);
    assert_eq!(fast.makespan_sec, 9.0005);
}
