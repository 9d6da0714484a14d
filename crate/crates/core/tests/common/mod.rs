//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use placelab::linalg::ParamSet;
use placelab::policy::{AgentParams, Environment, TrainConfig};
use placelab::traversal::{traverse, TraversalKind};
use placelab::{ClusterSpec, ComputationGraph, GraphBuilder, Placement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
// Entries smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn random_dag(n: usize, rng: &mut ChaCha8Rng) -> ComputationGraph {
    let mut b = GraphBuilder::new();
    let ids: Vec<_> = (0..n)
        .map(|i| {
            b.add_node(
                format!("n{i:02}"),
                rng.random_range(100..10_000),
                rng.random_range(1_000..1_000_000),
                rng.random_range(1_000..1_000_000),
            )
        })
        .collect();
    for j in 1..n {
        b.add_edge(ids[rng.random_range(0..j)], ids[j]);
        for i in 0..j {
            if rng.random_bool(0.15) && rng.random_bool(0.5) {
                b.add_edge(ids[i], ids[j]);
            }
        }
    }
    b.build().unwrap()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

pub fn central_difference<P: ParamSet + Clone>(params: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let base = params.flat();
    let mut probe = params.clone();
    (0..base.len())
        .map(|i| {
            let h = 1e-5 * base[i].abs().max(1.0);
            let mut x = base.clone();
            x[i] = base[i] + h;
            probe.set_flat(&x);
            let up = f(&probe);
            x[i] = base[i] - h;
            probe.set_flat(&x);
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between the analytic end-to-end surrogate gradient
/// (policy and embedding) and central differences on one random instance.
pub fn surrogate_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let n = rng.random_range(3..7);
    let g = random_dag(n, &mut rng);
    let devices = rng.random_range(2..4);
    let cluster = ClusterSpec::homogeneous(devices, 1 << 40, 1e8, 1e-5);
    let config = TrainConfig {
        dim: 4,
        hidden: 6,
        ..TrainConfig::default()
    };
    let params = AgentParams::init(devices, &config, &mut rng);
    let env = Environment::new(&g, &cluster, 1.0).unwrap();
    let kind = TraversalKind::ALL[seed as usize % 6];
    let t = traverse(&g, kind).unwrap();
    let start = Placement::single_device(n, 0);
    let traces: Vec<_> = (0..2).map(|_| env.run_episode(&t, &params, &start, &mut rng).unwrap()).collect();
    let adv: Vec<Vec<f64>> = traces
        .iter()
        .map(|tr| tr.steps.iter().map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    let (objective, grad) = env.surrogate_gradient(&params, &traces, &adv).unwrap();
    let direct = env.surrogate_objective(&params, &traces, &adv).unwrap();
    assert!((objective - direct).abs() < 1e-12);
    let numeric = central_difference(&params, |p| env.surrogate_objective(p, &traces, &adv).unwrap());
    max_relative_error(&grad.flat(), &numeric)
}
