//! Finite-difference checks of the hand-written backward passes.

mod common;

use common::{central_difference, max_relative_error, random_dag, surrogate_gradient_error, TOLERANCE};
use placelab::embedding::{embedding_gradients, message_pass, EmbeddingParams, FeatureEncoder, NodeFeatures};
use placelab::linalg::{dot, ParamSet};
use placelab::Placement;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn embedding_gradient_matches_finite_difference() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..9);
        let g = random_dag(n, &mut rng);
        let devices = rng.random_range(1..4);
        let placement = Placement {
            assignment: (0..n).map(|_| rng.random_range(0..devices)).collect(),
        };
        let placed: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let features = FeatureEncoder::new(&g, devices).encode(&placement, Some(placelab::NodeId(0)), &placed);
        let dim = 5;
        let rounds = (seed % 3) as usize;
        let params = EmbeddingParams::init(NodeFeatures::width(devices), dim, rounds, &mut rng);
        let up_node: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up_global: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss = |p: &EmbeddingParams| {
            let out = message_pass(&g, &features, p).unwrap();
            dot(&out.per_node, &up_node) + dot(&out.global_summary, &up_global)
        };
        let analytic = embedding_gradients(&g, &features, &params, &up_node, &up_global).unwrap().flat();
        let numeric = central_difference(&params, loss);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= TOLERANCE, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn surrogate_gradient_matches_finite_difference() {
    for seed in 0..10u64 {
        let err = surrogate_gradient_error(seed);
        assert!(err <= TOLERANCE, "seed {seed}: relative error {err:e}");
    }
}
