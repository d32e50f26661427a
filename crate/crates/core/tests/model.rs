#[path = "support/dense.rs"]
mod dense;

use dense::dense_predict;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reviewgraph_core::graph::{AblationMode, DebateGraph};
use reviewgraph_core::hgt::{
    gradcheck_config, init_params, model_grad_check, predict, AttentionScale, HgtParams, ModelConfig,
};
use reviewgraph_core::numerics::Tensor;
use reviewgraph_core::synthetic::{random_embeddings, random_graph, random_graph_with_nodes};

fn small_config(homogeneous: bool) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_heads: 2,
        num_layers: 2,
        input_dim: 6,
        ffn_hidden: 5,
        homogeneous,
        ..ModelConfig::default()
    }
}

/// Moves priors, rescales and biases off their initial values so the
/// comparison exercises them.
fn jitter(params: &mut HgtParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, name, t) in params.store.iter_mut() {
        if name.contains(".prior.") || name.contains(".rescale.") {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(0.3..1.7));
        } else if name.starts_with("head.b") {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
}

fn setup(seed: u64, mode: AblationMode, scale: AttentionScale) -> (DebateGraph, Tensor, HgtParams) {
    let g = random_graph(seed, 12, mode);
    let cfg = ModelConfig {
        attention_scale: scale,
        ..small_config(mode == AblationMode::Homogeneous)
    };
    let mut p = init_params(&cfg, seed ^ 0x5eed).unwrap();
    jitter(&mut p, seed);
    let emb = random_embeddings(g.num_nodes(), cfg.input_dim, seed + 1);
    (g, emb, p)
}

const MODES: [AblationMode; 6] = [
    AblationMode::Full,
    AblationMode::NoTitle,
    AblationMode::NoEval,
    AblationMode::NoRar,
    AblationMode::NoIrr,
    AblationMode::Homogeneous,
];

#[test]
fn tape_forward_matches_dense_reference() {
    for seed in 0..50u64 {
        let mode = MODES[seed as usize % MODES.len()];
        let scale = if seed % 2 == 0 {
            AttentionScale::SqrtD
        } else {
            AttentionScale::SqrtDh
        };
        let (g, emb, p) = setup(seed, mode, scale);
        let (probs, trace) = predict(&g, &emb, &p).unwrap();
        let want = dense_predict(&g, &emb, &p);

        for (a, b) in probs.iter().zip(&want.probs) {
            assert!((a - b).abs() < 1e-10, "seed {seed} probs {probs:?} vs {:?}", want.probs);
        }
        assert_eq!(trace.layers.len(), want.layers.len());
        for (l, (got, exp)) in trace.layers.iter().zip(&want.layers).enumerate() {
            for (v, row) in exp.iter().enumerate() {
                for (c, x) in row.iter().enumerate() {
                    assert!((got.get(v, c) - x).abs() < 1e-10, "seed {seed} layer {l} node {v}");
                }
            }
        }
        for (l, per_edge) in trace.attention.iter().enumerate() {
            for (e, heads) in per_edge.iter().enumerate() {
                let exp = &want.attention[l][&trace.edges[e]];
                for (a, b) in heads.iter().zip(exp) {
                    assert!((a - b).abs() < 1e-10, "seed {seed} layer {l} edge {e}");
                }
            }
        }
    }
}

#[test]
fn isolated_nodes_keep_their_features() {
    for seed in 0..20u64 {
        let (g, emb, p) = setup(seed, AblationMode::NoRar, AttentionScale::SqrtD);
        let (_, trace) = predict(&g, &emb, &p).unwrap();
        for v in 0..g.num_nodes() {
            if !g.edges().iter().any(|e| e.dst == v) {
                for l in 1..trace.layers.len() {
                    assert_eq!(trace.layers[l].row(v), trace.layers[0].row(v));
                }
            }
        }
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let g = random_graph_with_nodes(seed, 10, AblationMode::Full);
        let cfg = gradcheck_config();
        let mut p = init_params(&cfg, seed).unwrap();
        jitter(&mut p, seed);
        let emb = random_embeddings(g.num_nodes(), cfg.input_dim, seed + 7);
        let report = model_grad_check(&g, &emb, &p, 1e-6, false).unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        assert_eq!(report.checked, p.store.num_scalars());
    }
}

#[test]
fn corrupted_gradients_are_caught() {
    let g = random_graph_with_nodes(3, 10, AblationMode::Full);
    let cfg = gradcheck_config();
    let p = init_params(&cfg, 3).unwrap();
    let emb = random_embeddings(g.num_nodes(), cfg.input_dim, 4);
    let report = model_grad_check(&g, &emb, &p, 1e-6, true).unwrap();
    assert!(report.max_rel_error > 1e-4);
}

#[test]
fn homogeneous_model_has_one_type_and_relation() {
    let p = init_params(&small_config(true), 1).unwrap();
    assert_eq!(p.type_count(), 1);
    assert_eq!(p.relation_count(), 1);
    let full = init_params(&small_config(false), 1).unwrap();
    assert!(full.store.num_scalars() > p.store.num_scalars());
}

fn random_perm(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_sums_to_one_per_target(seed in 0u64..10_000, m in 0usize..6) {
        let (g, emb, p) = setup(seed, MODES[m], AttentionScale::SqrtD);
        let (_, trace) = predict(&g, &emb, &p).unwrap();
        for per_edge in &trace.attention {
            for t in 0..g.num_nodes() {
                for h in 0..p.config.num_heads {
                    let (sum, count) = trace.edges.iter().zip(per_edge)
                        .filter(|((_, dst, _), _)| *dst == t)
                        .fold((0.0, 0), |(s, c), (_, w)| (s + w[h], c + 1));
                    if count > 0 {
                        prop_assert!((sum - 1.0f64).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn prediction_is_invariant_to_node_order(seed in 0u64..10_000, m in 0usize..6) {
        let (g, emb, p) = setup(seed, MODES[m], AttentionScale::SqrtD);
        let n = g.num_nodes();
        let perm = random_perm(seed, n);
        let h = g.permute(&perm).unwrap();
        let mut data = vec![0.0; emb.data.len()];
        for old in 0..n {
            data[perm[old] * emb.cols()..(perm[old] + 1) * emb.cols()].copy_from_slice(emb.row(old));
        }
        let pemb = Tensor::matrix(n, emb.cols(), data).unwrap();
        let (a, _) = predict(&g, &emb, &p).unwrap();
        let (b, _) = predict(&h, &pemb, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_form_a_distribution(seed in 0u64..10_000, m in 0usize..6) {
        let (g, emb, p) = setup(seed, MODES[m], AttentionScale::SqrtDh);
        let (probs, _) = predict(&g, &emb, &p).unwrap();
        prop_assert_eq!(probs.len(), 2);
        prop_assert!(probs.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
