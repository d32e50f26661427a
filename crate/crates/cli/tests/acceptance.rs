//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/support/dense.rs"]
#[allow(dead_code)]
mod dense;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reviewgraph_core::extraction::{build_graph, parse_triple_batch, BuildOptions, DimensionAssignment};
use reviewgraph_core::graph::{validate_graph, AblationMode, DebateGraph, Decision, Dimension, RelationGroup};
use reviewgraph_core::hgt::{argmax, gradcheck_config, init_params, predict, HgtParams, ModelConfig};
use reviewgraph_core::numerics::Tensor;
use reviewgraph_core::synthetic::{generate_papers, random_embeddings, random_graph, SyntheticConfig};
use reviewgraph_core::training::{
    checkpoint_bytes, checkpoint_from_bytes, evaluate, evaluate_samples, train, welch_t_test, Checkpoint, Sample,
    TrainConfig, CHECKPOINT_VERSION,
};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_reviewgraph");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const MODES: [AblationMode; 6] = [
    AblationMode::Full,
    AblationMode::NoTitle,
    AblationMode::NoEval,
    AblationMode::NoRar,
    AblationMode::NoIrr,
    AblationMode::Homogeneous,
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn small_model(homogeneous: bool) -> ModelConfig {
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

/// Moves priors, rescales and head biases away from their initial values.
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

fn random_case(seed: u64, max_nodes: usize) -> (DebateGraph, Tensor, HgtParams) {
    let mode = MODES[seed as usize % MODES.len()];
    let g = random_graph(seed, max_nodes, mode);
    let cfg = small_model(mode == AblationMode::Homogeneous);
    let mut p = init_params(&cfg, seed ^ 0xacce).unwrap();
    jitter(&mut p, seed);
    let emb = random_embeddings(g.num_nodes(), cfg.input_dim, seed.wrapping_add(17));
    (g, emb, p)
}

fn rg(dir: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run {BIN}: {e}"))
}

fn check_status(out: &std::process::Output, what: &str) -> Result<(), String> {
    ensure(out.status.success(), || {
        format!(
            "{what} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn gradient_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let out = rg(
        dir.path(),
        &["--seed", "1", "gradcheck", "--nodes", "10", "--eps", "1e-5"],
    )?;
    let elapsed = started.elapsed();
    check_status(&out, "gradcheck")?;
    let text = String::from_utf8_lossy(&out.stdout);
    let report: Value = serde_json::from_str(text.lines().last().unwrap_or("")).map_err(|e| e.to_string())?;
    let err = report["max_rel_error"].as_f64().ok_or("no max_rel_error")?;
    let checked = report["checked"].as_u64().ok_or("no checked count")? as usize;
    let total = init_params(&gradcheck_config(), 1).unwrap().store.num_scalars();
    ensure(checked == total, || format!("checked {checked} of {total} scalars"))?;
    ensure(err < 1e-4, || format!("max relative error {err:.3e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "max rel error {err:.2e} over {checked} scalars in {elapsed:.2?}"
    ))
}

fn dense_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let (g, emb, p) = random_case(seed, 12);
        ensure(g.num_nodes() <= 12, || format!("seed {seed}: {} nodes", g.num_nodes()))?;
        let (probs, _) = predict(&g, &emb, &p).map_err(|e| e.to_string())?;
        let want = dense::dense_predict(&g, &emb, &p);
        for (a, b) in probs.iter().zip(&want.probs) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("50 graphs, max deviation {worst:.2e}"))
}

fn attention_normalization() -> Outcome {
    let mut worst = 0.0f64;
    let mut isolated = 0;
    for seed in 0..1000u64 {
        let (g, emb, p) = random_case(seed, 6 + (seed as usize % 15));
        let (_, trace) = predict(&g, &emb, &p).map_err(|e| e.to_string())?;
        let n = g.num_nodes();
        for per_edge in &trace.attention {
            let mut sums = vec![vec![0.0; p.config.num_heads]; n];
            let mut incoming = vec![0usize; n];
            for ((_, dst, _), w) in trace.edges.iter().zip(per_edge) {
                incoming[*dst] += 1;
                for (s, x) in sums[*dst].iter_mut().zip(w) {
                    *s += x;
                }
            }
            for (row, &k) in sums.iter().zip(&incoming) {
                if k > 0 {
                    row.iter().for_each(|s| worst = worst.max((s - 1.0f64).abs()));
                }
            }
        }
        for v in 0..n {
            if !g.edges().iter().any(|e| e.dst == v) {
                isolated += 1;
                for l in 1..trace.layers.len() {
                    ensure(trace.layers[l].row(v) == trace.layers[0].row(v), || {
                        format!("seed {seed}: isolated node {v} changed at layer {l}")
                    })?;
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max |sum - 1| = {worst:.3e}"))?;
    ensure(isolated > 0, || "no isolated nodes were exercised".into())?;
    Ok(format!(
        "1000 graphs, max |sum - 1| {worst:.2e}, {isolated} isolated nodes pass through"
    ))
}

fn permutation_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let (g, emb, p) = random_case(seed, 20);
        let n = g.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let h = g.permute(&perm).map_err(|e| e.to_string())?;
        let cols = emb.cols();
        let mut data = vec![0.0; emb.data.len()];
        for (old, &new) in perm.iter().enumerate() {
            data[new * cols..(new + 1) * cols].copy_from_slice(emb.row(old));
        }
        let pemb = Tensor::matrix(n, cols, data).map_err(|e| e.to_string())?;
        let (a, _) = predict(&g, &emb, &p).map_err(|e| e.to_string())?;
        let (b, _) = predict(&h, &pemb, &p).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max change {worst:.3e}"))?;
    Ok(format!("100 graphs, max change {worst:.2e}"))
}

fn synthetic_samples(n: usize, seed: u64, mode: AblationMode) -> Vec<Sample> {
    let cfg = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let embedder = cfg.embedder();
    generate_papers(n, &cfg)
        .iter()
        .map(|p| p.sample(mode, &embedder))
        .collect()
}

fn overfit() -> Outcome {
    let data = synthetic_samples(32, 21, AblationMode::Full);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 100,
        seed: 21,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        seed: 21,
        ..ModelConfig::default()
    };
    let started = Instant::now();
    let out = train(&data, &data, &model, &cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let params = out.checkpoint.hgt_params().map_err(|e| e.to_string())?;
    let acc = evaluate_samples(&data, &params, 0).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 1.0, || format!("train accuracy {acc}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "train accuracy 1.0 after {} epochs in {elapsed:.2?}",
        out.history.len()
    ))
}

fn ablation_signal() -> Outcome {
    let seed = 13;
    let model = ModelConfig {
        seed,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let test_f1 = |mode: AblationMode| -> Result<f64, String> {
        let all = synthetic_samples(300, seed, mode);
        let (tr, rest) = all.split_at(200);
        let (va, te) = rest.split_at(50);
        let model = ModelConfig {
            homogeneous: mode == AblationMode::Homogeneous,
            ..model.clone()
        };
        let out = train(tr, va, &model, &cfg).map_err(|e| e.to_string())?;
        let params = out.checkpoint.hgt_params().map_err(|e| e.to_string())?;
        Ok(evaluate_samples(te, &params, 0).map_err(|e| e.to_string())?.macro_f1)
    };
    let full = test_f1(AblationMode::Full)?;
    let no_rar = test_f1(AblationMode::NoRar)?;
    ensure(full >= 0.95 && no_rar <= 0.65, || {
        format!("full F1 {full:.4}, no_rar F1 {no_rar:.4}")
    })?;
    Ok(format!("full test F1 {full:.4}, no_rar test F1 {no_rar:.4}"))
}

/// Confusion counts by direct enumeration over (pred, gold) pairs.
fn brute_force(preds: &[usize], golds: &[usize]) -> (f64, f64, f64, f64) {
    let n = preds.len();
    let correct = (0..n).filter(|&i| preds[i] == golds[i]).count();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..2 {
        let tp = (0..n).filter(|&i| preds[i] == c && golds[i] == c).count() as f64;
        let pred_c = (0..n).filter(|&i| preds[i] == c).count() as f64;
        let gold_c = (0..n).filter(|&i| golds[i] == c).count() as f64;
        let p = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let r = if gold_c > 0.0 { tp / gold_c } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    (correct as f64 / n as f64, p_sum / 2.0, r_sum / 2.0, f_sum / 2.0)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..200 {
        let n = rng.random_range(1..60);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let golds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let r = evaluate(&preds, &golds).map_err(|e| e.to_string())?;
        let want = brute_force(&preds, &golds);
        let got = (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1);
        ensure(got == want, || format!("set {set}: {got:?} vs {want:?}"))?;
    }
    let accept = Decision::Accept.class_index();
    let reject = Decision::Reject.class_index();
    let golds = [accept, reject].repeat(10);
    let r = evaluate(&[accept; 20], &golds).map_err(|e| e.to_string())?;
    let round4 = |x: f64| (x * 1e4).round() / 1e4;
    ensure(round4(r.accuracy) == 0.5 && round4(r.macro_f1) == 0.3333, || {
        format!("hand case acc {} f1 {}", r.accuracy, r.macro_f1)
    })?;
    Ok(format!(
        "200 sets exact; hand case acc {:.4} macro F1 {:.4}",
        r.accuracy, r.macro_f1
    ))
}

fn listing_fidelity() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let read = |name: &str| std::fs::read(fixtures.join(name)).map_err(|e| format!("{name}: {e}"));
    let rejected = parse_triple_batch(&read("rejected_triples.json")?, "rejected").map_err(|e| e.to_string())?;
    let accepted = parse_triple_batch(&read("accepted_triples.json")?, "accepted").map_err(|e| e.to_string())?;
    let counts = |b: &reviewgraph_core::extraction::TripleBatch| {
        (b.reviewer_author.len(), b.inter_reviewer.len(), b.malformed.len())
    };
    ensure(counts(&rejected) == (7, 8, 0), || {
        format!("rejected parsed {:?}", counts(&rejected))
    })?;
    ensure(counts(&accepted) == (7, 7, 0), || {
        format!("accepted parsed {:?}", counts(&accepted))
    })?;

    let dims: Vec<DimensionAssignment> = rejected
        .reviewer_opinions()
        .into_iter()
        .enumerate()
        .map(|(i, key)| DimensionAssignment {
            key,
            dimension: Dimension::ALL[i % Dimension::ALL.len()],
        })
        .collect();
    let opts = BuildOptions {
        label: Some(Decision::Reject),
        ..BuildOptions::default()
    };
    let g = build_graph("Rejected submission", &rejected, &dims, opts).map_err(|e| e.to_string())?;
    let report = validate_graph(&g);
    ensure(report.ok, || format!("invalid graph: {:?}", report.messages()))?;
    let forward = |group: RelationGroup| {
        g.edges()
            .iter()
            .filter(|e| !e.relation.inverse && e.relation.group() == group)
            .count()
    };
    let (rar, irr) = (
        forward(RelationGroup::ReviewerAuthor),
        forward(RelationGroup::InterReviewer),
    );
    ensure((rar, irr) == (7, 8), || {
        format!("graph has {rar} RAR and {irr} IRR edges")
    })?;
    Ok("listings parse to 7+8 and 7+7; rejected graph valid with 7 RAR + 8 IRR edges".into())
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
    std::fs::write(path, text).map_err(|e| e.to_string())
}

/// simulate through train in a fresh directory; returns graph and history bytes.
fn mock_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let ids = ["a1", "a2", "a3", "a4"];
    let mut manifest = String::new();
    for (i, id) in ids.iter().enumerate() {
        write_file(
            &dir.join(format!("papers/{id}.json")),
            &format!(
                r#"{{"paper_id":"{id}","title":"Sparse routing study {i}","body":"We study routing variant {i} and report results on three benchmarks.","tables":[]}}"#
            ),
        )?;
        let split = if i == 3 { "val" } else { "train" };
        let label = if i % 2 == 0 { "accept" } else { "reject" };
        manifest.push_str(&format!(
            "{{\"paper_id\":\"{id}\",\"split\":\"{split}\",\"label\":\"{label}\",\"paths\":{{\"paper\":\"papers/{id}.json\"}}}}\n"
        ));
    }
    write_file(&dir.join("manifest.jsonl"), &manifest)?;
    write_file(
        &dir.join("cfg.json"),
        r#"{"train":{"max_epochs":2,"early_stop_patience":2}}"#,
    )?;
    for stage in ["simulate", "extract", "classify", "embed", "build-graph", "train"] {
        let out = rg(
            dir,
            &[
                "--config",
                "cfg.json",
                "--seed",
                "7",
                stage,
                "--manifest",
                "manifest.jsonl",
            ],
        )?;
        check_status(&out, stage)?;
    }
    let mut files = Vec::new();
    for id in ids {
        let rel = format!("work/graphs/{id}.json");
        files.push((
            rel.clone(),
            std::fs::read(dir.join(&rel)).map_err(|e| format!("{rel}: {e}"))?,
        ));
    }
    let rel = "work/train/history.jsonl".to_string();
    files.push((
        rel.clone(),
        std::fs::read(dir.join(&rel)).map_err(|e| format!("{rel}: {e}"))?,
    ));
    Ok(files)
}

fn pipeline_determinism() -> Outcome {
    let started = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = mock_pipeline(a.path())?;
    let second = mock_pipeline(b.path())?;
    let elapsed = started.elapsed();
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let epochs = first
        .last()
        .map(|(_, h)| h.split(|&c| c == b'\n').filter(|l| !l.is_empty()).count());
    ensure(epochs == Some(2), || format!("history has {epochs:?} epochs"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "{} files byte-identical across two runs in {elapsed:.2?}",
        first.len()
    ))
}

fn persistence() -> Outcome {
    let model = ModelConfig {
        seed: 5,
        ..ModelConfig::default()
    };
    let mut params = init_params(&model, 5).map_err(|e| e.to_string())?;
    jitter(&mut params, 5);
    let cp = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model_config: model.clone(),
        train_config: TrainConfig::default(),
        epoch: 3,
        best_val_f1: 0.5,
        params: params.store.clone(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("cp.rvgc");
    reviewgraph_core::training::save_checkpoint(&cp, &path).map_err(|e| e.to_string())?;
    let loaded = reviewgraph_core::training::load_checkpoint(&path).map_err(|e| e.to_string())?;
    for ((_, name, a), (_, _, b)) in cp.params.iter().zip(loaded.params.iter()) {
        ensure(a.shape == b.shape, || format!("{name}: shape changed"))?;
        for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
            ensure(((*x as f32) as f64).to_bits() == y.to_bits(), || {
                format!("{name}[{i}]: {x} -> {y}")
            })?;
        }
    }
    let again = checkpoint_from_bytes(&checkpoint_bytes(&loaded)).map_err(|e| e.to_string())?;
    ensure(checkpoint_bytes(&again) == checkpoint_bytes(&loaded), || {
        "second round trip differs".into()
    })?;

    let restored = loaded.hgt_params().map_err(|e| e.to_string())?;
    for seed in 0..20u64 {
        let g = random_graph(seed, 20, AblationMode::Full);
        let emb = random_embeddings(g.num_nodes(), model.input_dim, seed + 100);
        let (a, _) = predict(&g, &emb, &params).map_err(|e| e.to_string())?;
        let (b, _) = predict(&g, &emb, &restored).map_err(|e| e.to_string())?;
        ensure(argmax(&a) == argmax(&b), || {
            format!("graph {seed}: label changed ({a:?} vs {b:?})")
        })?;
    }
    Ok(format!(
        "{} scalars fp32-exact; 20 labels unchanged",
        cp.params.num_scalars()
    ))
}

fn statistics() -> Outcome {
    let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure((r.t + 1.0).abs() < 1e-9 && (r.p - 0.3466).abs() <= 1e-3, || {
        format!("reference case t {} p {}", r.t, r.p)
    })?;
    let sample = [0.61, 0.72, 0.58, 0.69];
    let same = welch_t_test(&sample, &sample).map_err(|e| e.to_string())?;
    ensure(same.p == 1.0, || format!("identical samples give p {}", same.p))?;
    Ok(format!("t {:.4} p {:.4}; identical samples p {}", r.t, r.p, same.p))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("dense-oracle equivalence", dense_oracle),
        ("attention normalization", attention_normalization),
        ("permutation invariance", permutation_invariance),
        ("overfit check", overfit),
        ("ablation signal", ablation_signal),
        ("metrics oracle", metrics_oracle),
        ("reference listing fidelity", listing_fidelity),
        ("pipeline determinism", pipeline_determinism),
        ("persistence", persistence),
        ("statistics", statistics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
