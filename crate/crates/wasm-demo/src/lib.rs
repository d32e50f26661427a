//! Browser demo: build a debate graph from extractor-style triple listings,
//! ablate it, and score it with a small model trained in-page on synthetic
//! rule data. Every entry point takes and returns JSON strings.

use reviewgraph_core::extraction::{build_graph, parse_triple_batch, BuildOptions, DimensionAssignment};
use reviewgraph_core::graph::{
    apply_ablation, validate_graph, AblationMode, DebateGraph, Decision, Dimension, NodeType, RelationGroup,
};
use reviewgraph_core::hgt::{predict, ModelConfig};
use reviewgraph_core::synthetic::{generate_papers, SyntheticConfig};
use reviewgraph_core::training::{evaluate_samples, train, Sample, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const EMBED_DIM: usize = 16;

#[derive(Serialize)]
struct Counts {
    nodes: usize,
    edges: usize,
    reviewer_author: usize,
    inter_reviewer: usize,
    titles: usize,
    dimensions: usize,
}

fn parse_mode(mode: &str) -> Result<AblationMode, String> {
    AblationMode::parse(mode).ok_or_else(|| format!("unknown ablation mode {mode:?}"))
}

/// Parses the listing and assigns dimensions to reviewer opinions in turn.
fn full_graph(triples_json: &str, title: &str) -> Result<(DebateGraph, usize), String> {
    let batch = parse_triple_batch(triples_json.as_bytes(), "demo").map_err(|e| e.to_string())?;
    let dims: Vec<DimensionAssignment> = batch
        .reviewer_opinions()
        .into_iter()
        .enumerate()
        .map(|(i, key)| DimensionAssignment {
            key,
            dimension: Dimension::ALL[i % Dimension::ALL.len()],
        })
        .collect();
    let g = build_graph(title, &batch, &dims, BuildOptions::default()).map_err(|e| e.to_string())?;
    Ok((g, batch.malformed.len()))
}

fn forward_edges(g: &DebateGraph, group: RelationGroup) -> usize {
    g.edges()
        .iter()
        .filter(|e| !e.relation.inverse && e.relation.group() == group)
        .count()
}

fn describe(g: &DebateGraph, malformed: usize) -> Result<Value, String> {
    let report = validate_graph(g);
    let counts = Counts {
        nodes: g.num_nodes(),
        edges: g.edges().len(),
        reviewer_author: forward_edges(g, RelationGroup::ReviewerAuthor),
        inter_reviewer: forward_edges(g, RelationGroup::InterReviewer),
        titles: g.nodes_of_type(NodeType::Title).len(),
        dimensions: g.nodes_of_type(NodeType::EvaluationDimension).len(),
    };
    let graph: Value = serde_json::from_str(&g.to_json()).map_err(|e| e.to_string())?;
    Ok(json!({
        "graph": graph,
        "valid": report.ok,
        "violations": report.messages(),
        "counts": counts,
        "malformed": malformed,
    }))
}

/// Graph, validation report and counts for a triple listing.
pub fn build_report(triples_json: &str, title: &str) -> Result<String, String> {
    let (g, malformed) = full_graph(triples_json, title)?;
    Ok(describe(&g, malformed)?.to_string())
}

/// Same report after applying an ablation mode, plus the nodes removed.
pub fn ablation_report(triples_json: &str, title: &str, mode: &str) -> Result<String, String> {
    let (g, malformed) = full_graph(triples_json, title)?;
    let ablated = apply_ablation(&g, parse_mode(mode)?).map_err(|e| e.to_string())?;
    let mut out = describe(&ablated.graph, malformed)?;
    let removed: Vec<usize> = (0..g.num_nodes()).filter(|&i| ablated.id_map[i].is_none()).collect();
    out["removed_nodes"] = json!(removed);
    out["removed_edges"] = json!(g.edges().len() - ablated.graph.edges().len());
    Ok(out.to_string())
}

fn demo_model(seed: u64, homogeneous: bool) -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_heads: 2,
        num_layers: 2,
        input_dim: EMBED_DIM,
        ffn_hidden: 16,
        homogeneous,
        seed,
        ..ModelConfig::default()
    }
}

/// Trains on seeded synthetic data where the label is the majority of
/// accept vs reject reviewer-author edges, then scores the listing. Returns
/// class probabilities and last-layer attention averaged over heads.
pub fn prediction_report(triples_json: &str, title: &str, mode: &str, seed: u64) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    let syn = SyntheticConfig {
        seed,
        embed_dim: EMBED_DIM,
        ..SyntheticConfig::default()
    };
    let embedder = syn.embedder();
    let samples: Vec<Sample> = generate_papers(96, &syn)
        .iter()
        .map(|p| p.sample(mode, &embedder))
        .collect();
    let (tr, va) = samples.split_at(64);
    let model = demo_model(seed, mode == AblationMode::Homogeneous);
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 16,
        max_epochs: 40,
        early_stop_patience: 6,
        seed,
        jobs: 1,
        ..TrainConfig::default()
    };
    let outcome = train(tr, va, &model, &cfg).map_err(|e| e.to_string())?;
    let params = outcome.checkpoint.hgt_params().map_err(|e| e.to_string())?;
    let val = evaluate_samples(va, &params, 1).map_err(|e| e.to_string())?;

    let (g, _) = full_graph(triples_json, title)?;
    let g = apply_ablation(&g, mode).map_err(|e| e.to_string())?.graph;
    let emb = embedder.embed_graph(&g);
    let (probs, trace) = predict(&g, &emb, &params).map_err(|e| e.to_string())?;
    let attention: Vec<Value> = match trace.attention.last() {
        Some(per_edge) => trace
            .edges
            .iter()
            .zip(per_edge)
            .map(|((src, dst, rel), w)| {
                json!({
                    "src": src,
                    "dst": dst,
                    "relation": rel.kind.as_str(),
                    "inverse": rel.inverse,
                    "weight": w.iter().sum::<f64>() / w.len() as f64,
                })
            })
            .collect(),
        None => Vec::new(),
    };
    let decision = if probs[Decision::Accept.class_index()] >= probs[Decision::Reject.class_index()] {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(json!({
        "accept": probs[Decision::Accept.class_index()],
        "reject": probs[Decision::Reject.class_index()],
        "decision": decision,
        "attention": attention,
        "epochs": outcome.history.len(),
        "val_f1": val.macro_f1,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn build(triples_json: &str, title: &str) -> Result<String, JsError> {
    build_report(triples_json, title).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ablate(triples_json: &str, title: &str, mode: &str) -> Result<String, JsError> {
    ablation_report(triples_json, title, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score(triples_json: &str, title: &str, mode: &str, seed: u32) -> Result<String, JsError> {
    prediction_report(triples_json, title, mode, u64::from(seed)).map_err(|e| JsError::new(&e))
}
