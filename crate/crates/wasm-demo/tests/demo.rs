use reviewgraph_wasm_demo::{ablation_report, build_report, prediction_report};
use serde_json::Value;

const SAMPLE: &str = include_str!("../www/sample_triples.json");

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn sample_listing_builds_a_valid_graph() {
    let r = parse(&build_report(SAMPLE, "Entropy routing for sparse models").unwrap());
    assert_eq!(r["valid"], true, "{}", r["violations"]);
    assert_eq!(r["counts"]["reviewer_author"], 3);
    assert_eq!(r["counts"]["inter_reviewer"], 3);
    assert_eq!(r["counts"]["titles"], 1);
    assert_eq!(r["malformed"], 0);
    assert_eq!(
        r["graph"]["nodes"].as_array().unwrap().len(),
        r["counts"]["nodes"].as_u64().unwrap() as usize
    );
}

#[test]
fn every_ablation_stays_valid() {
    for mode in ["full", "no_title", "no_eval", "no_rar", "no_irr", "homogeneous"] {
        let r = parse(&ablation_report(SAMPLE, "T", mode).unwrap());
        assert_eq!(r["valid"], true, "{mode}: {}", r["violations"]);
    }
    let r = parse(&ablation_report(SAMPLE, "T", "no_rar").unwrap());
    assert_eq!(r["counts"]["reviewer_author"], 0);
    assert_eq!(r["removed_edges"], 6);
    let r = parse(&ablation_report(SAMPLE, "T", "no_title").unwrap());
    assert_eq!(r["counts"]["titles"], 0);
    assert_eq!(r["removed_nodes"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_input_is_reported() {
    assert!(build_report("not json", "T").is_err());
    assert!(ablation_report(SAMPLE, "T", "sideways").is_err());
}

#[test]
fn scoring_is_seeded_and_normalized() {
    let a = prediction_report(SAMPLE, "T", "full", 3).unwrap();
    assert_eq!(a, prediction_report(SAMPLE, "T", "full", 3).unwrap());
    let r = parse(&a);
    let (acc, rej) = (r["accept"].as_f64().unwrap(), r["reject"].as_f64().unwrap());
    assert!((acc + rej - 1.0).abs() < 1e-12);
    assert!(r["val_f1"].as_f64().unwrap() > 0.8, "{}", r["val_f1"]);
    assert!(!r["attention"].as_array().unwrap().is_empty());
}

#[test]
fn attention_entries_match_graph_edges() {
    let graph = parse(&ablation_report(SAMPLE, "T", "no_eval").unwrap())["graph"].clone();
    let r = parse(&prediction_report(SAMPLE, "T", "no_eval", 1).unwrap());
    let key = |v: &Value| {
        (
            v["src"].clone(),
            v["dst"].clone(),
            v["relation"].clone(),
            v["inverse"].clone(),
        )
    };
    let edges: Vec<_> = graph["edges"].as_array().unwrap().iter().map(key).collect();
    let att = r["attention"].as_array().unwrap();
    assert_eq!(att.len(), edges.len());
    assert!(att.iter().all(|a| edges.contains(&key(a))));
}
