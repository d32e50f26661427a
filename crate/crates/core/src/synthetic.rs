//! Seeded synthetic debates, hashed text embeddings and random graphs.
//!
//! Synthetic papers are produced as triple batches plus dimension
//! assignments, so they run through the same `build_graph` path as
//! extracted data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::extraction::{
    build_graph, BuildOptions, DimensionAssignment, OpinionKey, OpinionTriplet, TripleBatch, TripleGroup,
};
use crate::graph::{AblationMode, DebateGraph, Decision, Dimension, RelationKind, Speaker};
use crate::numerics::Tensor;
use crate::training::Sample;

/// Deterministic unit vector for `text`: the SHA-256 of `seed || text`
/// seeds a uniform draw in `[-1, 1]^dim`, which is then normalized.
pub fn hash_unit_vector(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Text embedder used for synthetic corpora: a hashed unit vector plus a
/// fixed direction shared by every text.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    common: Vec<f64>,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64, common_weight: f64) -> Self {
        let common = hash_unit_vector("\u{0}common", dim, seed)
            .into_iter()
            .map(|x| x * common_weight)
            .collect();
        HashEmbedder { dim, seed, common }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        hash_unit_vector(text, self.dim, self.seed)
            .into_iter()
            .zip(&self.common)
            .map(|(x, c)| x + c)
            .collect()
    }

    /// `N x dim` matrix in node id order.
    pub fn embed_graph(&self, g: &DebateGraph) -> Tensor {
        let data = g.nodes().iter().flat_map(|n| self.embed(&n.text)).collect();
        Tensor::matrix(g.num_nodes(), self.dim, data).expect("sizes agree")
    }
}

/// Rule that derives a paper's decision from its reviewer-author labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Accept iff `Accept` edges outnumber `Reject` edges.
    RarMajority,
    /// Independent fair coin.
    Coin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub min_reviewer_opinions: usize,
    pub max_reviewer_opinions: usize,
    /// Candidate counts of reviewer-author triples per paper.
    pub rar_counts: Vec<usize>,
    /// Relation labels drawn uniformly for reviewer-author triples.
    pub rar_labels: Vec<RelationKind>,
    /// Inter-reviewer triples added beyond those needed for coverage.
    pub max_extra_irr: usize,
    pub label_rule: LabelRule,
    pub embed_dim: usize,
    pub common_weight: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            min_reviewer_opinions: 3,
            max_reviewer_opinions: 7,
            rar_counts: vec![1, 3, 5],
            rar_labels: vec![RelationKind::Accept, RelationKind::Reject],
            max_extra_irr: 2,
            label_rule: LabelRule::RarMajority,
            embed_dim: 64,
            common_weight: 2.0,
        }
    }
}

impl SyntheticConfig {
    pub fn embedder(&self) -> HashEmbedder {
        HashEmbedder::new(self.embed_dim, self.seed, self.common_weight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPaper {
    pub paper_id: String,
    pub title: String,
    pub label: Decision,
    pub batch: TripleBatch,
    pub dims: Vec<DimensionAssignment>,
}

impl SyntheticPaper {
    pub fn graph(&self, ablation: AblationMode) -> DebateGraph {
        build_graph(
            &self.title,
            &self.batch,
            &self.dims,
            BuildOptions {
                inverse_edges: true,
                label: Some(self.label),
                ablation,
            },
        )
        .expect("synthetic papers are well formed")
    }

    pub fn sample(&self, ablation: AblationMode, embedder: &HashEmbedder) -> Sample {
        let graph = self.graph(ablation);
        let embeddings = embedder.embed_graph(&graph);
        Sample { graph, embeddings }
    }
}

const WORDS: [&str; 24] = [
    "method", "baseline", "ablation", "dataset", "proof", "section", "figure", "claim", "metric", "encoder", "bound",
    "loss", "sample", "variance", "prior", "kernel", "table", "setting", "result", "theory", "module", "query",
    "graph", "token",
];

fn sentence(rng: &mut ChaCha8Rng, tag: &str) -> String {
    let n = rng.random_range(5..9);
    let body: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    format!("{tag} {}.", body.join(" "))
}

/// Capitalized label as an extractor would emit it, e.g. `Accept`.
pub fn label_text(kind: RelationKind) -> String {
    let s = kind.as_str();
    s[..1].to_uppercase() + &s[1..]
}

fn triple(a: &OpinionKey, b: &OpinionKey, kind: RelationKind, group: TripleGroup) -> OpinionTriplet {
    OpinionTriplet {
        speaker_a: a.speaker,
        text_a: a.text.clone(),
        speaker_b: b.speaker,
        text_b: b.text.clone(),
        relation_label: label_text(kind),
        group,
    }
}

/// Generates one debate with `reviewers` reviewer opinions and `rar`
/// reviewer-author triples (`rar <= reviewers`, `reviewers >= 1`).
fn debate(rng: &mut ChaCha8Rng, id: &str, reviewers: usize, rar: usize, cfg: &SyntheticConfig) -> SyntheticPaper {
    let offset = rng.random_range(0..3);
    let opinions: Vec<OpinionKey> = (0..reviewers)
        .map(|i| {
            let speaker = Speaker::REVIEWERS[(i + offset) % 3];
            OpinionKey::new(speaker, &sentence(rng, &format!("{id} r{i}")))
        })
        .collect();
    let dims = opinions
        .iter()
        .map(|k| DimensionAssignment {
            key: k.clone(),
            dimension: *Dimension::ALL.choose(rng).expect("non-empty"),
        })
        .collect();

    let mut reviewer_author = Vec::new();
    let (mut accepts, mut rejects) = (0, 0);
    for (i, op) in opinions.iter().take(rar).enumerate() {
        let author = OpinionKey::new(Speaker::Author, &sentence(rng, &format!("{id} a{i}")));
        let kind = *cfg.rar_labels.choose(rng).expect("rar_labels non-empty");
        match kind {
            RelationKind::Accept => accepts += 1,
            RelationKind::Reject => rejects += 1,
            _ => {}
        }
        reviewer_author.push(triple(op, &author, kind, TripleGroup::ReviewerAuthor));
    }

    // Every opinion outside the reviewer-author set is linked to its
    // predecessor, whose speaker always differs.
    let mut pairs: Vec<(usize, usize)> = (rar.max(1)..reviewers).map(|j| (j - 1, j)).collect();
    if reviewers >= 2 {
        for _ in 0..rng.random_range(0..=cfg.max_extra_irr) {
            let a = rng.random_range(0..reviewers);
            let b = rng.random_range(0..reviewers);
            let fresh = !pairs.contains(&(a, b)) && !pairs.contains(&(b, a));
            if opinions[a].speaker != opinions[b].speaker && fresh {
                pairs.push((a, b));
            }
        }
    }
    let inter_reviewer = pairs
        .iter()
        .map(|&(a, b)| {
            let kind = *RelationKind::INTER_REVIEWER.choose(rng).expect("non-empty");
            triple(&opinions[a], &opinions[b], kind, TripleGroup::InterReviewer)
        })
        .collect();

    let label = match cfg.label_rule {
        LabelRule::RarMajority if accepts > rejects => Decision::Accept,
        LabelRule::RarMajority => Decision::Reject,
        LabelRule::Coin if rng.random_bool(0.5) => Decision::Accept,
        LabelRule::Coin => Decision::Reject,
    };
    SyntheticPaper {
        paper_id: id.to_string(),
        title: sentence(rng, &format!("{id} title")),
        label,
        batch: TripleBatch {
            graph_id: id.to_string(),
            reviewer_author,
            inter_reviewer,
            malformed: Vec::new(),
        },
        dims,
    }
}

/// `n` papers named `syn-0000`, `syn-0001`, ...
pub fn generate_papers(n: usize, cfg: &SyntheticConfig) -> Vec<SyntheticPaper> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n)
        .map(|i| {
            let reviewers = rng.random_range(cfg.min_reviewer_opinions.max(1)..=cfg.max_reviewer_opinions);
            let choices: Vec<usize> = cfg.rar_counts.iter().copied().filter(|&k| k <= reviewers).collect();
            let rar = *choices.choose(&mut rng).unwrap_or(&1).min(&reviewers);
            debate(&mut rng, &format!("syn-{i:04}"), reviewers, rar, cfg)
        })
        .collect()
}

/// Random debate graph with at most `max_nodes` nodes (at least 6), every
/// reviewer-author label allowed, labels by coin flip.
pub fn random_graph(seed: u64, max_nodes: usize, ablation: AblationMode) -> DebateGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = max_nodes.saturating_sub(5).max(1);
    let reviewers = rng.random_range(1..=budget);
    let rar = rng.random_range(0..=reviewers.min(budget - reviewers));
    let cfg = SyntheticConfig {
        rar_labels: RelationKind::REVIEWER_AUTHOR.to_vec(),
        max_extra_irr: 3,
        label_rule: LabelRule::Coin,
        ..SyntheticConfig::default()
    };
    let paper = debate(&mut rng, &format!("rand-{seed}"), reviewers, rar, &cfg);
    paper.graph(ablation)
}

/// Random debate graph with exactly `nodes` nodes (at least 7).
pub fn random_graph_with_nodes(seed: u64, nodes: usize, ablation: AblationMode) -> DebateGraph {
    assert!(nodes >= 7, "need room for two opinions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opinions = nodes - 5;
    let reviewers = rng.random_range(opinions.div_ceil(2)..=opinions);
    let cfg = SyntheticConfig {
        rar_labels: RelationKind::REVIEWER_AUTHOR.to_vec(),
        max_extra_irr: 3,
        label_rule: LabelRule::Coin,
        ..SyntheticConfig::default()
    };
    let paper = debate(&mut rng, &format!("rand-{seed}"), reviewers, opinions - reviewers, &cfg);
    paper.graph(ablation)
}

/// Uniform `[-1, 1)` matrix, deterministic in `seed`.
pub fn random_embeddings(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("sizes agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate_graph, NodeType, RelationGroup};

    #[test]
    fn hash_vectors_are_unit_and_stable() {
        let a = hash_unit_vector("abc", 64, 1);
        assert_eq!(a, hash_unit_vector("abc", 64, 1));
        assert_ne!(a, hash_unit_vector("abc", 64, 2));
        let norm: f64 = a.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_shape_and_rule() {
        let papers = generate_papers(60, &SyntheticConfig::default());
        for p in &papers {
            let g = p.graph(AblationMode::Full);
            assert!(validate_graph(&g).ok, "{:?}", validate_graph(&g).messages());
            let rar = g.count_group(RelationGroup::ReviewerAuthor);
            assert!([1, 3, 5].contains(&rar));
            let opinions =
                g.nodes_of_type(NodeType::ReviewerOpinion).len() + g.nodes_of_type(NodeType::AuthorOpinion).len();
            assert!((4..=12).contains(&opinions), "{opinions}");
            let accepts = p
                .batch
                .reviewer_author
                .iter()
                .filter(|t| t.relation_label == "Accept")
                .count();
            assert_eq!(p.label == Decision::Accept, 2 * accepts > rar);
        }
        let accepted = papers.iter().filter(|p| p.label == Decision::Accept).count();
        assert!((15..=45).contains(&accepted));
    }

    #[test]
    fn random_graphs_respect_budget() {
        for seed in 0..200 {
            let g = random_graph(seed, 12, AblationMode::Full);
            assert!(g.num_nodes() <= 12);
            assert!(validate_graph(&g).ok, "{:?}", validate_graph(&g).messages());
        }
        for seed in 0..50 {
            assert_eq!(random_graph_with_nodes(seed, 10, AblationMode::Full).num_nodes(), 10);
        }
    }
}
