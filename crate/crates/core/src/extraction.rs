//! Parsing of LLM relation-extraction and dimension-classification replies,
//! and instantiation of debate graphs from the parsed triples.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    apply_ablation, AblationMode, DebateGraph, Decision, Dimension, Edge, GraphError, Node, NodeType, Relation,
    RelationKind, Speaker,
};

pub const REVIEWER_AUTHOR_KEY: &str = "Reviewer_Author_Relations";
pub const INTER_REVIEWER_KEY: &str = "Inter_Reviewer_Relations";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("malformed triple: {0}")]
    MalformedTriple(String),
    #[error("speaker {speaker} is not allowed in the {group:?} group")]
    WrongGroupSpeaker { speaker: Speaker, group: TripleGroup },
    #[error("unknown relation label {label:?} for the {group:?} group")]
    UnknownRelationLabel { label: String, group: TripleGroup },
    #[error("reply is not JSON: {0}")]
    NotJson(String),
    #[error("missing array key {0:?}")]
    MissingArrayKey(&'static str),
    #[error("{malformed} of {total} triples in {graph_id} are malformed")]
    TooManyMalformed {
        graph_id: String,
        malformed: usize,
        total: usize,
    },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("reviewer opinions without a dimension assignment: {0:?}")]
    MissingDimensionAssignment(Vec<OpinionKey>),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripleGroup {
    ReviewerAuthor,
    InterReviewer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionTriplet {
    pub speaker_a: Speaker,
    pub text_a: String,
    pub speaker_b: Speaker,
    pub text_b: String,
    pub relation_label: String,
    pub group: TripleGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedElement {
    pub group: TripleGroup,
    pub index: usize,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TripleBatch {
    pub graph_id: String,
    pub reviewer_author: Vec<OpinionTriplet>,
    pub inter_reviewer: Vec<OpinionTriplet>,
    /// Elements skipped during parsing.
    #[serde(default)]
    pub malformed: Vec<MalformedElement>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.reviewer_author.len() + self.inter_reviewer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn malformed_ratio(&self) -> f64 {
        let total = self.len() + self.malformed.len();
        if total == 0 {
            0.0
        } else {
            self.malformed.len() as f64 / total as f64
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = &OpinionTriplet> {
        self.reviewer_author.iter().chain(&self.inter_reviewer)
    }

    /// Distinct reviewer opinions in first-appearance order.
    pub fn reviewer_opinions(&self) -> Vec<OpinionKey> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for t in self.triplets() {
            for (speaker, text) in [(t.speaker_a, &t.text_a), (t.speaker_b, &t.text_b)] {
                if speaker.is_reviewer() {
                    let key = OpinionKey::new(speaker, text);
                    if seen.insert(key.clone()) {
                        out.push(key);
                    }
                }
            }
        }
        out
    }

    /// Serializes back to the extraction reply schema.
    pub fn to_reply_json(&self) -> String {
        let render = |t: &OpinionTriplet| {
            format!(
                "({}: '{}', {}: '{}', {})",
                t.speaker_a, t.text_a, t.speaker_b, t.text_b, t.relation_label
            )
        };
        let value = serde_json::json!({
            REVIEWER_AUTHOR_KEY: self.reviewer_author.iter().map(render).collect::<Vec<_>>(),
            INTER_REVIEWER_KEY: self.inter_reviewer.iter().map(render).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&value).expect("json value serializes")
    }
}

/// Node identity of an opinion: speaker plus whitespace-normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpinionKey {
    pub speaker: Speaker,
    pub text: String,
}

impl OpinionKey {
    pub fn new(speaker: Speaker, text: &str) -> Self {
        OpinionKey {
            speaker,
            text: normalize_whitespace(text),
        }
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const QUOTES: &[char] = &['\'', '"', '`', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}'];

fn speaker_anchor() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:\breviewer\s*([0-9]+)|\bauthor)\s*:").expect("valid regex"))
}

fn parse_speaker(caps: &regex::Captures<'_>) -> Result<Speaker, ExtractionError> {
    match caps.get(1) {
        None => Ok(Speaker::Author),
        Some(num) => num
            .as_str()
            .parse::<u32>()
            .ok()
            .and_then(Speaker::reviewer)
            .ok_or_else(|| ExtractionError::MalformedTriple(format!("unknown reviewer {}", num.as_str()))),
    }
}

fn strip_quoted(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix(QUOTES).unwrap_or(s);
    let s = s.strip_suffix(QUOTES).unwrap_or(s);
    normalize_whitespace(s)
}

/// Parses one `(Speaker: 'text', Speaker: 'text', Label)` element.
///
/// Quoting is matched loosely: the element is split on the two speaker
/// anchors and the final comma, so apostrophes and commas inside the quoted
/// sentences are harmless.
pub fn parse_triple_string(s: &str, group: TripleGroup) -> Result<OpinionTriplet, ExtractionError> {
    let malformed = |why: &str| ExtractionError::MalformedTriple(format!("{why}: {s}"));
    let body = s.trim();
    let body = body
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .ok_or_else(|| malformed("expected parenthesized triple"))?;

    let first = speaker_anchor()
        .captures(body)
        .ok_or_else(|| malformed("missing first speaker"))?;
    let first_match = first.get(0).expect("group 0");
    if !body[..first_match.start()].trim().is_empty() {
        return Err(malformed("text before first speaker"));
    }
    let speaker_a = parse_speaker(&first)?;
    let rest = &body[first_match.end()..];

    // The second anchor must follow a comma.
    let second = speaker_anchor()
        .captures_iter(rest)
        .find(|c| rest[..c.get(0).expect("group 0").start()].trim_end().ends_with(','))
        .ok_or_else(|| malformed("missing second speaker"))?;
    let second_match = second.get(0).expect("group 0");
    let speaker_b = parse_speaker(&second)?;
    let text_a_raw = rest[..second_match.start()].trim_end();
    let text_a_raw = text_a_raw.strip_suffix(',').unwrap_or(text_a_raw);

    let tail = &rest[second_match.end()..];
    let comma = tail.rfind(',').ok_or_else(|| malformed("missing relation label"))?;
    let text_b_raw = &tail[..comma];
    let label = strip_quoted(&tail[comma + 1..]);
    let label = label
        .trim_matches(|c: char| c == '[' || c == ']' || c.is_whitespace())
        .to_string();

    let text_a = strip_quoted(text_a_raw);
    let text_b = strip_quoted(text_b_raw);
    if text_a.is_empty() || text_b.is_empty() {
        return Err(malformed("empty argument sentence"));
    }
    if label.is_empty() || label.contains(char::is_whitespace) {
        return Err(malformed("relation label must be a single word"));
    }

    if !speaker_a.is_reviewer() {
        return Err(ExtractionError::WrongGroupSpeaker {
            speaker: speaker_a,
            group,
        });
    }
    match group {
        TripleGroup::ReviewerAuthor if speaker_b != Speaker::Author => {
            return Err(ExtractionError::WrongGroupSpeaker {
                speaker: speaker_b,
                group,
            })
        }
        TripleGroup::InterReviewer if !speaker_b.is_reviewer() => {
            return Err(ExtractionError::WrongGroupSpeaker {
                speaker: speaker_b,
                group,
            })
        }
        _ => {}
    }

    Ok(OpinionTriplet {
        speaker_a,
        text_a,
        speaker_b,
        text_b,
        relation_label: label,
        group,
    })
}

/// Case-insensitive lookup of a raw label within its group's vocabulary.
pub fn canonical_relation(label: &str, group: TripleGroup) -> Result<RelationKind, ExtractionError> {
    let vocabulary: &[RelationKind] = match group {
        TripleGroup::ReviewerAuthor => &RelationKind::REVIEWER_AUTHOR,
        TripleGroup::InterReviewer => &RelationKind::INTER_REVIEWER,
    };
    let wanted = label.trim().to_lowercase();
    vocabulary
        .iter()
        .copied()
        .find(|k| k.as_str() == wanted)
        .ok_or_else(|| ExtractionError::UnknownRelationLabel {
            label: label.to_string(),
            group,
        })
}

/// Parses the two top-level arrays of an extraction reply. Bad elements
/// are skipped and recorded; the batch fails only if more than half of
/// them are malformed.
pub fn parse_triple_batch(json: &[u8], graph_id: &str) -> Result<TripleBatch, ExtractionError> {
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| ExtractionError::NotJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ExtractionError::NotJson("top-level value is not an object".into()))?;

    let mut batch = TripleBatch {
        graph_id: graph_id.to_string(),
        ..TripleBatch::default()
    };
    for (key, group) in [
        (REVIEWER_AUTHOR_KEY, TripleGroup::ReviewerAuthor),
        (INTER_REVIEWER_KEY, TripleGroup::InterReviewer),
    ] {
        let items = obj
            .get(key)
            .and_then(|v| v.as_array())
            .ok_or(ExtractionError::MissingArrayKey(key))?;
        for (index, item) in items.iter().enumerate() {
            let raw = match item.as_str() {
                Some(s) => s.to_string(),
                None => item.to_string(),
            };
            let parsed = item
                .as_str()
                .ok_or_else(|| ExtractionError::MalformedTriple("element is not a string".into()))
                .and_then(|s| parse_triple_string(s, group))
                .and_then(|t| canonical_relation(&t.relation_label, group).map(|_| t));
            match parsed {
                Ok(t) => match group {
                    TripleGroup::ReviewerAuthor => batch.reviewer_author.push(t),
                    TripleGroup::InterReviewer => batch.inter_reviewer.push(t),
                },
                Err(e) => batch.malformed.push(MalformedElement {
                    group,
                    index,
                    raw,
                    reason: e.to_string(),
                }),
            }
        }
    }
    let total = batch.len() + batch.malformed.len();
    if batch.malformed.len() * 2 > total {
        return Err(ExtractionError::TooManyMalformed {
            graph_id: graph_id.to_string(),
            malformed: batch.malformed.len(),
            total,
        });
    }
    Ok(batch)
}

/// Parses a `{"category": "..."}` classification reply.
pub fn parse_dimension_reply(json: &[u8]) -> Result<Dimension, ExtractionError> {
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| ExtractionError::NotJson(e.to_string()))?;
    let category = value
        .get("category")
        .and_then(|c| c.as_str())
        .ok_or_else(|| ExtractionError::NotJson("missing string field \"category\"".into()))?;
    Dimension::from_loose(category).ok_or_else(|| ExtractionError::UnknownCategory(category.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAssignment {
    pub key: OpinionKey,
    pub dimension: Dimension,
}

#[derive(Serialize, Deserialize)]
struct DimensionLine {
    speaker: Speaker,
    text: String,
    category: String,
}

/// Reads the JSON-lines dimension assignment file.
pub fn read_dimension_lines(s: &str) -> Result<Vec<DimensionAssignment>, ExtractionError> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let rec: DimensionLine = serde_json::from_str(line).map_err(|e| ExtractionError::NotJson(e.to_string()))?;
            let dimension =
                Dimension::from_loose(&rec.category).ok_or(ExtractionError::UnknownCategory(rec.category))?;
            Ok(DimensionAssignment {
                key: OpinionKey::new(rec.speaker, &rec.text),
                dimension,
            })
        })
        .collect()
}

pub fn write_dimension_lines(assignments: &[DimensionAssignment]) -> String {
    let mut out = String::new();
    for a in assignments {
        let line = DimensionLine {
            speaker: a.key.speaker,
            text: a.key.text.clone(),
            category: a.dimension.display_name().to_string(),
        };
        out.push_str(&serde_json::to_string(&line).expect("line serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub inverse_edges: bool,
    pub label: Option<Decision>,
    pub ablation: AblationMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            inverse_edges: true,
            label: None,
            ablation: AblationMode::Full,
        }
    }
}

/// Instantiates the debate graph: title, four dimension nodes, one node
/// per distinct opinion, structural edges and one edge per distinct triple.
pub fn build_graph(
    title: &str,
    batch: &TripleBatch,
    dims: &[DimensionAssignment],
    options: BuildOptions,
) -> Result<DebateGraph, ExtractionError> {
    let lookup: HashMap<&OpinionKey, Dimension> = dims.iter().map(|a| (&a.key, a.dimension)).collect();
    let reviewer_keys = batch.reviewer_opinions();
    let orphans: Vec<OpinionKey> = reviewer_keys
        .iter()
        .filter(|k| !lookup.contains_key(k))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(ExtractionError::MissingDimensionAssignment(orphans));
    }
    let title = normalize_whitespace(title);
    if title.is_empty() {
        return Err(ExtractionError::MalformedTriple("empty paper title".into()));
    }

    let mut nodes = vec![Node {
        id: 0,
        node_type: NodeType::Title,
        text: title,
        speaker: None,
        dimension: None,
    }];
    let mut dim_node = BTreeMap::new();
    for d in Dimension::ALL {
        dim_node.insert(d, nodes.len());
        nodes.push(Node {
            id: nodes.len(),
            node_type: NodeType::EvaluationDimension,
            text: d.display_name().to_string(),
            speaker: None,
            dimension: None,
        });
    }

    let mut opinion_node: HashMap<OpinionKey, usize> = HashMap::new();
    for key in &reviewer_keys {
        opinion_node.insert(key.clone(), nodes.len());
        nodes.push(Node {
            id: nodes.len(),
            node_type: NodeType::ReviewerOpinion,
            text: key.text.clone(),
            speaker: Some(key.speaker),
            dimension: Some(lookup[key]),
        });
    }
    for t in &batch.reviewer_author {
        let key = OpinionKey::new(t.speaker_b, &t.text_b);
        if !opinion_node.contains_key(&key) {
            opinion_node.insert(key.clone(), nodes.len());
            nodes.push(Node {
                id: nodes.len(),
                node_type: NodeType::AuthorOpinion,
                text: key.text,
                speaker: Some(Speaker::Author),
                dimension: None,
            });
        }
    }

    let mut forward = Vec::new();
    for d in Dimension::ALL {
        forward.push((0, dim_node[&d], RelationKind::HasAspect));
    }
    for key in &reviewer_keys {
        forward.push((opinion_node[key], dim_node[&lookup[key]], RelationKind::ReviewedBy));
    }
    let mut seen = std::collections::HashSet::new();
    for t in batch.triplets() {
        let kind = canonical_relation(&t.relation_label, t.group)?;
        let src = opinion_node[&OpinionKey::new(t.speaker_a, &t.text_a)];
        let dst = opinion_node[&OpinionKey::new(t.speaker_b, &t.text_b)];
        if seen.insert((src, dst, kind)) {
            forward.push((src, dst, kind));
        }
    }

    let mut edges = Vec::with_capacity(forward.len() * 2);
    for &(src, dst, kind) in &forward {
        edges.push(Edge {
            src,
            dst,
            relation: Relation::forward(kind),
        });
    }
    if options.inverse_edges {
        for &(src, dst, kind) in &forward {
            edges.push(Edge {
                src: dst,
                dst: src,
                relation: Relation::inverse_of(kind),
            });
        }
    }

    let graph = DebateGraph::new(batch.graph_id.clone(), options.label, nodes, edges, AblationMode::Full)?;
    Ok(apply_ablation(&graph, options.ablation)?.graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_RAR: &str = "(Reviewer 1: 'The experiment settings lack sufficient diversity to fully validate the generalizability of the proposed method.', Author: 'We have added new experiments on additional datasets from different domains to enhance diversity and support generalization.', Accept)";

    #[test]
    fn parses_prompt_example() {
        let t = parse_triple_string(EXAMPLE_RAR, TripleGroup::ReviewerAuthor).unwrap();
        assert_eq!(t.speaker_a, Speaker::Reviewer1);
        assert_eq!(t.speaker_b, Speaker::Author);
        assert_eq!(t.relation_label, "Accept");
        assert!(t.text_a.starts_with("The experiment settings"));
        assert!(t.text_b.ends_with("support generalization."));
    }

    #[test]
    fn apostrophe_inside_text() {
        let s = "(Reviewer 2: 'The paper's writing could be improved in terms of clarity and organization.', Reviewer 3: 'The paper is well-written and organized, with a clear flow of ideas and a logical structure.', Disagree)";
        let t = parse_triple_string(s, TripleGroup::InterReviewer).unwrap();
        assert_eq!(t.speaker_a, Speaker::Reviewer2);
        assert_eq!(t.speaker_b, Speaker::Reviewer3);
        assert_eq!(
            t.text_a,
            "The paper's writing could be improved in terms of clarity and organization."
        );
        assert_eq!(t.relation_label, "Disagree");
    }

    #[test]
    fn curly_and_backtick_quotes() {
        let s = "( Reviewer 1: \u{2018}Too few baselines, honestly.\u{2019} , Author: `We added three.' , clarify )";
        let t = parse_triple_string(s, TripleGroup::ReviewerAuthor).unwrap();
        assert_eq!(t.text_a, "Too few baselines, honestly.");
        assert_eq!(t.text_b, "We added three.");
        assert_eq!(t.relation_label, "clarify");
    }

    #[test]
    fn missing_second_speaker_is_malformed() {
        assert!(matches!(
            parse_triple_string("(Reviewer 1: 'x', 'y', Accept)", TripleGroup::ReviewerAuthor),
            Err(ExtractionError::MalformedTriple(_))
        ));
    }

    #[test]
    fn author_in_inter_reviewer_group() {
        assert!(matches!(
            parse_triple_string(EXAMPLE_RAR, TripleGroup::InterReviewer),
            Err(ExtractionError::WrongGroupSpeaker {
                speaker: Speaker::Author,
                ..
            })
        ));
    }

    #[test]
    fn relation_vocabularies() {
        assert_eq!(
            canonical_relation("Accept", TripleGroup::ReviewerAuthor).unwrap(),
            RelationKind::Accept
        );
        assert_eq!(
            canonical_relation("progressive", TripleGroup::InterReviewer).unwrap(),
            RelationKind::Progressive
        );
        assert!(matches!(
            canonical_relation("Agree", TripleGroup::ReviewerAuthor),
            Err(ExtractionError::UnknownRelationLabel { .. })
        ));
    }

    #[test]
    fn empty_batch_and_errors() {
        let b = parse_triple_batch(
            br#"{"Reviewer_Author_Relations": [], "Inter_Reviewer_Relations": []}"#,
            "p",
        )
        .unwrap();
        assert!(b.is_empty());
        assert!(matches!(
            parse_triple_batch(b"nope", "p"),
            Err(ExtractionError::NotJson(_))
        ));
        assert!(matches!(
            parse_triple_batch(br#"{"Reviewer_Author_Relations": []}"#, "p"),
            Err(ExtractionError::MissingArrayKey(INTER_REVIEWER_KEY))
        ));
    }

    #[test]
    fn malformed_policy() {
        let good = serde_json::to_string(EXAMPLE_RAR).unwrap();
        let one_bad =
            format!(r#"{{"Reviewer_Author_Relations": [{good}, "(garbage)"], "Inter_Reviewer_Relations": []}}"#);
        let b = parse_triple_batch(one_bad.as_bytes(), "p").unwrap();
        assert_eq!(b.reviewer_author.len(), 1);
        assert_eq!(b.malformed.len(), 1);
        assert!((b.malformed_ratio() - 0.5).abs() < 1e-12);

        let mostly_bad = format!(
            r#"{{"Reviewer_Author_Relations": [{good}, "(garbage)", "(Reviewer 1: 'a', Author: 'b', Agree)"], "Inter_Reviewer_Relations": []}}"#
        );
        assert!(matches!(
            parse_triple_batch(mostly_bad.as_bytes(), "p"),
            Err(ExtractionError::TooManyMalformed {
                malformed: 2,
                total: 3,
                ..
            })
        ));
    }

    #[test]
    fn dimension_replies() {
        assert_eq!(
            parse_dimension_reply(br#"{"category": "Writing Fluency"}"#).unwrap(),
            Dimension::WritingFluency
        );
        assert_eq!(
            parse_dimension_reply(br#"{"category": "methodological_novelty"}"#).unwrap(),
            Dimension::MethodologicalNovelty
        );
        assert!(matches!(
            parse_dimension_reply(br#"{"category": "Reproducibility"}"#),
            Err(ExtractionError::UnknownCategory(_))
        ));
        assert!(matches!(
            parse_dimension_reply(b"Writing"),
            Err(ExtractionError::NotJson(_))
        ));
    }

    #[test]
    fn title_only_graph() {
        let batch = TripleBatch::default();
        let g = build_graph("T", &batch, &[], BuildOptions::default()).unwrap();
        assert_eq!((g.num_nodes(), g.edges().len()), (5, 8));
        let g = build_graph(
            "T",
            &batch,
            &[],
            BuildOptions {
                inverse_edges: false,
                ..BuildOptions::default()
            },
        )
        .unwrap();
        assert_eq!((g.num_nodes(), g.edges().len()), (5, 4));
    }

    #[test]
    fn orphan_reviewer_opinion() {
        let t = parse_triple_string(EXAMPLE_RAR, TripleGroup::ReviewerAuthor).unwrap();
        let batch = TripleBatch {
            graph_id: "p".into(),
            reviewer_author: vec![t],
            ..TripleBatch::default()
        };
        match build_graph("T", &batch, &[], BuildOptions::default()) {
            Err(ExtractionError::MissingDimensionAssignment(keys)) => {
                assert_eq!(keys.len(), 1);
                assert_eq!(keys[0].speaker, Speaker::Reviewer1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_lines_round_trip() {
        let a = vec![DimensionAssignment {
            key: OpinionKey::new(Speaker::Reviewer2, "  Needs   more data. "),
            dimension: Dimension::ExperimentalCompleteness,
        }];
        let text = write_dimension_lines(&a);
        assert!(text.contains("\"reviewer2\""));
        assert_eq!(read_dimension_lines(&text).unwrap(), a);
    }
}
