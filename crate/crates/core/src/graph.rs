//! Heterogeneous debate graph: typed nodes, typed directed edges, the
//! meta-relation schema and the structural ablation transforms.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("ablation {mode} removes every node of graph {graph_id}")]
    EmptyAfterAblation { graph_id: String, mode: AblationMode },
    #[error("cannot apply ablation {requested} to a graph already ablated with {current}")]
    IncompatibleAblation {
        current: AblationMode,
        requested: AblationMode,
    },
    #[error("invalid graph file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Title,
    EvaluationDimension,
    ReviewerOpinion,
    AuthorOpinion,
}

impl NodeType {
    /// Fixed order used for type-wise pooling.
    pub const ALL: [NodeType; 4] = [
        NodeType::Title,
        NodeType::EvaluationDimension,
        NodeType::ReviewerOpinion,
        NodeType::AuthorOpinion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Title => "title",
            NodeType::EvaluationDimension => "evaluation_dimension",
            NodeType::ReviewerOpinion => "reviewer_opinion",
            NodeType::AuthorOpinion => "author_opinion",
        }
    }

    pub fn is_opinion(self) -> bool {
        matches!(self, NodeType::ReviewerOpinion | NodeType::AuthorOpinion)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    MethodologicalNovelty,
    ExperimentalCompleteness,
    MotivationClarity,
    WritingFluency,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::MethodologicalNovelty,
        Dimension::ExperimentalCompleteness,
        Dimension::MotivationClarity,
        Dimension::WritingFluency,
    ];

    /// Human-readable name, also used as the dimension node's text.
    pub fn display_name(self) -> &'static str {
        match self {
            Dimension::MethodologicalNovelty => "Methodological Novelty",
            Dimension::ExperimentalCompleteness => "Experimental Completeness",
            Dimension::MotivationClarity => "Motivation Clarity",
            Dimension::WritingFluency => "Writing Fluency",
        }
    }

    /// Lenient lookup ignoring case, spaces, underscores and hyphens.
    pub fn from_loose(name: &str) -> Option<Dimension> {
        let key: String = name
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        Dimension::ALL.into_iter().find(|d| {
            let canon: String = d
                .display_name()
                .chars()
                .filter(|c| *c != ' ')
                .flat_map(char::to_lowercase)
                .collect();
            canon == key
        })
    }
}

/// Debate participant that authored an opinion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Reviewer1,
    Reviewer2,
    Reviewer3,
    Author,
}

impl Speaker {
    pub const REVIEWERS: [Speaker; 3] = [Speaker::Reviewer1, Speaker::Reviewer2, Speaker::Reviewer3];

    pub fn is_reviewer(self) -> bool {
        !matches!(self, Speaker::Author)
    }

    pub fn reviewer(number: u32) -> Option<Speaker> {
        match number {
            1 => Some(Speaker::Reviewer1),
            2 => Some(Speaker::Reviewer2),
            3 => Some(Speaker::Reviewer3),
            _ => None,
        }
    }

    /// Label as it appears in transcripts and extraction output.
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Reviewer1 => "Reviewer 1",
            Speaker::Reviewer2 => "Reviewer 2",
            Speaker::Reviewer3 => "Reviewer 3",
            Speaker::Author => "Author",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub const ALL: [Decision; 2] = [Decision::Accept, Decision::Reject];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Option<Decision> {
        Decision::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationGroup {
    Structural,
    InterReviewer,
    ReviewerAuthor,
    Homogeneous,
}

/// Edge label without direction information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    HasAspect,
    ReviewedBy,
    Agree,
    Disagree,
    Complement,
    Progressive,
    Independent,
    Accept,
    Reject,
    Clarify,
    Compromise,
    Extend,
    Neutral,
    Connected,
}

impl RelationKind {
    pub const COUNT: usize = 14;

    /// The 13 typed kinds; `Connected` only exists in homogenized graphs.
    pub const TYPED: [RelationKind; 13] = [
        RelationKind::HasAspect,
        RelationKind::ReviewedBy,
        RelationKind::Agree,
        RelationKind::Disagree,
        RelationKind::Complement,
        RelationKind::Progressive,
        RelationKind::Independent,
        RelationKind::Accept,
        RelationKind::Reject,
        RelationKind::Clarify,
        RelationKind::Compromise,
        RelationKind::Extend,
        RelationKind::Neutral,
    ];

    pub const INTER_REVIEWER: [RelationKind; 5] = [
        RelationKind::Agree,
        RelationKind::Disagree,
        RelationKind::Complement,
        RelationKind::Progressive,
        RelationKind::Independent,
    ];

    pub const REVIEWER_AUTHOR: [RelationKind; 6] = [
        RelationKind::Accept,
        RelationKind::Reject,
        RelationKind::Clarify,
        RelationKind::Compromise,
        RelationKind::Extend,
        RelationKind::Neutral,
    ];

    pub fn group(self) -> RelationGroup {
        use RelationKind::*;
        match self {
            HasAspect | ReviewedBy => RelationGroup::Structural,
            Agree | Disagree | Complement | Progressive | Independent => RelationGroup::InterReviewer,
            Accept | Reject | Clarify | Compromise | Extend | Neutral => RelationGroup::ReviewerAuthor,
            Connected => RelationGroup::Homogeneous,
        }
    }

    /// Legal (source, target) node types of the forward relation.
    pub fn endpoints(self) -> Option<(NodeType, NodeType)> {
        match self.group() {
            RelationGroup::Structural => Some(match self {
                RelationKind::HasAspect => (NodeType::Title, NodeType::EvaluationDimension),
                _ => (NodeType::ReviewerOpinion, NodeType::EvaluationDimension),
            }),
            RelationGroup::InterReviewer => Some((NodeType::ReviewerOpinion, NodeType::ReviewerOpinion)),
            RelationGroup::ReviewerAuthor => Some((NodeType::ReviewerOpinion, NodeType::AuthorOpinion)),
            RelationGroup::Homogeneous => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        use RelationKind::*;
        match self {
            HasAspect => "has_aspect",
            ReviewedBy => "reviewed_by",
            Agree => "agree",
            Disagree => "disagree",
            Complement => "complement",
            Progressive => "progressive",
            Independent => "independent",
            Accept => "accept",
            Reject => "reject",
            Clarify => "clarify",
            Compromise => "compromise",
            Extend => "extend",
            Neutral => "neutral",
            Connected => "connected",
        }
    }
}

/// A relation label with its direction; `inverse` marks the reversed copy
/// of a forward edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation {
    pub kind: RelationKind,
    pub inverse: bool,
}

impl Relation {
    pub const CONNECTED: Relation = Relation {
        kind: RelationKind::Connected,
        inverse: false,
    };

    pub fn forward(kind: RelationKind) -> Self {
        Relation { kind, inverse: false }
    }

    pub fn inverse_of(kind: RelationKind) -> Self {
        Relation { kind, inverse: true }
    }

    pub fn reversed(self) -> Self {
        Relation {
            kind: self.kind,
            inverse: !self.inverse,
        }
    }

    /// Total order used for incoming-edge sorting: forward kinds first,
    /// then their inverses.
    pub fn ordinal(self) -> usize {
        self.kind as usize + if self.inverse { RelationKind::COUNT } else { 0 }
    }

    pub fn group(self) -> RelationGroup {
        self.kind.group()
    }

    /// Legal (source, target) pair, swapped for inverse relations.
    pub fn endpoints(self) -> Option<(NodeType, NodeType)> {
        self.kind
            .endpoints()
            .map(|(s, t)| if self.inverse { (t, s) } else { (s, t) })
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.inverse {
            write!(f, "inverse({})", self.kind.as_str())
        } else {
            f.write_str(self.kind.as_str())
        }
    }
}

/// A typed triple `(source type, relation, target type)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaRelation {
    pub source: NodeType,
    pub relation: Relation,
    pub target: NodeType,
}

/// All legal meta-relations of the heterogeneous schema: 13 forward
/// triples, plus their 13 inverses when `include_inverse` is set.
pub fn legal_meta_relations(include_inverse: bool) -> Vec<MetaRelation> {
    let mut out = Vec::with_capacity(26);
    for inverse in [false, true] {
        if inverse && !include_inverse {
            break;
        }
        for kind in RelationKind::TYPED {
            let relation = Relation { kind, inverse };
            let (source, target) = relation.endpoints().expect("typed relation has endpoints");
            out.push(MetaRelation {
                source,
                relation,
                target,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    NoTitle,
    NoEval,
    #[serde(rename = "no_rar")]
    NoRar,
    #[serde(rename = "no_irr")]
    NoIrr,
    Homogeneous,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::NoTitle,
        AblationMode::NoEval,
        AblationMode::NoRar,
        AblationMode::NoIrr,
        AblationMode::Homogeneous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoTitle => "no_title",
            AblationMode::NoEval => "no_eval",
            AblationMode::NoRar => "no_rar",
            AblationMode::NoIrr => "no_irr",
            AblationMode::Homogeneous => "homogeneous",
        }
    }

    pub fn parse(s: &str) -> Option<AblationMode> {
        AblationMode::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub node_type: NodeType,
    pub text: String,
    pub speaker: Option<Speaker>,
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Immutable heterogeneous debate graph with a precomputed incoming index.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateGraph {
    graph_id: String,
    label: Option<Decision>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    ablation: AblationMode,
    incoming: Vec<Vec<(usize, Relation)>>,
}

impl DebateGraph {
    /// Assembles a graph and builds its incoming index. Edges pointing at
    /// unknown nodes are rejected here; schema problems are left to
    /// [`validate_graph`].
    pub fn new(
        graph_id: impl Into<String>,
        label: Option<Decision>,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        ablation: AblationMode,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut incoming = vec![Vec::new(); n];
        for e in &edges {
            if e.src >= n {
                return Err(GraphError::UnknownNode(e.src));
            }
            if e.dst >= n {
                return Err(GraphError::UnknownNode(e.dst));
            }
            incoming[e.dst].push((e.src, e.relation));
        }
        for list in &mut incoming {
            list.sort_by_key(|(s, r)| (*s, r.ordinal()));
        }
        Ok(DebateGraph {
            graph_id: graph_id.into(),
            label,
            nodes,
            edges,
            ablation,
            incoming,
        })
    }

    pub fn graph_id(&self) -> &str {
        &self.graph_id
    }

    pub fn label(&self) -> Option<Decision> {
        self.label
    }

    pub fn with_label(mut self, label: Option<Decision>) -> Self {
        self.label = label;
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn ablation(&self) -> AblationMode {
        self.ablation
    }

    /// True once the graph has been collapsed to a single node/edge type.
    pub fn is_homogeneous(&self) -> bool {
        self.ablation == AblationMode::Homogeneous
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> Result<&Node, GraphError> {
        self.nodes.get(id).ok_or(GraphError::UnknownNode(id))
    }

    /// Incoming `(source, relation)` pairs of `t`, sorted by
    /// `(source id, relation ordinal)`.
    pub fn incoming(&self, t: usize) -> Result<&[(usize, Relation)], GraphError> {
        self.incoming
            .get(t)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(t))
    }

    pub fn nodes_of_type(&self, node_type: NodeType) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.node_type == node_type)
            .map(|n| n.id)
            .collect()
    }

    /// Number of forward edges belonging to a relation group.
    pub fn count_group(&self, group: RelationGroup) -> usize {
        self.edges
            .iter()
            .filter(|e| !e.relation.inverse && e.relation.group() == group)
            .count()
    }

    /// Relabels node `i` as `perm[i]`, remapping edges. Node and edge
    /// content is otherwise untouched.
    pub fn permute(&self, perm: &[usize]) -> Result<DebateGraph, GraphError> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(GraphError::Format(
                "permutation is not a bijection over node ids".into(),
            ));
        }
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|node| perm[node.id]);
        for node in &mut nodes {
            node.id = perm[node.id];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: perm[e.src],
                dst: perm[e.dst],
                relation: e.relation,
            })
            .collect();
        DebateGraph::new(self.graph_id.clone(), self.label, nodes, edges, self.ablation)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphFile::from(self)).expect("graph file serializes")
    }

    pub fn from_json(s: &str) -> Result<DebateGraph, GraphError> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| GraphError::Format(e.to_string()))?;
        file.try_into()
    }
}

// ---- file format -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    graph_id: String,
    label: Option<Decision>,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "is_full")]
    ablation: AblationMode,
}

fn is_full(m: &AblationMode) -> bool {
    *m == AblationMode::Full
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    #[serde(rename = "type")]
    node_type: NodeType,
    text: String,
    speaker: Option<Speaker>,
    dimension: Option<Dimension>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    src: usize,
    dst: usize,
    relation: RelationKind,
    inverse: bool,
}

impl From<&DebateGraph> for GraphFile {
    fn from(g: &DebateGraph) -> Self {
        GraphFile {
            graph_id: g.graph_id.clone(),
            label: g.label,
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    node_type: n.node_type,
                    text: n.text.clone(),
                    speaker: n.speaker,
                    dimension: n.dimension,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    src: e.src,
                    dst: e.dst,
                    relation: e.relation.kind,
                    inverse: e.relation.inverse,
                })
                .collect(),
            ablation: g.ablation,
        }
    }
}

impl TryFrom<GraphFile> for DebateGraph {
    type Error = GraphError;

    fn try_from(f: GraphFile) -> Result<Self, GraphError> {
        let nodes = f
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                node_type: n.node_type,
                text: n.text,
                speaker: n.speaker,
                dimension: n.dimension,
            })
            .collect();
        let edges = f
            .edges
            .into_iter()
            .map(|e| Edge {
                src: e.src,
                dst: e.dst,
                relation: Relation {
                    kind: e.relation,
                    inverse: e.inverse,
                },
            })
            .collect();
        DebateGraph::new(f.graph_id, f.label, nodes, edges, f.ablation)
    }
}

// ---- validation ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonDenseId { position: usize, id: usize },
    EmptyText { node: usize },
    SpeakerMismatch { node: usize },
    DimensionMismatch { node: usize },
    TitleCount(usize),
    DimensionNodes { found: Vec<Dimension> },
    IllegalMetaRelation { src: usize, dst: usize, relation: Relation },
    DuplicateEdge { src: usize, dst: usize, relation: Relation },
    AblatedGroupPresent { src: usize, dst: usize, relation: Relation },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonDenseId { position, id } => {
                write!(f, "node at position {position} has id {id}; ids must be dense 0..N-1")
            }
            Violation::EmptyText { node } => write!(f, "node {node} has empty text"),
            Violation::SpeakerMismatch { node } => {
                write!(f, "node {node}: speaker must be present exactly on opinion nodes")
            }
            Violation::DimensionMismatch { node } => {
                write!(f, "node {node}: dimension must be present exactly on reviewer opinions")
            }
            Violation::TitleCount(n) => write!(f, "expected exactly one title node, found {n}"),
            Violation::DimensionNodes { found } => {
                write!(
                    f,
                    "expected one evaluation dimension node per dimension, found {found:?}"
                )
            }
            Violation::IllegalMetaRelation { src, dst, relation } => {
                write!(f, "illegal meta-relation on edge {src} -> {dst} ({relation})")
            }
            Violation::DuplicateEdge { src, dst, relation } => {
                write!(f, "duplicate edge {src} -> {dst} ({relation})")
            }
            Violation::AblatedGroupPresent { src, dst, relation } => {
                write!(
                    f,
                    "edge {src} -> {dst} ({relation}) belongs to an ablated relation group"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

/// Checks every schema invariant under the graph's ablation mode. Never
/// fails; all problems are listed in the report.
pub fn validate_graph(g: &DebateGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let mode = g.ablation;

    for (position, node) in g.nodes.iter().enumerate() {
        if node.id != position {
            violations.push(Violation::NonDenseId { position, id: node.id });
        }
        if node.text.trim().is_empty() {
            violations.push(Violation::EmptyText { node: position });
        }
        if node.speaker.is_some() != node.node_type.is_opinion() {
            violations.push(Violation::SpeakerMismatch { node: position });
        } else if let Some(s) = node.speaker {
            if s.is_reviewer() != (node.node_type == NodeType::ReviewerOpinion) {
                violations.push(Violation::SpeakerMismatch { node: position });
            }
        }
        if node.dimension.is_some() != (node.node_type == NodeType::ReviewerOpinion) {
            violations.push(Violation::DimensionMismatch { node: position });
        }
    }

    let titles = g.nodes_of_type(NodeType::Title).len();
    let expected_titles = if mode == AblationMode::NoTitle { 0 } else { 1 };
    if titles != expected_titles {
        violations.push(Violation::TitleCount(titles));
    }
    let mut found: Vec<Dimension> = g
        .nodes
        .iter()
        .filter(|n| n.node_type == NodeType::EvaluationDimension)
        .filter_map(|n| Dimension::from_loose(&n.text))
        .collect();
    let dim_nodes = g.nodes_of_type(NodeType::EvaluationDimension).len();
    found.sort();
    let dims_ok = if mode == AblationMode::NoEval {
        dim_nodes == 0
    } else {
        dim_nodes == 4 && found == Dimension::ALL
    };
    if !dims_ok {
        violations.push(Violation::DimensionNodes { found });
    }

    let mut seen = HashSet::new();
    let n = g.nodes.len();
    for e in &g.edges {
        if e.src >= n || e.dst >= n {
            violations.push(Violation::IllegalMetaRelation {
                src: e.src,
                dst: e.dst,
                relation: e.relation,
            });
            continue;
        }
        let legal = if mode == AblationMode::Homogeneous {
            e.relation == Relation::CONNECTED
        } else {
            match e.relation.endpoints() {
                Some((s, t)) => g.nodes[e.src].node_type == s && g.nodes[e.dst].node_type == t,
                None => false,
            }
        };
        if !legal {
            violations.push(Violation::IllegalMetaRelation {
                src: e.src,
                dst: e.dst,
                relation: e.relation,
            });
        }
        let removed_group = match mode {
            AblationMode::NoRar => Some(RelationGroup::ReviewerAuthor),
            AblationMode::NoIrr => Some(RelationGroup::InterReviewer),
            _ => None,
        };
        if removed_group == Some(e.relation.group()) {
            violations.push(Violation::AblatedGroupPresent {
                src: e.src,
                dst: e.dst,
                relation: e.relation,
            });
        }
        // Collapsing types may legitimately produce parallel edges.
        if mode != AblationMode::Homogeneous && !seen.insert((e.src, e.dst, e.relation)) {
            violations.push(Violation::DuplicateEdge {
                src: e.src,
                dst: e.dst,
                relation: e.relation,
            });
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

// ---- ablation --------------------------------------------------------------

/// Result of an ablation: the new graph plus the `old id -> new id` map
/// (`None` for removed nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Ablated {
    pub graph: DebateGraph,
    pub id_map: Vec<Option<usize>>,
}

pub fn apply_ablation(g: &DebateGraph, mode: AblationMode) -> Result<Ablated, GraphError> {
    let identity: Vec<Option<usize>> = (0..g.nodes.len()).map(Some).collect();
    if mode == AblationMode::Full || mode == g.ablation {
        return Ok(Ablated {
            graph: g.clone(),
            id_map: identity,
        });
    }
    if g.ablation != AblationMode::Full {
        return Err(GraphError::IncompatibleAblation {
            current: g.ablation,
            requested: mode,
        });
    }

    let drop_type = match mode {
        AblationMode::NoTitle => Some(NodeType::Title),
        AblationMode::NoEval => Some(NodeType::EvaluationDimension),
        _ => None,
    };
    let drop_group = match mode {
        AblationMode::NoRar => Some(RelationGroup::ReviewerAuthor),
        AblationMode::NoIrr => Some(RelationGroup::InterReviewer),
        _ => None,
    };

    let mut id_map = vec![None; g.nodes.len()];
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        if Some(node.node_type) == drop_type {
            continue;
        }
        id_map[node.id] = Some(nodes.len());
        let mut kept = node.clone();
        kept.id = nodes.len();
        nodes.push(kept);
    }
    if nodes.is_empty() {
        return Err(GraphError::EmptyAfterAblation {
            graph_id: g.graph_id.clone(),
            mode,
        });
    }

    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        if Some(e.relation.group()) == drop_group {
            continue;
        }
        let (Some(src), Some(dst)) = (id_map[e.src], id_map[e.dst]) else {
            continue;
        };
        let relation = if mode == AblationMode::Homogeneous {
            Relation::CONNECTED
        } else {
            e.relation
        };
        edges.push(Edge { src, dst, relation });
    }

    let graph = DebateGraph::new(g.graph_id.clone(), g.label, nodes, edges, mode)?;
    Ok(Ablated { graph, id_map })
}

/// Edge counts per relation, keyed by display name. Handy for reports.
pub fn relation_histogram(g: &DebateGraph) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in &g.edges {
        *out.entry(e.relation.to_string()).or_insert(0) += 1;
    }
    out
}
