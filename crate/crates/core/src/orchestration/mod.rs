//! LLM-driven stages: debate simulation, triple extraction, dimension
//! classification and text embedding.

mod cache;
mod client;
#[cfg(feature = "http")]
mod http;
mod mock;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{sha256_hex, CacheRecord, EmbeddingCache};
pub use client::{Backoff, ChatMessage, ChatRole, EndpointConfig, EndpointError, LlmClient, RetryingClient, Sleeper};
#[cfg(feature = "http")]
pub use http::HttpClient;
pub use mock::{mock_client, mock_dimension, MockClient, MockStats, STANCES};

use crate::extraction::{
    normalize_whitespace, parse_dimension_reply, parse_triple_batch, DimensionAssignment, ExtractionError, TripleBatch,
};
use crate::graph::Dimension;
use crate::parallel::map_indexed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestrationError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("paper {0} has an empty body")]
    EmptyPaper(String),
    #[error("{0} returned an empty completion")]
    EmptyCompletion(String),
    #[error("transcript for {0} is missing a mandatory stage")]
    IncompleteTranscript(String),
    #[error("triple extraction failed for {paper_id}: {reason}")]
    ExtractionFailed { paper_id: String, reason: String },
    #[error("classification failed for {} comment(s): {}", .0.len(), .0.join(" | "))]
    ClassificationFailed(Vec<String>),
    #[error("embedding width {found} differs from {expected}")]
    InconsistentDimension { expected: usize, found: usize },
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding cache: {0}")]
    Cache(String),
}

// ---- transcript ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Reviewer1,
    Reviewer2,
    Reviewer3,
    Author,
    SeniorReviewer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::Reviewer1,
        AgentRole::Reviewer2,
        AgentRole::Reviewer3,
        AgentRole::Author,
        AgentRole::SeniorReviewer,
    ];
    pub const REVIEWERS: [AgentRole; 3] = [AgentRole::Reviewer1, AgentRole::Reviewer2, AgentRole::Reviewer3];

    pub fn reviewer_number(self) -> Option<usize> {
        match self {
            AgentRole::Reviewer1 => Some(1),
            AgentRole::Reviewer2 => Some(2),
            AgentRole::Reviewer3 => Some(3),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self.reviewer_number() {
            Some(k) => format!("Reviewer {k}"),
            None if self == AgentRole::Author => "Author".into(),
            None => "Senior Reviewer".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialReview,
    AuthorRebuttal,
    ReEvaluation,
    MetaReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMessage {
    pub role: AgentRole,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub messages: Vec<TranscriptMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub paper_id: String,
    pub stages: Vec<StageRecord>,
}

impl Transcript {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Stage order is review, rebuttal, re-evaluation and an optional
    /// meta-review; the first stage has one message per reviewer.
    pub fn is_well_formed(&self) -> bool {
        let order: Vec<Stage> = self.stages.iter().map(|s| s.stage).collect();
        let mandatory = [Stage::InitialReview, Stage::AuthorRebuttal, Stage::ReEvaluation];
        let shape_ok = order == mandatory || order == [&mandatory[..], &[Stage::MetaReview]].concat();
        let reviewers: Vec<AgentRole> = self
            .stages
            .first()
            .map_or(Vec::new(), |s| s.messages.iter().map(|m| m.role).collect());
        shape_ok && reviewers == AgentRole::REVIEWERS
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes") + "\n"
    }
}

/// A figure or table forwarded to the endpoint as-is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub description: String,
}

impl Attachment {
    fn reference(&self) -> String {
        self.url.clone().unwrap_or_else(|| self.description.clone())
    }

    fn render(&self) -> String {
        match &self.url {
            Some(u) => format!("{u}\n{}", self.description),
            None => self.description.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperInput {
    pub paper_id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub figures: Vec<Attachment>,
    #[serde(default)]
    pub tables: Vec<Attachment>,
}

// ---- prompts ---------------------------------------------------------------

/// Prompt texts. `{k}`, `{guidelines}`, `{reviews}`, `{rebuttal}`,
/// `{followups}` and `{comment}` are substituted at render time. The mock
/// client recognizes requests by the default wording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prompts {
    pub participant_system: String,
    pub paper_intro: String,
    pub intro_ack: String,
    pub text_ack: String,
    pub figure_ack: String,
    pub table_ack: String,
    pub reviewer: String,
    pub review_guidelines: String,
    pub author: String,
    pub author_guidelines: String,
    pub reevaluation: String,
    pub meta_review: String,
    pub meta_guidelines: String,
    pub extraction_system: String,
    pub extraction_ack: String,
    pub extraction_task: String,
    pub json_only: String,
    pub classification_system: String,
    pub classification_user: String,
    pub include_meta_review: bool,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            participant_system: "You take part in reviewing a research paper. Study all of its content closely.".into(),
            paper_intro: "Next you will receive a research paper: its text first, then each figure and table.".into(),
            intro_ack: "Ready. Please send the paper.".into(),
            text_ack: "Paper text received.".into(),
            figure_ack: "Figure received.".into(),
            table_ack: "Table received.".into(),
            reviewer: "Role: reviewer {k}. You judge submissions on technical quality, originality and clarity.\n\n\
                       ## Review guidelines\n{guidelines}"
                .into(),
            review_guidelines: "Begin with an overall rating from 1 to 10. Then list your arguments, one sentence \
                                per line, each line starting with \"- \"."
                .into(),
            author: "Role: author. The reviews of your submission follow. Respond to every point.\n\n\
                     ## Author guidelines\n{guidelines}\n\n{reviews}"
                .into(),
            author_guidelines: "Answer each reviewer argument on its own line written as \"[Reviewer k] response\", \
                                in the order the arguments were raised."
                .into(),
            reevaluation: "Role: reviewer {k}. Read the author's rebuttal and say whether your assessment changes.\n\n\
                           {reviews}\n\n## Rebuttal\n{rebuttal}"
                .into(),
            meta_review: "Role: area chair. Weigh the reviews, the rebuttal and the follow-ups, then write a \
                          meta-review.\n\n## Guidelines\n{guidelines}\n\n{reviews}\n\n## Rebuttal\n{rebuttal}\n\n\
                          ## Follow-ups\n{followups}"
                .into(),
            meta_guidelines: "Start with \"Score: n\" on a 1 to 10 scale, then summarize the decisive arguments."
                .into(),
            extraction_system: "You analyse arguments in peer review discussions. The input holds the initial \
                                comments of three reviewers, the author's replies and the reviewers' follow-ups."
                .into(),
            extraction_ack: "Review discussion received.".into(),
            extraction_task: EXTRACTION_TASK.into(),
            json_only: "Reply again with a single JSON object only and no surrounding text.".into(),
            classification_system: CLASSIFICATION_SYSTEM.into(),
            classification_user: "Comment to classify: {comment}".into(),
            include_meta_review: true,
        }
    }
}

const EXTRACTION_TASK: &str = "### Task\n\
Extract argumentative relations of two kinds.\n\n\
1. Reviewer-author: link a reviewer's argument sentence to the author's reply. Labels: Accept (author agrees), \
Reject (author does not adopt it), Clarify (author explains further), Compromise (partial acceptance with a middle \
ground), Extend (author adds material prompted by the comment), Neutral (no clear stance).\n\
2. Inter-reviewer: link argument sentences of two different reviewers. Labels: Agree, Disagree, Complement \
(different but related aspects), Progressive (one deepens the other), Independent (unrelated issues).\n\n\
### Output\n\
Return one JSON object with the arrays \"Reviewer_Author_Relations\" and \"Inter_Reviewer_Relations\". Each element \
is a string such as \"(Reviewer 1: `sentence', Author: `sentence', Accept)\" or \
\"(Reviewer 1: `sentence', Reviewer 2: `sentence', Agree)\". Quote sentences verbatim and skip pairs without a clear \
relation.";

const CLASSIFICATION_SYSTEM: &str = "### Task\n\
Assign the comment to the evaluation dimension it mainly addresses:\n\
1. Methodological Novelty: originality or technical novelty of the method.\n\
2. Motivation Clarity: whether the motivation or problem statement is clear.\n\
3. Experimental Completeness: quality, coverage or reliability of the experiments.\n\
4. Writing Fluency: writing quality and readability.\n\
Answer with JSON of the form {\"category\": \"<dimension name>\"}.";

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn render_reviews(heading: &str, reviews: &[(AgentRole, &str)]) -> String {
    let mut out = format!("## {heading}\n");
    for (role, text) in reviews {
        out.push_str(&format!("### {}:\n{}\n", role.label(), text.trim()));
    }
    out.trim_end().to_string()
}

// ---- simulation ------------------------------------------------------------

fn paper_context(paper: &PaperInput, prompts: &Prompts) -> Vec<ChatMessage> {
    let mut ctx = vec![
        ChatMessage::system(&prompts.participant_system),
        ChatMessage::user(&prompts.paper_intro),
        ChatMessage::assistant(&prompts.intro_ack),
        ChatMessage::user(format!("{}\n\n{}", paper.title, paper.body)),
        ChatMessage::assistant(&prompts.text_ack),
    ];
    for f in &paper.figures {
        ctx.push(ChatMessage::user(f.render()));
        ctx.push(ChatMessage::assistant(&prompts.figure_ack));
    }
    for t in &paper.tables {
        ctx.push(ChatMessage::user(t.render()));
        ctx.push(ChatMessage::assistant(&prompts.table_ack));
    }
    ctx
}

fn ask(
    client: &dyn LlmClient,
    ctx: &[ChatMessage],
    prompt: String,
    who: AgentRole,
) -> Result<String, OrchestrationError> {
    let mut messages = ctx.to_vec();
    messages.push(ChatMessage::user(prompt));
    let reply = client.chat(&messages)?;
    if reply.trim().is_empty() {
        return Err(OrchestrationError::EmptyCompletion(who.label()));
    }
    Ok(reply)
}

/// Runs the staged debate sequentially: three reviews, one rebuttal, three
/// re-evaluations and optionally a meta-review.
pub fn simulate_debate(
    paper: &PaperInput,
    client: &dyn LlmClient,
    prompts: &Prompts,
) -> Result<Transcript, OrchestrationError> {
    if paper.body.trim().is_empty() {
        return Err(OrchestrationError::EmptyPaper(paper.paper_id.clone()));
    }
    let ctx = paper_context(paper, prompts);
    let attachments: Vec<String> = paper
        .figures
        .iter()
        .chain(&paper.tables)
        .map(Attachment::reference)
        .collect();

    let mut reviews = Vec::new();
    for role in AgentRole::REVIEWERS {
        let k = role.reviewer_number().expect("reviewer").to_string();
        let prompt = fill(
            &prompts.reviewer,
            &[("k", &k), ("guidelines", &prompts.review_guidelines)],
        );
        reviews.push((role, ask(client, &ctx, prompt, role)?));
    }
    let review_refs: Vec<(AgentRole, &str)> = reviews.iter().map(|(r, t)| (*r, t.as_str())).collect();
    let rendered_reviews = render_reviews("Reviews", &review_refs);

    let prompt = fill(
        &prompts.author,
        &[
            ("guidelines", &prompts.author_guidelines),
            ("reviews", &rendered_reviews),
        ],
    );
    let rebuttal = ask(client, &ctx, prompt, AgentRole::Author)?;

    let mut followups = Vec::new();
    for role in AgentRole::REVIEWERS {
        let k = role.reviewer_number().expect("reviewer").to_string();
        let prompt = fill(
            &prompts.reevaluation,
            &[("k", &k), ("reviews", &rendered_reviews), ("rebuttal", rebuttal.trim())],
        );
        followups.push((role, ask(client, &ctx, prompt, role)?));
    }

    let message = |role: AgentRole, content: &str, attachments: Vec<String>| TranscriptMessage {
        role,
        content: content.to_string(),
        attachments,
    };
    let mut stages = vec![
        StageRecord {
            stage: Stage::InitialReview,
            messages: reviews
                .iter()
                .map(|(r, t)| message(*r, t, attachments.clone()))
                .collect(),
        },
        StageRecord {
            stage: Stage::AuthorRebuttal,
            messages: vec![message(AgentRole::Author, &rebuttal, Vec::new())],
        },
        StageRecord {
            stage: Stage::ReEvaluation,
            messages: followups.iter().map(|(r, t)| message(*r, t, Vec::new())).collect(),
        },
    ];
    if prompts.include_meta_review {
        let followup_refs: Vec<(AgentRole, &str)> = followups.iter().map(|(r, t)| (*r, t.as_str())).collect();
        let rendered_followups = render_reviews("Follow-ups", &followup_refs);
        let prompt = fill(
            &prompts.meta_review,
            &[
                ("guidelines", &prompts.meta_guidelines),
                ("reviews", &rendered_reviews),
                ("rebuttal", rebuttal.trim()),
                ("followups", &rendered_followups),
            ],
        );
        let meta = ask(client, &ctx, prompt, AgentRole::SeniorReviewer)?;
        stages.push(StageRecord {
            stage: Stage::MetaReview,
            messages: vec![message(AgentRole::SeniorReviewer, &meta, Vec::new())],
        });
    }
    Ok(Transcript {
        paper_id: paper.paper_id.clone(),
        stages,
    })
}

// ---- extraction ------------------------------------------------------------

/// Longest balanced `{...}` span, ignoring braces inside JSON strings.
pub fn locate_json(reply: &str) -> Option<&str> {
    let bytes = reply.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    for start in (0..bytes.len()).filter(|&i| bytes[i] == b'{') {
        if best.is_some_and(|(s, e)| start < e && start > s) {
            continue;
        }
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if best.is_none_or(|(s, e)| i + 1 - start > e - s) {
                            best = Some((start, i + 1));
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    best.map(|(s, e)| &reply[s..e])
}

fn json_payload(reply: &str) -> &[u8] {
    locate_json(reply).unwrap_or(reply).as_bytes()
}

/// Renders the transcript into the extractor's three sections. The
/// meta-review is never shown.
pub fn render_extraction_input(transcript: &Transcript) -> Result<String, OrchestrationError> {
    let missing = || OrchestrationError::IncompleteTranscript(transcript.paper_id.clone());
    let initial = transcript.stage(Stage::InitialReview).ok_or_else(missing)?;
    let rebuttal = transcript.stage(Stage::AuthorRebuttal).ok_or_else(missing)?;
    let followup = transcript.stage(Stage::ReEvaluation).ok_or_else(missing)?;
    let section = |title: &str, stage: &StageRecord| {
        let mut out = format!("### {title}:\n");
        for m in &stage.messages {
            out.push_str(&format!("## {}:\n{}\n\n", m.role.label(), m.content.trim()));
        }
        out
    };
    Ok(format!(
        "{}{}{}",
        section("Initial Review Comments", initial),
        section("Author's Responses", rebuttal),
        section("Reviewers' Responses", followup)
    )
    .trim_end()
    .to_string())
}

/// Asks for triples and parses them; a reply without usable JSON earns one
/// retry with an explicit JSON-only instruction.
pub fn extract_triples(
    transcript: &Transcript,
    client: &dyn LlmClient,
    prompts: &Prompts,
) -> Result<TripleBatch, OrchestrationError> {
    let mut messages = vec![
        ChatMessage::system(&prompts.extraction_system),
        ChatMessage::user(render_extraction_input(transcript)?),
        ChatMessage::assistant(&prompts.extraction_ack),
        ChatMessage::user(&prompts.extraction_task),
    ];
    let failed = |e: ExtractionError| OrchestrationError::ExtractionFailed {
        paper_id: transcript.paper_id.clone(),
        reason: e.to_string(),
    };
    for attempt in 0..2 {
        let reply = client.chat(&messages)?;
        match parse_triple_batch(json_payload(&reply), &transcript.paper_id) {
            Ok(batch) => return Ok(batch),
            Err(ExtractionError::NotJson(_) | ExtractionError::MissingArrayKey(_)) if attempt == 0 => {
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(&prompts.json_only));
            }
            Err(e) => return Err(failed(e)),
        }
    }
    unreachable!("second attempt always returns")
}

// ---- classification --------------------------------------------------------

enum ClassifyOutcome {
    Done(Dimension),
    Failed,
    Endpoint(EndpointError),
}

/// One request per distinct reviewer opinion, each with one retry on an
/// unusable reply. Results follow first-appearance order.
pub fn classify_dimensions(
    batch: &TripleBatch,
    client: &dyn LlmClient,
    prompts: &Prompts,
    jobs: usize,
) -> Result<Vec<DimensionAssignment>, OrchestrationError> {
    let keys = batch.reviewer_opinions();
    let outcomes = map_indexed(&keys, jobs.max(1), |_, key| {
        let messages = vec![
            ChatMessage::system(&prompts.classification_system),
            ChatMessage::user(fill(&prompts.classification_user, &[("comment", &key.text)])),
        ];
        for _ in 0..2 {
            match client.chat(&messages) {
                Err(e) => return ClassifyOutcome::Endpoint(e),
                Ok(reply) => {
                    if let Ok(d) = parse_dimension_reply(json_payload(&reply)) {
                        return ClassifyOutcome::Done(d);
                    }
                }
            }
        }
        ClassifyOutcome::Failed
    });
    let mut out = Vec::with_capacity(keys.len());
    let mut failures = Vec::new();
    for (key, outcome) in keys.into_iter().zip(outcomes) {
        match outcome {
            ClassifyOutcome::Done(dimension) => out.push(DimensionAssignment { key, dimension }),
            ClassifyOutcome::Failed => failures.push(format!("{}: {}", key.speaker.label(), key.text)),
            ClassifyOutcome::Endpoint(e) => return Err(e.into()),
        }
    }
    if !failures.is_empty() {
        return Err(OrchestrationError::ClassificationFailed(failures));
    }
    Ok(out)
}

// ---- embedding -------------------------------------------------------------

/// Node texts of the graph `build_graph` would produce, in node order.
pub fn graph_texts(title: &str, batch: &TripleBatch) -> Vec<String> {
    let mut out = vec![normalize_whitespace(title)];
    out.extend(Dimension::ALL.iter().map(|d| d.display_name().to_string()));
    out.extend(batch.reviewer_opinions().into_iter().map(|k| k.text));
    let mut seen = HashSet::new();
    for t in &batch.reviewer_author {
        let text = normalize_whitespace(&t.text_b);
        if seen.insert(text.clone()) {
            out.push(text);
        }
    }
    out
}

/// One vector per input text. Only texts missing from `cache` reach the
/// endpoint, each exactly once, fanned out over `jobs` workers.
pub fn embed_texts(
    texts: &[String],
    client: &dyn LlmClient,
    cache: &mut EmbeddingCache,
    jobs: usize,
) -> Result<Vec<Vec<f64>>, OrchestrationError> {
    if texts.is_empty() {
        return Err(OrchestrationError::EmptyInput);
    }
    let mut seen = HashSet::new();
    let missing: Vec<&String> = texts
        .iter()
        .filter(|t| cache.get(t).is_none() && seen.insert(t.as_str()))
        .collect();
    let fetched = map_indexed(&missing, jobs.max(1), |_, t| client.embed(t));
    for (text, vector) in missing.into_iter().zip(fetched) {
        cache.insert(text, vector?)?;
    }
    let out: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| cache.get(t).expect("filled above").to_vec())
        .collect();
    let expected = out[0].len();
    if let Some(bad) = out.iter().find(|v| v.len() != expected) {
        return Err(OrchestrationError::InconsistentDimension {
            expected,
            found: bad.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_json_prefers_longest_span() {
        assert_eq!(
            locate_json("see {\"a\": {\"b\": 1}} and {}"),
            Some("{\"a\": {\"b\": 1}}")
        );
        assert_eq!(locate_json("{\"x\": \"}\"} tail"), Some("{\"x\": \"}\"}"));
        assert_eq!(locate_json("no relations found"), None);
        assert_eq!(locate_json("{} {\"k\": 2}"), Some("{\"k\": 2}"));
    }

    #[test]
    fn fill_replaces_every_slot() {
        assert_eq!(fill("{k}-{k} {x}", &[("k", "1"), ("x", "y")]), "1-1 y");
    }
}
