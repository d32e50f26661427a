use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::client::{ChatMessage, ChatRole, EndpointError, LlmClient};
use crate::extraction::{INTER_REVIEWER_KEY, REVIEWER_AUTHOR_KEY};
use crate::graph::{Dimension, RelationKind};
use crate::synthetic::hash_unit_vector;

/// Opening phrase of a mock rebuttal line and the reviewer-author label
/// the mock extractor assigns to it.
pub const STANCES: [(&str, RelationKind); 6] = [
    ("We fully agree", RelationKind::Accept),
    ("We respectfully disagree", RelationKind::Reject),
    ("To clarify", RelationKind::Clarify),
    ("We partially agree", RelationKind::Compromise),
    ("Building on this", RelationKind::Extend),
    ("We note the comment", RelationKind::Neutral),
];

/// Keyword rules of the mock classifier, checked in order.
pub fn mock_dimension(comment: &str) -> Dimension {
    let c = comment.to_lowercase();
    let has = |keys: &[&str]| keys.iter().any(|k| c.contains(k));
    if has(&["experiment", "empirical", "dataset", "baseline", "case stud"]) {
        Dimension::ExperimentalCompleteness
    } else if has(&["writ", "clarity", "organiz", "readab"]) {
        Dimension::WritingFluency
    } else if has(&["motivat", "problem"]) {
        Dimension::MotivationClarity
    } else {
        Dimension::MethodologicalNovelty
    }
}

const POINTS: [(Dimension, &[&str]); 4] = [
    (
        Dimension::MethodologicalNovelty,
        &[
            "The central idea behind {t} reads as an incremental step over earlier methods.",
            "The proposed mechanism for {t} offers a genuinely new angle on the task.",
            "The technical contribution of {t} overlaps heavily with known techniques.",
        ],
    ),
    (
        Dimension::ExperimentalCompleteness,
        &[
            "The experimental evaluation of {t} lacks comparisons with strong baselines.",
            "The experiments on {t} cover too few datasets to support the claims.",
            "The empirical results for {t} omit variance across random seeds.",
        ],
    ),
    (
        Dimension::MotivationClarity,
        &[
            "The motivation for studying {t} is not made explicit early on.",
            "The problem that {t} addresses deserves a sharper statement.",
        ],
    ),
    (
        Dimension::WritingFluency,
        &[
            "The writing in the method section is hard to follow.",
            "Several passages would gain readability from careful editing.",
        ],
    ),
];

/// Call counters and concurrency instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MockStats {
    pub chat_calls: usize,
    pub embed_calls: usize,
    pub failures_injected: usize,
    pub max_in_flight: usize,
}

/// Offline client with keyword-rule replies. Equal seeds give identical
/// behavior; nothing touches the network.
pub struct MockClient {
    seed: u64,
    embed_dim: usize,
    script: Mutex<VecDeque<String>>,
    fail_first: AtomicUsize,
    latency: Duration,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    failures: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub fn mock_client(seed: u64) -> MockClient {
    MockClient::new(seed)
}

impl MockClient {
    pub fn new(seed: u64) -> Self {
        MockClient {
            seed,
            embed_dim: 64,
            script: Mutex::new(VecDeque::new()),
            fail_first: AtomicUsize::new(0),
            latency: Duration::ZERO,
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    /// Chat replies returned verbatim, in order, before any rule applies.
    pub fn with_script<I: IntoIterator<Item = String>>(self, replies: I) -> Self {
        self.script.lock().expect("unpoisoned").extend(replies);
        self
    }

    /// The first `n` requests fail with a retryable transport error.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    /// Simulated per-request latency, useful for observing concurrency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn stats(&self) -> MockStats {
        MockStats {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            failures_injected: self.failures.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    pub fn total_requests(&self) -> usize {
        let s = self.stats();
        s.chat_calls + s.embed_calls
    }

    fn enter(&self) -> Result<InFlight<'_>, EndpointError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let guard = InFlight(&self.in_flight);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let injected = self
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if injected {
            self.failures.fetch_add(1, Ordering::SeqCst);
            return Err(EndpointError::Transport("injected failure".into()));
        }
        Ok(guard)
    }

    fn rng(&self, parts: &[&str]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn review(&self, title: &str, k: &str) -> String {
        let mut rng = self.rng(&["review", title, k]);
        let topic = topic_of(title);
        let rating = rng.random_range(3..=8);
        let n = rng.random_range(2..=3);
        let mut lines = vec![format!("Overall rating: {rating}")];
        for _ in 0..n {
            let (_, variants) = POINTS.choose(&mut rng).expect("non-empty");
            let line = format!(
                "- {}",
                variants.choose(&mut rng).expect("non-empty").replace("{t}", &topic)
            );
            if !lines.contains(&line) {
                lines.push(line);
            }
        }
        lines.join("\n")
    }

    fn rebuttal(&self, title: &str, prompt: &str) -> String {
        let mut out = vec!["We thank the reviewers for their feedback.".to_string()];
        for (k, points) in reviewer_points(prompt, "### Reviewer ") {
            for (i, _) in points.iter().enumerate() {
                let idx = (i + 1).to_string();
                let mut rng = self.rng(&["stance", title, &k, &idx]);
                let (phrase, _) = STANCES.choose(&mut rng).expect("non-empty");
                out.push(format!(
                    "[Reviewer {k}] {phrase} with point {idx} of reviewer {k} and will revise the paper accordingly."
                ));
            }
        }
        out.join("\n")
    }

    fn followup(&self, title: &str, k: &str) -> String {
        let mut rng = self.rng(&["followup", title, k]);
        if rng.random_bool(0.5) {
            "Thank you for the rebuttal. My concerns are partly resolved and I keep my rating.".into()
        } else {
            "Thank you for the rebuttal. The answers address my main concerns and I raise my rating.".into()
        }
    }

    fn meta(&self, title: &str) -> String {
        let mut rng = self.rng(&["meta", title]);
        format!(
            "Score: {}\nSummary: The discussion weighed the reviews and the rebuttal in full.",
            rng.random_range(3..=8)
        )
    }

    fn extraction(&self, input: &str) -> String {
        let reviews = reviewer_points(section(input, "### Initial Review Comments:"), "## Reviewer ");
        let responses = section(input, "### Author's Responses:");
        let mut rar = Vec::new();
        for (k, points) in &reviews {
            let tag = format!("[Reviewer {k}] ");
            let replies: Vec<&str> = responses.lines().filter_map(|l| l.trim().strip_prefix(&tag)).collect();
            for (point, reply) in points.iter().zip(replies) {
                let label = STANCES
                    .iter()
                    .find(|(p, _)| reply.starts_with(p))
                    .map_or(RelationKind::Neutral, |(_, r)| *r);
                rar.push(format!(
                    "(Reviewer {k}: `{point}', Author: `{reply}', {})",
                    crate::synthetic::label_text(label)
                ));
            }
        }
        let mut irr = Vec::new();
        for w in 0..reviews.len() {
            let (ka, pa) = &reviews[w];
            let (kb, pb) = &reviews[(w + 1) % reviews.len()];
            if ka == kb {
                continue;
            }
            if let (Some(a), Some(b)) = (pa.first(), pb.first()) {
                let label = if mock_dimension(a) == mock_dimension(b) {
                    RelationKind::Agree
                } else if (w % 2) == 0 {
                    RelationKind::Complement
                } else {
                    RelationKind::Independent
                };
                irr.push(format!(
                    "(Reviewer {ka}: `{a}', Reviewer {kb}: `{b}', {})",
                    crate::synthetic::label_text(label)
                ));
            }
        }
        let mut obj = serde_json::Map::new();
        obj.insert(REVIEWER_AUTHOR_KEY.into(), rar.into());
        obj.insert(INTER_REVIEWER_KEY.into(), irr.into());
        format!(
            "Here are the extracted relations.\n{}",
            serde_json::to_string_pretty(&obj).expect("json serializes")
        )
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn topic_of(title: &str) -> String {
    let words: Vec<&str> = title.split_whitespace().take(4).collect();
    let t = words.join(" ").to_lowercase();
    let t = t.trim_end_matches(|c: char| !c.is_alphanumeric()).to_string();
    if t.is_empty() {
        "this work".into()
    } else {
        t
    }
}

/// Text after `header` up to the next `### ` line.
fn section<'a>(text: &'a str, header: &str) -> &'a str {
    let Some(start) = text.find(header) else { return "" };
    let rest = &text[start + header.len()..];
    match rest.find("\n### ") {
        Some(end) => &rest[..end],
        None => rest,
    }
}

/// `(reviewer number, "- " lines)` for every block opened by `marker`.
fn reviewer_points(text: &str, marker: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(marker) {
            out.push((rest.trim_end_matches(':').trim().to_string(), Vec::new()));
        } else if let (Some(point), Some(last)) = (line.strip_prefix("- "), out.last_mut()) {
            last.1.push(point.trim().to_string());
        }
    }
    out
}

fn title_of(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .find(|m| m.role == ChatRole::User && m.content.contains("\n\n") && !m.content.starts_with("Role:"))
        .and_then(|m| m.content.lines().next())
        .unwrap_or("")
        .to_string()
}

fn reviewer_number(prompt: &str) -> String {
    prompt
        .strip_prefix("Role: reviewer ")
        .and_then(|r| r.split('.').next())
        .unwrap_or("1")
        .to_string()
}

impl LlmClient for MockClient {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let _guard = self.enter()?;
        if let Some(reply) = self.script.lock().expect("unpoisoned").pop_front() {
            return Ok(reply);
        }
        let last = messages.last().map_or("", |m| m.content.as_str());
        let title = title_of(messages);
        let reply = if let Some(comment) = last.strip_prefix("Comment to classify:") {
            format!(
                "{{\"category\": \"{}\"}}",
                mock_dimension(comment.trim()).display_name()
            )
        } else if let Some(input) = messages
            .iter()
            .find(|m| m.content.starts_with("### Initial Review Comments:"))
        {
            self.extraction(&input.content)
        } else if last.starts_with("Role: reviewer ") && last.contains("## Rebuttal") {
            self.followup(&title, &reviewer_number(last))
        } else if last.starts_with("Role: reviewer ") {
            self.review(&title, &reviewer_number(last))
        } else if last.starts_with("Role: author.") {
            self.rebuttal(&title, last)
        } else if last.starts_with("Role: area chair.") {
            self.meta(&title)
        } else {
            "Acknowledged.".to_string()
        };
        Ok(reply)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        let _guard = self.enter()?;
        Ok(hash_unit_vector(text, self.embed_dim, self.seed))
    }
}
