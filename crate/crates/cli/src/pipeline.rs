//! Per-paper stages that produce files: simulation, extraction,
//! classification, embedding, graph building and synthetic data.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use reviewgraph_core::extraction::{
    build_graph, parse_triple_batch, read_dimension_lines, write_dimension_lines, BuildOptions, TripleBatch,
};
use reviewgraph_core::graph::{validate_graph, AblationMode};
use reviewgraph_core::orchestration::{
    classify_dimensions, embed_texts, extract_triples, graph_texts, simulate_debate, ChatMessage, EmbeddingCache,
    EndpointError, HttpClient, LlmClient, MockClient, OrchestrationError, PaperInput, RetryingClient, Transcript,
};
use reviewgraph_core::parallel::{effective_jobs, map_indexed};
use reviewgraph_core::synthetic::{generate_papers, SyntheticConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{Artifact, ArtifactPaths, Manifest, ManifestRecord, Split};
use crate::{CliError, Context, SynthesizeArgs};

/// Forwards to the configured client and counts requests.
struct Counting {
    inner: Box<dyn LlmClient>,
    calls: AtomicUsize,
}

impl LlmClient for Counting {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(messages)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

impl Counting {
    fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn make_client(ctx: &Context) -> Result<Counting, CliError> {
    let inner: Box<dyn LlmClient> = match &ctx.config.endpoint {
        None => Box::new(MockClient::new(ctx.seed).with_embed_dim(ctx.config.model.input_dim)),
        Some(ep) => {
            let http = HttpClient::from_env(ep.clone()).map_err(|e| CliError::Endpoint(e.to_string()))?;
            Box::new(RetryingClient::new(http, ep.backoff()))
        }
    };
    Ok(Counting {
        inner,
        calls: AtomicUsize::new(0),
    })
}

fn stage_jobs(ctx: &Context) -> usize {
    let cap = ctx.config.endpoint.as_ref().map_or(usize::MAX, |e| e.max_concurrency);
    effective_jobs(ctx.jobs).min(cap)
}

fn orchestration_error(id: &str, e: OrchestrationError) -> CliError {
    match e {
        OrchestrationError::Endpoint(_) | OrchestrationError::EmptyCompletion(_) => {
            CliError::Endpoint(format!("{id}: {e}"))
        }
        other => CliError::Data(format!("{id}: {other}")),
    }
}

/// Folds per-paper failures into one error; endpoint problems win.
fn combine(failures: Vec<CliError>) -> Result<(), CliError> {
    let Some(first) = failures.first() else {
        return Ok(());
    };
    let endpoint = failures.iter().any(|e| matches!(e, CliError::Endpoint(_)));
    let text = failures
        .iter()
        .map(|e| match e {
            CliError::Usage(m)
            | CliError::Endpoint(m)
            | CliError::Data(m)
            | CliError::Numeric(m)
            | CliError::GradCheck(m) => m.as_str(),
        })
        .collect::<Vec<_>>()
        .join("; ");
    Err(if endpoint {
        CliError::Endpoint(text)
    } else {
        match first {
            CliError::Usage(_) => CliError::Usage(text),
            CliError::Numeric(_) => CliError::Numeric(text),
            CliError::GradCheck(_) => CliError::GradCheck(text),
            _ => CliError::Data(text),
        }
    })
}

pub(crate) fn read_input(path: &Path, id: &str, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{id}: cannot read {what} {}: {e}", path.display())))
}

pub(crate) fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn pending<'m>(ctx: &Context, manifest: &'m Manifest, output: Artifact) -> (Vec<&'m ManifestRecord>, usize) {
    let (todo, done): (Vec<_>, Vec<_>) = manifest
        .records
        .iter()
        .partition(|r| ctx.force || !manifest.path(r, output).exists());
    (todo, done.len())
}

/// Runs `f` over papers whose output is missing and writes results in
/// manifest order. Successful outputs are kept even when others fail.
fn run_stage<F>(
    manifest: &Manifest,
    todo: &[&ManifestRecord],
    output: Artifact,
    jobs: usize,
    f: F,
) -> Result<usize, CliError>
where
    F: Fn(&ManifestRecord) -> Result<String, CliError> + Sync,
{
    let results = map_indexed(todo, jobs, |_, rec| f(rec));
    let mut written = 0;
    let mut failures = Vec::new();
    for (rec, r) in todo.iter().zip(results) {
        match r.and_then(|text| write_output(&manifest.path(rec, output), &text)) {
            Ok(()) => written += 1,
            Err(e) => failures.push(e),
        }
    }
    combine(failures)?;
    Ok(written)
}

fn report(command: &str, written: usize, skipped: usize, requests: usize) {
    println!(
        "{}",
        json!({"command": command, "written": written, "skipped": skipped, "requests": requests})
    );
}

fn read_paper(manifest: &Manifest, rec: &ManifestRecord) -> Result<PaperInput, CliError> {
    let path = manifest.path(rec, Artifact::Paper);
    let text = read_input(&path, &rec.paper_id, "paper")?;
    let mut paper: PaperInput = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: invalid paper file {}: {e}", rec.paper_id, path.display())))?;
    paper.paper_id = rec.paper_id.clone();
    Ok(paper)
}

fn paper_title(manifest: &Manifest, rec: &ManifestRecord) -> Result<String, CliError> {
    match &rec.title {
        Some(t) => Ok(t.clone()),
        None => read_paper(manifest, rec).map(|p| p.title),
    }
}

pub(crate) fn read_triples(manifest: &Manifest, rec: &ManifestRecord) -> Result<TripleBatch, CliError> {
    let path = manifest.path(rec, Artifact::Triples);
    let text = read_input(&path, &rec.paper_id, "triples")?;
    parse_triple_batch(text.as_bytes(), &rec.paper_id)
        .map_err(|e| CliError::Data(format!("{}: malformed triples {}: {e}", rec.paper_id, path.display())))
}

pub fn simulate(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let (todo, skipped) = pending(ctx, manifest, Artifact::Transcript);
    if todo.is_empty() {
        report("simulate", 0, skipped, 0);
        return Ok(());
    }
    let papers: HashMap<&str, PaperInput> = todo
        .iter()
        .map(|r| read_paper(manifest, r).map(|p| (r.paper_id.as_str(), p)))
        .collect::<Result<_, _>>()?;
    let client = make_client(ctx)?;
    let prompts = &ctx.config.prompts;
    let written = run_stage(manifest, &todo, Artifact::Transcript, stage_jobs(ctx), |rec| {
        simulate_debate(&papers[rec.paper_id.as_str()], &client, prompts)
            .map(|t| t.to_json())
            .map_err(|e| orchestration_error(&rec.paper_id, e))
    });
    report("simulate", *written.as_ref().unwrap_or(&0), skipped, client.count());
    written.map(drop)
}

pub fn extract(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let (todo, skipped) = pending(ctx, manifest, Artifact::Triples);
    if todo.is_empty() {
        report("extract", 0, skipped, 0);
        return Ok(());
    }
    let client = make_client(ctx)?;
    let prompts = &ctx.config.prompts;
    let written = run_stage(manifest, &todo, Artifact::Triples, stage_jobs(ctx), |rec| {
        let path = manifest.path(rec, Artifact::Transcript);
        let transcript: Transcript = serde_json::from_str(&read_input(&path, &rec.paper_id, "transcript")?)
            .map_err(|e| CliError::Data(format!("{}: invalid transcript {}: {e}", rec.paper_id, path.display())))?;
        extract_triples(&transcript, &client, prompts)
            .map(|b| b.to_reply_json() + "\n")
            .map_err(|e| orchestration_error(&rec.paper_id, e))
    });
    report("extract", *written.as_ref().unwrap_or(&0), skipped, client.count());
    written.map(drop)
}

pub fn classify(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let (todo, skipped) = pending(ctx, manifest, Artifact::Dims);
    if todo.is_empty() {
        report("classify", 0, skipped, 0);
        return Ok(());
    }
    let client = make_client(ctx)?;
    let prompts = &ctx.config.prompts;
    let written = run_stage(manifest, &todo, Artifact::Dims, stage_jobs(ctx), |rec| {
        let batch = read_triples(manifest, rec)?;
        classify_dimensions(&batch, &client, prompts, 1)
            .map(|dims| write_dimension_lines(&dims))
            .map_err(|e| orchestration_error(&rec.paper_id, e))
    });
    report("classify", *written.as_ref().unwrap_or(&0), skipped, client.count());
    written.map(drop)
}

/// One line of a per-paper embeddings file.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EmbeddingLine {
    pub text: String,
    pub vector: Vec<f64>,
}

pub(crate) fn embeddings_jsonl(texts: &[String], vectors: &[Vec<f64>]) -> String {
    let mut seen = HashSet::new();
    let mut out = String::new();
    for (text, vector) in texts.iter().zip(vectors) {
        if seen.insert(text.as_str()) {
            let line = EmbeddingLine {
                text: text.clone(),
                vector: vector.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("line serializes"));
            out.push('\n');
        }
    }
    out
}

pub(crate) fn read_embeddings(path: &Path, id: &str) -> Result<HashMap<String, Vec<f64>>, CliError> {
    let text = read_input(path, id, "embeddings")?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<EmbeddingLine>(l)
                .map(|e| (e.text, e.vector))
                .map_err(|e| CliError::Data(format!("{id}: invalid embeddings line in {}: {e}", path.display())))
        })
        .collect()
}

/// Papers run one after another so they share the cache; requests within a
/// paper fan out.
pub fn embed(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let (todo, skipped) = pending(ctx, manifest, Artifact::Embeddings);
    if todo.is_empty() {
        report("embed", 0, skipped, 0);
        return Ok(());
    }
    let client = make_client(ctx)?;
    let cache_path = ctx
        .config
        .paths
        .embedding_cache
        .clone()
        .unwrap_or_else(|| manifest.work_dir.join("embedding_cache.jsonl"));
    if let Some(dir) = cache_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut cache = EmbeddingCache::open(&cache_path).map_err(|e| CliError::Data(e.to_string()))?;
    let jobs = stage_jobs(ctx);
    let mut written = 0;
    let mut failures = Vec::new();
    for rec in &todo {
        let result = (|| {
            let texts = graph_texts(&paper_title(manifest, rec)?, &read_triples(manifest, rec)?);
            let vectors =
                embed_texts(&texts, &client, &mut cache, jobs).map_err(|e| orchestration_error(&rec.paper_id, e))?;
            write_output(
                &manifest.path(rec, Artifact::Embeddings),
                &embeddings_jsonl(&texts, &vectors),
            )
        })();
        match result {
            Ok(()) => written += 1,
            Err(e) => failures.push(e),
        }
    }
    report("embed", written, skipped, client.count());
    combine(failures)
}

pub fn build_graphs(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let (todo, skipped) = pending(ctx, manifest, Artifact::Graph);
    let options = |rec: &ManifestRecord| BuildOptions {
        inverse_edges: ctx.config.model.use_inverse_edges,
        label: Some(rec.label),
        ablation: ctx.config.ablation,
    };
    let written = run_stage(manifest, &todo, Artifact::Graph, effective_jobs(ctx.jobs), |rec| {
        let title = paper_title(manifest, rec)?;
        let batch = read_triples(manifest, rec)?;
        let dims_path = manifest.path(rec, Artifact::Dims);
        let dims = read_dimension_lines(&read_input(&dims_path, &rec.paper_id, "dimensions")?).map_err(|e| {
            CliError::Data(format!(
                "{}: invalid dimensions {}: {e}",
                rec.paper_id,
                dims_path.display()
            ))
        })?;
        let graph = build_graph(&title, &batch, &dims, options(rec))
            .map_err(|e| CliError::Data(format!("{}: {e}", rec.paper_id)))?;
        let report = validate_graph(&graph);
        if !report.ok {
            return Err(CliError::Data(format!(
                "{}: invalid graph: {}",
                rec.paper_id,
                report.messages().join(", ")
            )));
        }
        Ok(graph.to_json())
    });
    report("build-graph", *written.as_ref().unwrap_or(&0), skipped, 0);
    written.map(drop)
}

pub fn synthesize(ctx: &Context, args: &SynthesizeArgs) -> Result<(), CliError> {
    let manifest_path = args.out.join("manifest.jsonl");
    let n = args.train + args.val + args.test;
    if manifest_path.exists() && !ctx.force {
        println!("{}", json!({"command": "synthesize", "papers": 0, "skipped": true}));
        return Ok(());
    }
    let cfg = SyntheticConfig {
        seed: ctx.seed,
        embed_dim: args.embed_dim,
        ..SyntheticConfig::default()
    };
    let embedder = cfg.embedder();
    let mut records = Vec::with_capacity(n);
    for (i, paper) in generate_papers(n, &cfg).iter().enumerate() {
        let split = if i < args.train {
            Split::Train
        } else if i < args.train + args.val {
            Split::Val
        } else {
            Split::Test
        };
        let id = &paper.paper_id;
        let paths = ArtifactPaths {
            triples: Some(format!("triples/{id}.json").into()),
            dims: Some(format!("dims/{id}.jsonl").into()),
            embeddings: Some(format!("embeddings/{id}.jsonl").into()),
            ..ArtifactPaths::default()
        };
        let texts: Vec<String> = paper
            .graph(AblationMode::Full)
            .nodes()
            .iter()
            .map(|n| n.text.clone())
            .collect();
        let vectors: Vec<Vec<f64>> = texts.iter().map(|t| embedder.embed(t)).collect();
        write_output(
            &args.out.join(paths.triples.as_ref().expect("set")),
            &(paper.batch.to_reply_json() + "\n"),
        )?;
        write_output(
            &args.out.join(paths.dims.as_ref().expect("set")),
            &write_dimension_lines(&paper.dims),
        )?;
        write_output(
            &args.out.join(paths.embeddings.as_ref().expect("set")),
            &embeddings_jsonl(&texts, &vectors),
        )?;
        records.push(ManifestRecord {
            paper_id: id.clone(),
            split,
            label: paper.label,
            title: Some(paper.title.clone()),
            paths,
        });
    }
    write_output(&manifest_path, &Manifest::to_jsonl(&records))?;
    println!(
        "{}",
        json!({"command": "synthesize", "papers": n, "manifest": manifest_path.display().to_string()})
    );
    Ok(())
}
