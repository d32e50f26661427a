//! Training, evaluation, ablation and gradient-check commands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use reviewgraph_core::graph::{apply_ablation, AblationMode, DebateGraph};
use reviewgraph_core::hgt::{gradcheck_config, init_params, model_grad_check, ModelConfig, ModelError};
use reviewgraph_core::numerics::Tensor;
use reviewgraph_core::parallel::map_indexed;
use reviewgraph_core::synthetic::{random_embeddings, random_graph_with_nodes};
use reviewgraph_core::training::{
    evaluate as score, evaluate_samples, history_jsonl, load_checkpoint, predict_labels, save_checkpoint,
    train_with_progress, welch_t_test, EvalReport, Sample, TrainingError, WelchResult,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::{Artifact, Manifest, ManifestRecord, Split};
use crate::pipeline::{read_embeddings, read_input, write_output};
use crate::{CliError, Context, EvalArgs, GradcheckArgs};

fn training_error(e: TrainingError) -> CliError {
    match e {
        TrainingError::NonFiniteLoss { .. } | TrainingError::NonFiniteGradient(_) => CliError::Numeric(e.to_string()),
        TrainingError::InvalidConfig(_) | TrainingError::EmptySplit(_) => CliError::Usage(e.to_string()),
        TrainingError::Model(ModelError::InvalidConfig(_)) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Graph file plus embeddings, with `ablation` applied on load. Rows of the
/// embedding matrix follow node ids and are looked up by node text.
fn load_sample(manifest: &Manifest, rec: &ManifestRecord, ablation: AblationMode) -> Result<Sample, CliError> {
    let id = &rec.paper_id;
    let graph_path = manifest.path(rec, Artifact::Graph);
    let graph = DebateGraph::from_json(&read_input(&graph_path, id, "graph")?)
        .map_err(|e| CliError::Data(format!("{id}: invalid graph {}: {e}", graph_path.display())))?
        .with_label(Some(rec.label));
    let graph = apply_ablation(&graph, ablation)
        .map_err(|e| CliError::Data(format!("{id}: {e}")))?
        .graph;
    let vectors = read_embeddings(&manifest.path(rec, Artifact::Embeddings), id)?;
    let mut data = Vec::new();
    let mut width = None;
    for node in graph.nodes() {
        let v = vectors
            .get(&node.text)
            .ok_or_else(|| CliError::Data(format!("{id}: no embedding for node {} ({:?})", node.id, node.text)))?;
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(CliError::Data(format!("{id}: embedding widths differ")));
        }
        data.extend_from_slice(v);
    }
    let embeddings = Tensor::matrix(graph.num_nodes(), width.unwrap_or(0), data)
        .map_err(|e| CliError::Data(format!("{id}: {e}")))?;
    Ok(Sample { graph, embeddings })
}

fn load_split(
    ctx: &Context,
    manifest: &Manifest,
    recs: &[&ManifestRecord],
    ablation: AblationMode,
) -> Result<Vec<Sample>, CliError> {
    let results = map_indexed(recs, ctx.jobs, |_, rec| load_sample(manifest, rec, ablation));
    let mut samples = Vec::with_capacity(recs.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if failures.is_empty() {
        Ok(samples)
    } else {
        Err(CliError::Data(failures.join("; ")))
    }
}

fn input_width(sets: &[&[Sample]]) -> Result<usize, CliError> {
    let mut widths = sets
        .iter()
        .flat_map(|s| s.iter())
        .map(|s| (s.graph.graph_id(), s.embeddings.cols()));
    let Some((_, w)) = widths.next() else {
        return Err(CliError::Usage("no samples".into()));
    };
    match widths.find(|(_, x)| *x != w) {
        Some((id, x)) => Err(CliError::Data(format!("{id}: embedding width {x} differs from {w}"))),
        None => Ok(w),
    }
}

fn required_split(manifest: &Manifest, split: Split) -> Result<Vec<&ManifestRecord>, CliError> {
    let recs = manifest.split(split);
    if recs.is_empty() {
        return Err(CliError::Usage(format!("manifest has no {split} records")));
    }
    Ok(recs)
}

fn model_for(ctx: &Context, ablation: AblationMode, input_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        homogeneous: ablation == AblationMode::Homogeneous,
        ..ctx.config.model.clone()
    }
}

struct Trained {
    summary: Value,
    report_on: Option<EvalReport>,
}

/// Trains one model and writes checkpoint, history and summary to `dir`.
fn train_into(
    ctx: &Context,
    dir: &Path,
    stem: &str,
    train: &[Sample],
    val: &[Sample],
    eval: Option<&[Sample]>,
    ablation: AblationMode,
) -> Result<Trained, CliError> {
    let model = model_for(ctx, ablation, input_width(&[train, val])?);
    let outcome = train_with_progress(train, val, &model, &ctx.config.train, |r| {
        eprintln!(
            "[{}] epoch {:>3} loss {:.5} val_f1 {:.4}{}",
            ablation,
            r.epoch,
            r.train_loss,
            r.val.macro_f1,
            if r.improved { " *" } else { "" }
        );
    })
    .map_err(training_error)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    save_checkpoint(&outcome.checkpoint, &dir.join(format!("{stem}checkpoint.rvgc"))).map_err(training_error)?;
    write_output(
        &dir.join(format!("{stem}history.jsonl")),
        &history_jsonl(&outcome.history),
    )?;
    let params = outcome
        .checkpoint
        .hgt_params()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let train_report = evaluate_samples(train, &params, ctx.jobs).map_err(training_error)?;
    let report_on = eval
        .map(|s| evaluate_samples(s, &params, ctx.jobs))
        .transpose()
        .map_err(training_error)?;
    let summary = json!({
        "ablation": ablation.as_str(),
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.checkpoint.epoch,
        "best_val_f1": outcome.checkpoint.best_val_f1,
        "train_accuracy": train_report.accuracy,
    });
    Ok(Trained { summary, report_on })
}

pub fn train(ctx: &Context, manifest: &Manifest, out: Option<PathBuf>) -> Result<(), CliError> {
    let dir = out.unwrap_or_else(|| manifest.stage_dir("train"));
    let summary_path = dir.join("summary.json");
    if !ctx.force && summary_path.exists() && dir.join("checkpoint.rvgc").exists() {
        print!("{}", read_input(&summary_path, "train", "summary")?);
        return Ok(());
    }
    let train_recs = required_split(manifest, Split::Train)?;
    let val_recs = required_split(manifest, Split::Val)?;
    let ablation = ctx.config.ablation;
    let train = load_split(ctx, manifest, &train_recs, ablation)?;
    let val = load_split(ctx, manifest, &val_recs, ablation)?;
    let trained = train_into(ctx, &dir, "", &train, &val, None, ablation)?;
    let text = trained.summary.to_string() + "\n";
    write_output(&summary_path, &text)?;
    print!("{text}");
    Ok(())
}

/// Stdout line of `evaluate`, fields in table column order.
#[derive(Serialize)]
struct Metrics {
    acc: f64,
    p: f64,
    r: f64,
    f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    welch: Option<WelchResult>,
}

pub fn evaluate(ctx: &Context, manifest: &Manifest, args: &EvalArgs) -> Result<(), CliError> {
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| manifest.stage_dir("train").join("checkpoint.rvgc"));
    let checkpoint =
        load_checkpoint(&ckpt_path).map_err(|e| CliError::Data(format!("checkpoint {}: {e}", ckpt_path.display())))?;
    let params = checkpoint.hgt_params().map_err(|e| CliError::Data(e.to_string()))?;
    let ablation = if params.config.homogeneous {
        AblationMode::Homogeneous
    } else if ctx.config.ablation == AblationMode::Homogeneous {
        return Err(CliError::Usage(
            "checkpoint was not trained on homogeneous graphs".into(),
        ));
    } else {
        ctx.config.ablation
    };
    let recs = required_split(manifest, args.split)?;
    let samples = load_split(ctx, manifest, &recs, ablation)?;
    let preds = predict_labels(&samples, &params, ctx.jobs).map_err(|e| CliError::Data(e.to_string()))?;
    let golds: Vec<usize> = recs.iter().map(|r| r.label.class_index()).collect();
    let report = score(&preds, &golds).map_err(training_error)?;

    let mut stdout = Metrics {
        acc: report.accuracy,
        p: report.macro_precision,
        r: report.macro_recall,
        f1: report.macro_f1,
        welch: None,
    };
    let mut file = json!({
        "split": args.split.to_string(),
        "report": report,
        "predictions": recs.iter().zip(&preds).map(|(r, p)| json!({"paper_id": r.paper_id, "gold": r.label.class_index(), "pred": p})).collect::<Vec<_>>(),
    });
    if let Some(path) = &args.compare {
        let other: HashMap<String, f64> = serde_json::from_str(&read_input(path, "compare", "scores")?)
            .map_err(|e| CliError::Data(format!("invalid compare file {}: {e}", path.display())))?;
        let mut ours = Vec::with_capacity(recs.len());
        let mut theirs = Vec::with_capacity(recs.len());
        for ((r, p), g) in recs.iter().zip(&preds).zip(&golds) {
            let s = other
                .get(&r.paper_id)
                .ok_or_else(|| CliError::Data(format!("{}: missing from compare file", r.paper_id)))?;
            ours.push(if p == g { 1.0 } else { 0.0 });
            theirs.push(*s);
        }
        let welch = welch_t_test(&ours, &theirs).map_err(|e| CliError::Data(e.to_string()))?;
        stdout.welch = Some(welch);
        file["welch"] = json!(welch);
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| manifest.stage_dir("eval").join(format!("{}.json", args.split)));
    write_output(
        &out,
        &(serde_json::to_string_pretty(&file).expect("report serializes") + "\n"),
    )?;
    println!("{}", serde_json::to_string(&stdout).expect("metrics serialize"));
    Ok(())
}

fn setting_name(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::Full => "Full",
        AblationMode::NoTitle => "w/o Title",
        AblationMode::NoEval => "w/o Eval",
        AblationMode::NoRar => "w/o RAR",
        AblationMode::NoIrr => "w/o IRR",
        AblationMode::Homogeneous => "w/o Hetero",
    }
}

fn pct(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

pub fn ablate(ctx: &Context, manifest: &Manifest, out: Option<PathBuf>) -> Result<(), CliError> {
    let dir = out.unwrap_or_else(|| manifest.stage_dir("ablate"));
    let md_path = dir.join("ablation.md");
    if !ctx.force && md_path.exists() && dir.join("ablation.json").exists() {
        print!("{}", read_input(&md_path, "ablate", "table")?);
        return Ok(());
    }
    let train_recs = required_split(manifest, Split::Train)?;
    let val_recs = required_split(manifest, Split::Val)?;
    let test_recs = manifest.split(Split::Test);
    let (eval_recs, eval_split) = if test_recs.is_empty() {
        (val_recs.clone(), Split::Val)
    } else {
        (test_recs, Split::Test)
    };

    let mut rows = Vec::new();
    let mut md = format!(
        "Evaluated on the {eval_split} split; metrics x100.\n\n| Setting | Acc | P | R | F1 |\n|---|---:|---:|---:|---:|\n"
    );
    for mode in AblationMode::ALL {
        let train = load_split(ctx, manifest, &train_recs, mode)?;
        let val = load_split(ctx, manifest, &val_recs, mode)?;
        let eval = load_split(ctx, manifest, &eval_recs, mode)?;
        let trained = train_into(
            ctx,
            &dir,
            &format!("{}_", mode.as_str()),
            &train,
            &val,
            Some(&eval),
            mode,
        )?;
        let r = trained.report_on.expect("eval split given");
        md.push_str(&format!(
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
            setting_name(mode),
            pct(r.accuracy),
            pct(r.macro_precision),
            pct(r.macro_recall),
            pct(r.macro_f1)
        ));
        rows.push(json!({
            "mode": mode.as_str(),
            "setting": setting_name(mode),
            "acc": pct(r.accuracy),
            "p": pct(r.macro_precision),
            "r": pct(r.macro_recall),
            "f1": pct(r.macro_f1),
            "training": trained.summary,
        }));
    }
    let table = json!({"eval_split": eval_split.to_string(), "rows": rows});
    write_output(
        &dir.join("ablation.json"),
        &(serde_json::to_string_pretty(&table).expect("table serializes") + "\n"),
    )?;
    write_output(&md_path, &md)?;
    print!("{md}");
    Ok(())
}

pub fn gradcheck(ctx: &Context, args: &GradcheckArgs) -> Result<(), CliError> {
    if args.nodes < 7 {
        return Err(CliError::Usage("gradcheck needs at least 7 nodes".into()));
    }
    if args.eps.is_nan() || args.eps <= 0.0 {
        return Err(CliError::Usage("eps must be positive".into()));
    }
    let cfg = ModelConfig {
        seed: ctx.seed,
        ..gradcheck_config()
    };
    let graph = random_graph_with_nodes(ctx.seed, args.nodes, AblationMode::Full);
    let params = init_params(&cfg, ctx.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let emb = random_embeddings(graph.num_nodes(), cfg.input_dim, ctx.seed.wrapping_add(1));
    let started = std::time::Instant::now();
    let report = model_grad_check(&graph, &emb, &params, args.eps, args.corrupt_backward)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let passed = report.max_rel_error < args.tolerance;
    println!(
        "{}",
        json!({
            "max_rel_error": report.max_rel_error,
            "worst_param": report.worst_param,
            "worst_index": report.worst_index,
            "checked": report.checked,
            "tolerance": args.tolerance,
            "passed": passed,
        })
    );
    eprintln!("gradcheck took {:.2}s", started.elapsed().as_secs_f64());
    if passed {
        Ok(())
    } else {
        Err(CliError::GradCheck(format!(
            "max relative error {:.3e} in {}[{}]",
            report.max_rel_error, report.worst_param, report.worst_index
        )))
    }
}
