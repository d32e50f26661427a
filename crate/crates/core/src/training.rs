//! Optimization, early stopping, metrics, significance testing and
//! checkpoint persistence.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DebateGraph;
use crate::hgt::{self, argmax, HgtParams, ModelConfig, ModelError};
use crate::numerics::{Gradients, ParamStore, Tape, Tensor};
use crate::parallel::map_indexed;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (graph {graph_id})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        graph_id: String,
    },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("predictions and golds differ in length ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("cannot evaluate zero samples")]
    NoSamples,
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Worker threads for per-graph gradients and validation; 0 = all cores.
    /// Per-graph results are summed in batch order, so the value never
    /// changes the outcome.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            jobs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if self.early_stop_patience > self.max_epochs {
            return bad("early_stop_patience cannot exceed max_epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }
}

// ---- Adam ------------------------------------------------------------------

/// First and second moment estimates aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect(),
            v: store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor. Parameters
/// absent from `grads` see a zero gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainingError> {
    for (id, name, _) in store.iter() {
        if let Some(g) = grads.get(id) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TrainingError::NonFiniteGradient(name.to_string()));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (id, _, tensor) in store.iter_mut() {
        if !tensor.requires_grad {
            continue;
        }
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for j in 0..tensor.data.len() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            tensor.data[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

// ---- metrics ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassCounts>,
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and macro precision/recall/F1 over `max(2, 1 + max label)`
/// classes; any 0/0 term counts as 0.
pub fn evaluate(preds: &[usize], golds: &[usize]) -> Result<EvalReport, TrainingError> {
    if preds.len() != golds.len() {
        return Err(TrainingError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(TrainingError::NoSamples);
    }
    let classes = preds.iter().chain(golds).copied().max().unwrap_or(0).max(1) + 1;
    let mut per_class = vec![ClassCounts::default(); classes];
    let mut correct = 0;
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            correct += 1;
            per_class[p].tp += 1;
        } else {
            per_class[p].fp += 1;
            per_class[g].fn_ += 1;
        }
    }
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in &per_class {
        let p = ratio(c.tp, c.tp + c.fp);
        let r = ratio(c.tp, c.tp + c.fn_);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = classes as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / preds.len() as f64,
        macro_precision: p_sum / k,
        macro_recall: r_sum / k,
        macro_f1: f_sum / k,
        per_class,
        n: preds.len(),
    })
}

// ---- Welch t-test ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, TrainingError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TrainingError::DegenerateSample("each sample needs at least two values"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(TrainingError::DegenerateSample("samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(TrainingError::DegenerateSample("both samples have zero variance"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = if t == 0.0 {
        1.0
    } else {
        regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0)
    };
    Ok(WelchResult { t, df, p })
}

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
    }
    const TINY: f64 = 1e-300;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let even = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        let odd = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        let mut delta = 1.0;
        for coeff in [even, odd] {
            d = 1.0 / guard(1.0 + coeff * d);
            c = guard(1.0 + coeff / c);
            delta = d * c;
            h *= delta;
        }
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    front * h / a
}

// ---- training loop ---------------------------------------------------------

/// A graph with its node embeddings (`N x d_emb`, node id order).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: DebateGraph,
    pub embeddings: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
    pub improved: bool,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub best_val_f1: f64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn hgt_params(&self) -> Result<HgtParams, ModelError> {
        HgtParams::from_store(self.model_config.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Argmax class per sample, fanned out over `jobs` threads.
pub fn predict_labels(samples: &[Sample], params: &HgtParams, jobs: usize) -> Result<Vec<usize>, ModelError> {
    map_indexed(samples, jobs, |_, s| {
        hgt::predict(&s.graph, &s.embeddings, params).map(|(p, _)| argmax(&p))
    })
    .into_iter()
    .collect()
}

fn gold_labels(samples: &[Sample]) -> Result<Vec<usize>, ModelError> {
    samples
        .iter()
        .map(|s| {
            s.graph
                .label()
                .map(|l| l.class_index())
                .ok_or_else(|| ModelError::MissingLabel(s.graph.graph_id().to_string()))
        })
        .collect()
}

/// Predicts every sample and scores it against the stored labels.
pub fn evaluate_samples(samples: &[Sample], params: &HgtParams, jobs: usize) -> Result<EvalReport, TrainingError> {
    let golds = gold_labels(samples)?;
    let preds = predict_labels(samples, params, jobs)?;
    evaluate(&preds, &golds)
}

fn graph_loss_and_grads(s: &Sample, params: &HgtParams) -> Result<(f64, Gradients), ModelError> {
    let mut tape = Tape::new(&params.store);
    let loss = hgt::loss_on(&mut tape, &s.graph, &s.embeddings, params)?;
    let value = tape.value(loss).data[0];
    Ok((value, tape.backward(loss)))
}

fn add_scaled(acc: &mut Gradients, g: &Gradients, scale: f64) {
    for (slot, gi) in acc.0.iter_mut().zip(&g.0) {
        let Some(gi) = gi else { continue };
        let buf = slot.get_or_insert_with(|| vec![0.0; gi.len()]);
        for (b, v) in buf.iter_mut().zip(gi) {
            *b += scale * v;
        }
    }
}

/// Mini-batch Adam with early stopping on validation macro-F1.
///
/// Training stops once `max(patience, 1)` consecutive epochs fail to beat
/// the best score; the earliest best epoch wins ties.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    train_with_progress(train_set, val_set, model_config, train_config, |_| {})
}

pub fn train_with_progress<F>(
    train_set: &[Sample],
    val_set: &[Sample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainingError>
where
    F: FnMut(&EpochRecord),
{
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(TrainingError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainingError::EmptySplit("val"));
    }
    gold_labels(train_set)?;
    gold_labels(val_set)?;

    let mut params = hgt::init_params(model_config, model_config.seed)?;
    let mut adam = AdamState::new(&params.store);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    let patience = train_config.early_stop_patience.max(1);

    for epoch in 1..=train_config.max_epochs {
        if train_config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let results = map_indexed(&batch, train_config.jobs, |_, s| graph_loss_and_grads(s, &params));
            let mut acc = Gradients(vec![None; params.store.len()]);
            let scale = 1.0 / batch.len() as f64;
            for (s, r) in batch.iter().zip(results) {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(TrainingError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        graph_id: s.graph.graph_id().to_string(),
                    });
                }
                loss_sum += loss;
                add_scaled(&mut acc, &grads, scale);
            }
            adam_step(&mut params.store, &acc, &mut adam, train_config)?;
        }
        let val = evaluate_samples(val_set, &params, train_config.jobs)?;
        let improved = best.as_ref().is_none_or(|(_, f1, _)| val.macro_f1 > *f1);
        if improved {
            best = Some((epoch, val.macro_f1, params.store.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if stale >= patience {
            break;
        }
    }

    let (epoch, best_val_f1, store) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_config: model_config.clone(),
            train_config: train_config.clone(),
            epoch,
            best_val_f1,
            params: store,
        },
        history,
    })
}

/// History as JSON lines, one epoch per line.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

// ---- checkpoint file -------------------------------------------------------

const MAGIC: &[u8; 4] = b"RVGC";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    /// Byte length in the payload.
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    best_val_f1: f64,
    tensors: Vec<TensorEntry>,
}

/// Serializes to `RVGC | u32 LE manifest length | JSON manifest | fp32 LE payload`.
pub fn checkpoint_bytes(cp: &Checkpoint) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (_, name, t) in cp.params.iter() {
        let offset = payload.len();
        for v in &t.data {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset,
            length: payload.len() - offset,
        });
    }
    let manifest = Manifest {
        format_version: cp.format_version,
        model_config: cp.model_config.clone(),
        train_config: cp.train_config.clone(),
        epoch: cp.epoch,
        best_val_f1: cp.best_val_f1,
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainingError> {
    let corrupt = |m: &str| TrainingError::CorruptPayload(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing RVGC header"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < len {
        return Err(corrupt("manifest truncated"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..len]).map_err(|e| TrainingError::CorruptPayload(e.to_string()))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(TrainingError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: manifest.format_version,
        });
    }
    let payload = &body[len..];
    let mut store = ParamStore::new();
    let mut expected_end = 0;
    for entry in &manifest.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.length != count * 4 || entry.offset != expected_end {
            return Err(corrupt(&format!("tensor {} has inconsistent extent", entry.name)));
        }
        let end = entry.offset + entry.length;
        if end > payload.len() {
            return Err(corrupt(&format!("payload truncated in tensor {}", entry.name)));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| TrainingError::CorruptPayload(e.to_string()))?
            .trainable();
        store
            .insert(entry.name.clone(), t)
            .map_err(|e| TrainingError::CorruptPayload(e.to_string()))?;
        expected_end = end;
    }
    if expected_end != payload.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    let cp = Checkpoint {
        format_version: manifest.format_version,
        model_config: manifest.model_config,
        train_config: manifest.train_config,
        epoch: manifest.epoch,
        best_val_f1: manifest.best_val_f1,
        params: store,
    };
    cp.hgt_params()?;
    Ok(cp)
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<(), TrainingError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(cp))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainingError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::scalar(v).trainable()).unwrap();
        s
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut store = single_param(0.0);
        let mut state = AdamState::new(&store);
        let grads = Gradients(vec![Some(vec![1.0])]);
        adam_step(&mut store, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert!((store.get(crate::numerics::ParamId(0)).data[0] + 1e-4).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut store = single_param(2.5);
        let mut state = AdamState::new(&store);
        let grads = Gradients(vec![Some(vec![0.0])]);
        adam_step(&mut store, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(store.get(crate::numerics::ParamId(0)).data[0], 2.5);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut store = single_param(0.0);
        let mut state = AdamState::new(&store);
        let grads = Gradients(vec![Some(vec![f64::NAN])]);
        let err = adam_step(&mut store, &grads, &mut state, &TrainConfig::default());
        assert!(matches!(err, Err(TrainingError::NonFiniteGradient(n)) if n == "theta"));
    }

    #[test]
    fn metrics_hand_case() {
        let golds = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let r = evaluate(&[0; 10], &golds).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_precision, 0.25);
        assert_eq!(r.macro_recall, 0.5);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        let perfect = evaluate(&golds, &golds).unwrap();
        assert_eq!(
            (
                perfect.accuracy,
                perfect.macro_precision,
                perfect.macro_recall,
                perfect.macro_f1
            ),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(matches!(
            evaluate(&[0], &[0, 1]),
            Err(TrainingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn welch_reference_cases() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - 0.346_593_8).abs() < 1e-6, "{}", r.p);
        let same = welch_t_test(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let cfg = ModelConfig {
            hidden_dim: 4,
            num_heads: 2,
            input_dim: 3,
            ffn_hidden: 4,
            ..ModelConfig::default()
        };
        let params = hgt::init_params(&cfg, 1).unwrap();
        let cp = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_config: cfg,
            train_config: TrainConfig::default(),
            epoch: 0,
            best_val_f1: 0.0,
            params: params.store,
        };
        let bytes = checkpoint_bytes(&cp);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3]),
            Err(TrainingError::CorruptPayload(_))
        ));
    }
}
