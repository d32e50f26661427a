//! Heterogeneous Graph Transformer over debate graphs.
//!
//! Per layer `l`, for every edge `(s, e, t)` and head `i`:
//!
//! * attention score `K_i(s) · W_attn[η(e)] · Q_i(t)ᵀ · μ[⟨ψ(s),η(e),ψ(t)⟩] / scale`,
//!   softmax-normalized over the incoming edges of `t`;
//! * message `(H[s] · M_i[ψ(s)]) · W_msg[η(e)]`;
//! * update `H'[t] = (λ[ψ(t)] · Σ attn ⊙ msg) · A[ψ(t)] + H[t]`.
//!
//! The classifier mean-pools the final representations per node type,
//! concatenates them in [`NodeType::ALL`] order and applies a two-layer
//! ReLU network with a softmax output.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{legal_meta_relations, DebateGraph, MetaRelation, NodeType, Relation};
use crate::numerics::{
    analytic_gradients, grad_check_against, GradCheckReport, NumericsError, ParamId, ParamStore, Tape, Tensor, Var,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing embedding for node {0}")]
    MissingEmbedding(usize),
    #[error("embedding width {found} does not match input_dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("graph {graph_id} uses {what}, which this model has no parameters for")]
    SchemaMismatch { graph_id: String, what: String },
    #[error("graph {0} has no label")]
    MissingLabel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    #[default]
    SqrtD,
    SqrtDh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub input_dim: usize,
    pub ffn_hidden: usize,
    pub num_classes: usize,
    pub use_inverse_edges: bool,
    pub attention_scale: AttentionScale,
    /// Single node type and single relation (the homogeneous ablation).
    pub homogeneous: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            num_heads: 4,
            num_layers: 2,
            input_dim: 64,
            ffn_hidden: 128,
            num_classes: 2,
            use_inverse_edges: true,
            attention_scale: AttentionScale::SqrtD,
            homogeneous: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad("hidden_dim must be a positive multiple of num_heads");
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.ffn_hidden == 0 || self.num_classes < 2 {
            return bad("ffn_hidden must be positive and num_classes at least 2");
        }
        Ok(())
    }

    fn scale_divisor(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::SqrtD => (self.hidden_dim as f64).sqrt(),
            AttentionScale::SqrtDh => (self.head_dim() as f64).sqrt(),
        }
    }

    /// Parameter slots for node types.
    pub fn type_slots(&self) -> Vec<String> {
        if self.homogeneous {
            vec!["node".to_string()]
        } else {
            NodeType::ALL.iter().map(|t| t.as_str().to_string()).collect()
        }
    }

    /// Relations that own their own `W_attn`/`W_msg`/`μ`.
    pub fn relations(&self) -> Vec<Relation> {
        if self.homogeneous {
            vec![Relation::CONNECTED]
        } else {
            legal_meta_relations(self.use_inverse_edges)
                .into_iter()
                .map(|m| m.relation)
                .collect()
        }
    }

    /// Meta-relations carrying a prior `μ`.
    pub fn meta_relations(&self) -> Vec<String> {
        if self.homogeneous {
            vec!["node.connected.node".to_string()]
        } else {
            legal_meta_relations(self.use_inverse_edges)
                .iter()
                .map(meta_name)
                .collect()
        }
    }
}

fn relation_name(r: Relation) -> String {
    if r.inverse {
        format!("inv_{}", r.kind.as_str())
    } else {
        r.kind.as_str().to_string()
    }
}

fn meta_name(m: &MetaRelation) -> String {
    format!(
        "{}.{}.{}",
        m.source.as_str(),
        relation_name(m.relation),
        m.target.as_str()
    )
}

/// Lookup tables from structural keys to parameter ids.
#[derive(Debug, Clone, PartialEq)]
struct ParamIndex {
    input: Vec<ParamId>,
    /// `[layer][head][type]`
    key: Vec<Vec<Vec<ParamId>>>,
    query: Vec<Vec<Vec<ParamId>>>,
    msg_proj: Vec<Vec<Vec<ParamId>>>,
    /// `[layer]` keyed by relation
    attn: Vec<HashMap<Relation, ParamId>>,
    msg: Vec<HashMap<Relation, ParamId>>,
    /// `[layer]` keyed by relation; each relation has a unique meta-relation
    prior: Vec<HashMap<Relation, ParamId>>,
    /// `[layer][type]`
    agg: Vec<Vec<ParamId>>,
    rescale: Vec<Vec<ParamId>>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// All learnable tensors plus the structural index into them.
#[derive(Debug, Clone, PartialEq)]
pub struct HgtParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    index: ParamIndex,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sizes agree").trainable()
}

/// Parameter names in creation order, with their shapes and init kind.
enum Init {
    Glorot,
    Zeros,
    One,
}

fn layout(config: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let d = config.hidden_dim;
    let dh = config.head_dim();
    let types = config.type_slots();
    let rels = config.relations();
    let metas = config.meta_relations();
    let mut out = Vec::new();
    for t in &types {
        out.push((format!("in.{t}"), config.input_dim, d, Init::Glorot));
    }
    for l in 0..config.num_layers {
        for h in 0..config.num_heads {
            for t in &types {
                out.push((format!("l{l}.h{h}.key.{t}"), d, dh, Init::Glorot));
                out.push((format!("l{l}.h{h}.query.{t}"), d, dh, Init::Glorot));
                out.push((format!("l{l}.h{h}.msg_proj.{t}"), d, dh, Init::Glorot));
            }
        }
        for r in &rels {
            out.push((format!("l{l}.attn.{}", relation_name(*r)), dh, dh, Init::Glorot));
            out.push((format!("l{l}.msg.{}", relation_name(*r)), dh, dh, Init::Glorot));
        }
        for m in &metas {
            out.push((format!("l{l}.prior.{m}"), 1, 1, Init::One));
        }
        for t in &types {
            out.push((format!("l{l}.agg.{t}"), d, d, Init::Glorot));
            out.push((format!("l{l}.rescale.{t}"), 1, 1, Init::One));
        }
    }
    out.push((
        "head.w1".into(),
        NodeType::ALL.len() * d,
        config.ffn_hidden,
        Init::Glorot,
    ));
    out.push(("head.b1".into(), 1, config.ffn_hidden, Init::Zeros));
    out.push(("head.w2".into(), config.ffn_hidden, config.num_classes, Init::Glorot));
    out.push(("head.b2".into(), 1, config.num_classes, Init::Zeros));
    out
}

/// Glorot-uniform weights, zero biases, `μ = λ = 1`; deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<HgtParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, rows, cols, init) in layout(config) {
        let t = match init {
            Init::Glorot => glorot(&mut rng, rows, cols),
            Init::Zeros => Tensor::zeros(rows, cols).trainable(),
            Init::One => Tensor::scalar(1.0).trainable(),
        };
        store.insert(name, t)?;
    }
    HgtParams::from_store(config.clone(), store)
}

impl HgtParams {
    /// Rebinds a store (e.g. loaded from a checkpoint) to its config,
    /// checking every expected tensor is present with the right shape.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<HgtParams, ModelError> {
        config.validate()?;
        for (name, rows, cols, _) in layout(&config) {
            let t = store.by_name(&name)?;
            if t.rows() != rows || t.cols() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "from_store",
                    lhs: vec![rows, cols],
                    rhs: t.shape.clone(),
                }
                .into());
            }
        }
        let types = config.type_slots();
        let rels = config.relations();
        let metas = config.meta_relations();
        let id = |n: String| store.id(&n);
        let mut index = ParamIndex {
            input: types.iter().map(|t| id(format!("in.{t}"))).collect::<Result<_, _>>()?,
            key: Vec::new(),
            query: Vec::new(),
            msg_proj: Vec::new(),
            attn: Vec::new(),
            msg: Vec::new(),
            prior: Vec::new(),
            agg: Vec::new(),
            rescale: Vec::new(),
            w1: id("head.w1".into())?,
            b1: id("head.b1".into())?,
            w2: id("head.w2".into())?,
            b2: id("head.b2".into())?,
        };
        for l in 0..config.num_layers {
            let per_head = |kind: &str| -> Result<Vec<Vec<ParamId>>, NumericsError> {
                (0..config.num_heads)
                    .map(|h| types.iter().map(|t| id(format!("l{l}.h{h}.{kind}.{t}"))).collect())
                    .collect()
            };
            index.key.push(per_head("key")?);
            index.query.push(per_head("query")?);
            index.msg_proj.push(per_head("msg_proj")?);
            let mut attn = HashMap::new();
            let mut msg = HashMap::new();
            let mut prior = HashMap::new();
            for (r, m) in rels.iter().zip(&metas) {
                attn.insert(*r, id(format!("l{l}.attn.{}", relation_name(*r)))?);
                msg.insert(*r, id(format!("l{l}.msg.{}", relation_name(*r)))?);
                prior.insert(*r, id(format!("l{l}.prior.{m}"))?);
            }
            index.attn.push(attn);
            index.msg.push(msg);
            index.prior.push(prior);
            index.agg.push(
                types
                    .iter()
                    .map(|t| id(format!("l{l}.agg.{t}")))
                    .collect::<Result<_, _>>()?,
            );
            index.rescale.push(
                types
                    .iter()
                    .map(|t| id(format!("l{l}.rescale.{t}")))
                    .collect::<Result<_, _>>()?,
            );
        }
        Ok(HgtParams { config, store, index })
    }

    /// Distinct relation matrices per layer.
    pub fn relation_count(&self) -> usize {
        self.index.attn.first().map_or(0, HashMap::len)
    }

    pub fn type_count(&self) -> usize {
        self.index.input.len()
    }
}

// ---- graph plan ------------------------------------------------------------

/// Per-graph index structures shared by every layer of a forward pass.
struct Plan {
    n: usize,
    /// Node ids per type slot.
    slot_nodes: Vec<Vec<usize>>,
    /// Inverse of concatenating `slot_nodes`: row of node `v` in that stack.
    slot_perm: Vec<usize>,
    /// Canonical edges: targets ascending, then `(source, relation ordinal)`.
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    /// Canonical edge positions grouped per relation, in parameter order.
    rel_groups: Vec<(Relation, Vec<usize>)>,
    /// Inverse of concatenating `rel_groups`.
    rel_perm: Vec<usize>,
}

impl Plan {
    fn new(graph: &DebateGraph, config: &ModelConfig) -> Result<Plan, ModelError> {
        if graph.is_homogeneous() != config.homogeneous {
            return Err(ModelError::SchemaMismatch {
                graph_id: graph.graph_id().to_string(),
                what: if graph.is_homogeneous() {
                    "a homogeneous schema".into()
                } else {
                    "typed nodes".into()
                },
            });
        }
        let n = graph.num_nodes();
        let slot_nodes: Vec<Vec<usize>> = if config.homogeneous {
            vec![(0..n).collect()]
        } else {
            NodeType::ALL.iter().map(|t| graph.nodes_of_type(*t)).collect()
        };
        let slot_perm = inverse_of_concat(&slot_nodes, n);

        let mut edge_src = Vec::new();
        let mut edge_dst = Vec::new();
        let mut edge_rel = Vec::new();
        for t in 0..n {
            for &(s, r) in graph
                .incoming(t)
                .map_err(|e| ModelError::InvalidConfig(e.to_string()))?
            {
                edge_src.push(s);
                edge_dst.push(t);
                edge_rel.push(r);
            }
        }
        let known = config.relations();
        let mut rel_groups: Vec<(Relation, Vec<usize>)> = known.iter().map(|r| (*r, Vec::new())).collect();
        for (pos, r) in edge_rel.iter().enumerate() {
            let slot = known
                .iter()
                .position(|k| k == r)
                .ok_or_else(|| ModelError::SchemaMismatch {
                    graph_id: graph.graph_id().to_string(),
                    what: format!("relation {r}"),
                })?;
            rel_groups[slot].1.push(pos);
        }
        rel_groups.retain(|(_, g)| !g.is_empty());
        let groups: Vec<Vec<usize>> = rel_groups.iter().map(|(_, g)| g.clone()).collect();
        let rel_perm = inverse_of_concat(&groups, edge_src.len());
        Ok(Plan {
            n,
            slot_nodes,
            slot_perm,
            edge_src,
            edge_dst,
            rel_groups,
            rel_perm,
        })
    }

    fn num_edges(&self) -> usize {
        self.edge_src.len()
    }
}

fn inverse_of_concat(groups: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut perm = vec![0; n];
    let mut row = 0;
    for g in groups {
        for &v in g {
            perm[v] = row;
            row += 1;
        }
    }
    perm
}

/// Applies a per-type-slot linear map to the rows of `x` and reassembles
/// them in node order. `f` receives `(tape, slot, rows_of_slot)`.
fn per_slot<F>(tape: &mut Tape<'_>, plan: &Plan, x: Var, mut f: F) -> Result<Var, ModelError>
where
    F: FnMut(&mut Tape<'_>, usize, Var) -> Result<Var, ModelError>,
{
    let mut parts = Vec::new();
    for (slot, nodes) in plan.slot_nodes.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let rows = tape.gather_rows(x, nodes)?;
        parts.push(f(tape, slot, rows)?);
    }
    let stacked = tape.concat(&parts, 0)?;
    Ok(tape.gather_rows(stacked, &plan.slot_perm)?)
}

// ---- forward pass ----------------------------------------------------------

/// Per-layer values recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `H^(0) .. H^(L)`, each `N x d`.
    pub layers: Vec<Tensor>,
    /// Canonical edge list `(source, target, relation)`.
    pub edges: Vec<(usize, usize, Relation)>,
    /// `[layer][edge][head]` attention weights.
    pub attention: Vec<Vec<Vec<f64>>>,
    /// Pooled representation per node type in [`NodeType::ALL`] order.
    pub pooled: Vec<Vec<f64>>,
    pub concat: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Tape handles of one forward pass.
pub struct Forward {
    pub layers: Vec<Var>,
    pub attention: Vec<Vec<Var>>,
    pub pooled: Vec<Var>,
    pub concat: Var,
    pub probs: Var,
    edges: Vec<(usize, usize, Relation)>,
}

impl Forward {
    pub fn trace(&self, tape: &Tape<'_>) -> ForwardTrace {
        let attention = self
            .attention
            .iter()
            .map(|heads| {
                let cols: Vec<&Tensor> = heads.iter().map(|h| tape.value(*h)).collect();
                (0..self.edges.len())
                    .map(|e| cols.iter().map(|c| c.data[e]).collect())
                    .collect()
            })
            .collect();
        ForwardTrace {
            layers: self.layers.iter().map(|v| tape.value(*v).clone()).collect(),
            edges: self.edges.clone(),
            attention,
            pooled: self.pooled.iter().map(|v| tape.value(*v).data.clone()).collect(),
            concat: tape.value(self.concat).data.clone(),
            probs: tape.value(self.probs).data.clone(),
        }
    }
}

fn check_embeddings(graph: &DebateGraph, emb: &Tensor, config: &ModelConfig) -> Result<(), ModelError> {
    if emb.rows() < graph.num_nodes() {
        return Err(ModelError::MissingEmbedding(emb.rows()));
    }
    if emb.cols() != config.input_dim {
        return Err(ModelError::DimMismatch {
            expected: config.input_dim,
            found: emb.cols(),
        });
    }
    Ok(())
}

/// `H^(0)[v] = embedding(v) · W_in[ψ(v)]`, recorded on `tape`.
pub fn featurize_on(
    tape: &mut Tape<'_>,
    graph: &DebateGraph,
    embeddings: &Tensor,
    params: &HgtParams,
) -> Result<Var, ModelError> {
    check_embeddings(graph, embeddings, &params.config)?;
    let plan = Plan::new(graph, &params.config)?;
    let emb = tape.constant(embeddings.clone());
    featurize_planned(tape, &plan, emb, params)
}

fn featurize_planned(tape: &mut Tape<'_>, plan: &Plan, emb: Var, params: &HgtParams) -> Result<Var, ModelError> {
    per_slot(tape, plan, emb, |tape, slot, rows| {
        let w = tape.param(params.index.input[slot]);
        Ok(tape.matmul(rows, w)?)
    })
}

/// Eager featurization; `embeddings` maps node id to a vector.
pub fn featurize(
    graph: &DebateGraph,
    embeddings: &HashMap<usize, Vec<f64>>,
    params: &HgtParams,
) -> Result<Tensor, ModelError> {
    let emb = embedding_matrix(graph, embeddings, params.config.input_dim)?;
    let mut tape = Tape::new(&params.store);
    let h = featurize_on(&mut tape, graph, &emb, params)?;
    Ok(tape.value(h).clone())
}

/// Stacks a node-id keyed embedding map into an `N x d_emb` matrix.
pub fn embedding_matrix(
    graph: &DebateGraph,
    embeddings: &HashMap<usize, Vec<f64>>,
    input_dim: usize,
) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(graph.num_nodes() * input_dim);
    for v in 0..graph.num_nodes() {
        let row = embeddings.get(&v).ok_or(ModelError::MissingEmbedding(v))?;
        if row.len() != input_dim {
            return Err(ModelError::DimMismatch {
                expected: input_dim,
                found: row.len(),
            });
        }
        data.extend_from_slice(row);
    }
    Ok(Tensor::matrix(graph.num_nodes(), input_dim, data)?)
}

/// Per-head attention weights of layer `l`, each an `E x 1` column in
/// canonical edge order.
fn attention_planned(
    tape: &mut Tape<'_>,
    plan: &Plan,
    h_prev: Var,
    params: &HgtParams,
    l: usize,
) -> Result<Vec<Var>, ModelError> {
    let cfg = &params.config;
    let inv_scale = 1.0 / cfg.scale_divisor();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let keys = per_slot(tape, plan, h_prev, |tape, slot, rows| {
            let w = tape.param(params.index.key[l][h][slot]);
            Ok(tape.matmul(rows, w)?)
        })?;
        let queries = per_slot(tape, plan, h_prev, |tape, slot, rows| {
            let w = tape.param(params.index.query[l][h][slot]);
            Ok(tape.matmul(rows, w)?)
        })?;
        let mut parts = Vec::with_capacity(plan.rel_groups.len());
        for (rel, positions) in &plan.rel_groups {
            let srcs: Vec<usize> = positions.iter().map(|&p| plan.edge_src[p]).collect();
            let dsts: Vec<usize> = positions.iter().map(|&p| plan.edge_dst[p]).collect();
            let k = tape.gather_rows(keys, &srcs)?;
            let w_attn = tape.param(params.index.attn[l][rel]);
            let kw = tape.matmul(k, w_attn)?;
            let q = tape.gather_rows(queries, &dsts)?;
            let raw = tape.row_dot(kw, q)?;
            let mu = tape.param(params.index.prior[l][rel]);
            parts.push(tape.mul_scalar(raw, mu)?);
        }
        let stacked = tape.concat(&parts, 0)?;
        let scores = tape.gather_rows(stacked, &plan.rel_perm)?;
        let scores = tape.scale(scores, inv_scale);
        heads.push(tape.segment_softmax(scores, &plan.edge_dst)?);
    }
    Ok(heads)
}

/// Per-head messages of layer `l`, each `E x d_h` in canonical edge order.
fn messages_planned(
    tape: &mut Tape<'_>,
    plan: &Plan,
    h_prev: Var,
    params: &HgtParams,
    l: usize,
) -> Result<Vec<Var>, ModelError> {
    let cfg = &params.config;
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let projected = per_slot(tape, plan, h_prev, |tape, slot, rows| {
            let w = tape.param(params.index.msg_proj[l][h][slot]);
            Ok(tape.matmul(rows, w)?)
        })?;
        let mut parts = Vec::with_capacity(plan.rel_groups.len());
        for (rel, positions) in &plan.rel_groups {
            let srcs: Vec<usize> = positions.iter().map(|&p| plan.edge_src[p]).collect();
            let m = tape.gather_rows(projected, &srcs)?;
            let w_msg = tape.param(params.index.msg[l][rel]);
            parts.push(tape.matmul(m, w_msg)?);
        }
        let stacked = tape.concat(&parts, 0)?;
        heads.push(tape.gather_rows(stacked, &plan.rel_perm)?);
    }
    Ok(heads)
}

fn layer_planned(
    tape: &mut Tape<'_>,
    plan: &Plan,
    h_prev: Var,
    params: &HgtParams,
    l: usize,
) -> Result<(Var, Vec<Var>), ModelError> {
    if plan.num_edges() == 0 {
        // No messages anywhere: every node passes through unchanged.
        return Ok((h_prev, Vec::new()));
    }
    let attn = attention_planned(tape, plan, h_prev, params, l)?;
    let msgs = messages_planned(tape, plan, h_prev, params, l)?;
    let mut head_sums = Vec::with_capacity(attn.len());
    for (a, m) in attn.iter().zip(&msgs) {
        let weighted = tape.mul_row_weights(*m, *a)?;
        head_sums.push(tape.scatter_add_rows(weighted, &plan.edge_dst, plan.n)?);
    }
    let aggregated = tape.concat(&head_sums, 1)?;
    let update = per_slot(tape, plan, aggregated, |tape, slot, rows| {
        let lambda = tape.param(params.index.rescale[l][slot]);
        let scaled = tape.mul_scalar(rows, lambda)?;
        let a = tape.param(params.index.agg[l][slot]);
        Ok(tape.matmul(scaled, a)?)
    })?;
    Ok((tape.add(update, h_prev)?, attn))
}

/// Records the full model on `tape`. `embeddings` is `N x d_emb` in node
/// id order.
pub fn forward(
    tape: &mut Tape<'_>,
    graph: &DebateGraph,
    embeddings: &Tensor,
    params: &HgtParams,
) -> Result<Forward, ModelError> {
    let cfg = &params.config;
    check_embeddings(graph, embeddings, cfg)?;
    let plan = Plan::new(graph, cfg)?;
    let emb = tape.constant(embeddings.clone());
    let mut h = featurize_planned(tape, &plan, emb, params)?;
    let mut layers = vec![h];
    let mut attention = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let (next, attn) = layer_planned(tape, &plan, h, params, l)?;
        h = next;
        layers.push(h);
        attention.push(attn);
    }

    let d = cfg.hidden_dim;
    let mut pooled = Vec::with_capacity(NodeType::ALL.len());
    for (i, node_type) in NodeType::ALL.iter().enumerate() {
        let members: Vec<usize> = if cfg.homogeneous {
            if i == 0 {
                (0..plan.n).collect()
            } else {
                Vec::new()
            }
        } else {
            graph.nodes_of_type(*node_type)
        };
        let v = if members.is_empty() {
            tape.constant(Tensor::zeros(1, d))
        } else {
            let rows = tape.gather_rows(h, &members)?;
            tape.mean_rows(rows)?
        };
        pooled.push(v);
    }
    let concat = tape.concat(&pooled, 1)?;
    let w1 = tape.param(params.index.w1);
    let b1 = tape.param(params.index.b1);
    let w2 = tape.param(params.index.w2);
    let b2 = tape.param(params.index.b2);
    let z = tape.matmul(concat, w1)?;
    let z = tape.add(z, b1)?;
    let z = tape.relu(z);
    let logits = tape.matmul(z, w2)?;
    let logits = tape.add(logits, b2)?;
    let probs = tape.softmax(logits)?;

    let edges = (0..plan.num_edges())
        .map(|e| {
            let pos = plan.rel_groups.iter().find_map(|(r, g)| g.contains(&e).then_some(*r));
            (plan.edge_src[e], plan.edge_dst[e], pos.expect("every edge is grouped"))
        })
        .collect();
    Ok(Forward {
        layers,
        attention,
        pooled,
        concat,
        probs,
        edges,
    })
}

/// Class probabilities and the full trace for one graph.
pub fn predict(
    graph: &DebateGraph,
    embeddings: &Tensor,
    params: &HgtParams,
) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
    let mut tape = Tape::new(&params.store);
    let fwd = forward(&mut tape, graph, embeddings, params)?;
    let trace = fwd.trace(&tape);
    Ok((trace.probs.clone(), trace))
}

/// Records forward pass plus cross-entropy against the graph's label.
pub fn loss_on(
    tape: &mut Tape<'_>,
    graph: &DebateGraph,
    embeddings: &Tensor,
    params: &HgtParams,
) -> Result<Var, ModelError> {
    let label = graph
        .label()
        .ok_or_else(|| ModelError::MissingLabel(graph.graph_id().to_string()))?;
    let fwd = forward(tape, graph, embeddings, params)?;
    Ok(tape.cross_entropy(fwd.probs, label.class_index())?)
}

/// Gradient check of the full classification loss on one labeled graph.
/// With `corrupt`, the analytic gradients are perturbed first; used as a
/// negative control.
pub fn model_grad_check(
    graph: &DebateGraph,
    embeddings: &Tensor,
    params: &HgtParams,
    eps: f64,
    corrupt: bool,
) -> Result<GradCheckReport, ModelError> {
    let f = |tape: &mut Tape<'_>| -> Result<Var, NumericsError> {
        loss_on(tape, graph, embeddings, params).map_err(|e| match e {
            ModelError::Numerics(n) => n,
            other => unreachable!("checked before differencing: {other}"),
        })
    };
    // Surface non-numeric problems (schema, labels) with their own type.
    loss_on(&mut Tape::new(&params.store), graph, embeddings, params)?;
    let mut analytic = analytic_gradients(&f, &params.store)?;
    if corrupt {
        for g in analytic.0.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v = *v * 1.5 + 1e-3;
            }
        }
    }
    Ok(grad_check_against(&f, &params.store, eps, &analytic)?)
}

/// Small model used for finite-difference checks.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_heads: 2,
        num_layers: 2,
        input_dim: 8,
        ffn_hidden: 8,
        ..ModelConfig::default()
    }
}

/// Index of the largest probability; ties resolve to the lower class.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AblationMode, Dimension, Edge, Node, RelationKind};

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 2,
            input_dim: 8,
            ffn_hidden: 6,
            ..ModelConfig::default()
        }
    }

    fn two_node_graph(with_edge: bool) -> DebateGraph {
        let mut nodes = vec![Node {
            id: 0,
            node_type: NodeType::Title,
            text: "T".into(),
            speaker: None,
            dimension: None,
        }];
        nodes.push(Node {
            id: 1,
            node_type: NodeType::EvaluationDimension,
            text: Dimension::WritingFluency.display_name().into(),
            speaker: None,
            dimension: None,
        });
        let edges = if with_edge {
            vec![Edge {
                src: 0,
                dst: 1,
                relation: Relation::forward(RelationKind::HasAspect),
            }]
        } else {
            vec![]
        };
        DebateGraph::new("g", None, nodes, edges, AblationMode::Full).unwrap()
    }

    fn emb(n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_priors_are_one() {
        let cfg = small_config();
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        assert_eq!(a.store, b.store);
        let priors: Vec<f64> = a
            .store
            .iter()
            .filter(|(_, n, _)| n.contains(".prior."))
            .map(|(_, _, t)| t.data[0])
            .collect();
        assert_eq!(priors.len(), 2 * 26);
        assert!(priors.iter().all(|&p| p == 1.0));
        assert_eq!(a.relation_count(), 26);
        let homo = init_params(
            &ModelConfig {
                homogeneous: true,
                ..cfg.clone()
            },
            3,
        )
        .unwrap();
        assert_eq!((homo.relation_count(), homo.type_count()), (1, 1));
        let no_inv = init_params(
            &ModelConfig {
                use_inverse_edges: false,
                ..cfg
            },
            3,
        )
        .unwrap();
        assert_eq!(no_inv.relation_count(), 13);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small_config();
        cfg.num_heads = 3;
        assert!(init_params(&cfg, 0).is_err());
        cfg.num_heads = 2;
        cfg.num_layers = 0;
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn featurize_zero_and_identity_rows() {
        let cfg = small_config();
        let mut params = init_params(&cfg, 1).unwrap();
        let g = two_node_graph(true);
        let mut map = HashMap::new();
        map.insert(0, vec![0.0; 8]);
        map.insert(1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let h = featurize(&g, &map, &params).unwrap();
        assert!(h.row(0).iter().all(|v| *v == 0.0));

        let id = params.store.id("in.evaluation_dimension").unwrap();
        params.store.get_mut(id).data = Tensor::identity(8).data;
        let h = featurize(&g, &map, &params).unwrap();
        assert_eq!(h.row(1), &map[&1][..]);

        map.remove(&1);
        assert_eq!(featurize(&g, &map, &params), Err(ModelError::MissingEmbedding(1)));
    }

    #[test]
    fn single_incoming_edge_has_unit_attention() {
        let params = init_params(&small_config(), 2).unwrap();
        let g = two_node_graph(true);
        let (_, trace) = predict(&g, &emb(2, 8), &params).unwrap();
        for layer in &trace.attention {
            assert_eq!(layer.len(), 1);
            assert!(layer[0].iter().all(|w| *w == 1.0));
        }
        let sum: f64 = trace.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_nodes_pass_through() {
        let params = init_params(&small_config(), 2).unwrap();
        let g = two_node_graph(true);
        let (_, trace) = predict(&g, &emb(2, 8), &params).unwrap();
        // node 0 (title) has no incoming edges without inverses
        for w in trace.layers.windows(2) {
            assert_eq!(w[0].row(0), w[1].row(0));
        }
    }

    #[test]
    fn zero_rescale_freezes_representations() {
        let mut params = init_params(&small_config(), 4).unwrap();
        let ids: Vec<ParamId> = params
            .store
            .iter()
            .filter(|(_, n, _)| n.contains(".rescale."))
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            params.store.get_mut(id).data[0] = 0.0;
        }
        let g = two_node_graph(true);
        let (_, trace) = predict(&g, &emb(2, 8), &params).unwrap();
        assert_eq!(trace.layers[0], trace.layers[2]);
    }

    #[test]
    fn homogeneous_model_rejects_typed_graph() {
        let cfg = ModelConfig {
            homogeneous: true,
            ..small_config()
        };
        let params = init_params(&cfg, 0).unwrap();
        assert!(matches!(
            predict(&two_node_graph(true), &emb(2, 8), &params),
            Err(ModelError::SchemaMismatch { .. })
        ));
    }
}
