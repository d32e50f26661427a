//! Straight-line reference model: explicit loops over plain vectors, every
//! edge visited from the raw edge list, no tape and no batching.

use std::collections::HashMap;

use reviewgraph_core::graph::{DebateGraph, NodeType, Relation};
use reviewgraph_core::hgt::{AttentionScale, HgtParams};
use reviewgraph_core::numerics::Tensor;

pub struct DenseOut {
    pub probs: Vec<f64>,
    pub layers: Vec<Vec<Vec<f64>>>,
    /// `[layer]` map from `(src, dst, relation)` to per-head weights.
    pub attention: Vec<HashMap<(usize, usize, Relation), Vec<f64>>>,
}

type Mat = Vec<Vec<f64>>;

fn mat(p: &HgtParams, name: &str) -> Mat {
    let t = p.store.by_name(name).unwrap_or_else(|_| panic!("missing {name}"));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn scalar(p: &HgtParams, name: &str) -> f64 {
    p.store.by_name(name).unwrap().data[0]
}

/// Row vector times matrix.
fn vm(x: &[f64], m: &Mat) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * m[i][j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn type_name(p: &HgtParams, t: NodeType) -> &'static str {
    if p.config.homogeneous {
        "node"
    } else {
        t.as_str()
    }
}

fn rel_name(r: Relation) -> String {
    if r.inverse {
        format!("inv_{}", r.kind.as_str())
    } else {
        r.kind.as_str().to_string()
    }
}

pub fn dense_predict(g: &DebateGraph, emb: &Tensor, p: &HgtParams) -> DenseOut {
    let cfg = &p.config;
    let n = g.num_nodes();
    let d = cfg.hidden_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let scale = match cfg.attention_scale {
        AttentionScale::SqrtD => (d as f64).sqrt(),
        AttentionScale::SqrtDh => (dh as f64).sqrt(),
    };
    let ty = |v: usize| g.nodes()[v].node_type;

    let mut h: Mat = (0..n)
        .map(|v| vm(emb.row(v), &mat(p, &format!("in.{}", type_name(p, ty(v))))))
        .collect();
    let mut layers = vec![h.clone()];
    let mut attention = Vec::new();

    for l in 0..cfg.num_layers {
        let mut next = h.clone();
        let mut attn_l = HashMap::new();
        for t in 0..n {
            let incoming: Vec<(usize, Relation)> = g
                .edges()
                .iter()
                .filter(|e| e.dst == t)
                .map(|e| (e.src, e.relation))
                .collect();
            if incoming.is_empty() {
                continue;
            }
            let tt = type_name(p, ty(t));
            let mut agg = vec![0.0; d];
            let mut weights: Vec<Vec<f64>> = vec![Vec::new(); incoming.len()];
            for i in 0..heads {
                let q = vm(&h[t], &mat(p, &format!("l{l}.h{i}.query.{tt}")));
                let mut scores = Vec::new();
                let mut msgs = Vec::new();
                for &(s, r) in &incoming {
                    let st = type_name(p, ty(s));
                    let k = vm(&h[s], &mat(p, &format!("l{l}.h{i}.key.{st}")));
                    let kw = vm(&k, &mat(p, &format!("l{l}.attn.{}", rel_name(r))));
                    let meta = if cfg.homogeneous {
                        "node.connected.node".to_string()
                    } else {
                        format!("{st}.{}.{tt}", rel_name(r))
                    };
                    let mu = scalar(p, &format!("l{l}.prior.{meta}"));
                    scores.push(dot(&kw, &q) * mu / scale);
                    let m = vm(&h[s], &mat(p, &format!("l{l}.h{i}.msg_proj.{st}")));
                    msgs.push(vm(&m, &mat(p, &format!("l{l}.msg.{}", rel_name(r)))));
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (e, (w, m)) in exps.iter().zip(&msgs).enumerate() {
                    let a = w / z;
                    weights[e].push(a);
                    for c in 0..dh {
                        agg[i * dh + c] += a * m[c];
                    }
                }
            }
            for (e, &(s, r)) in incoming.iter().enumerate() {
                attn_l.insert((s, t, r), weights[e].clone());
            }
            let lambda = scalar(p, &format!("l{l}.rescale.{tt}"));
            let scaled: Vec<f64> = agg.iter().map(|x| x * lambda).collect();
            let upd = vm(&scaled, &mat(p, &format!("l{l}.agg.{tt}")));
            for c in 0..d {
                next[t][c] = upd[c] + h[t][c];
            }
        }
        h = next;
        layers.push(h.clone());
        attention.push(attn_l);
    }

    let mut concat = Vec::with_capacity(4 * d);
    for (slot, nt) in NodeType::ALL.iter().enumerate() {
        let members: Vec<usize> = if cfg.homogeneous {
            if slot == 0 {
                (0..n).collect()
            } else {
                Vec::new()
            }
        } else {
            (0..n).filter(|&v| ty(v) == *nt).collect()
        };
        let mut pooled = vec![0.0; d];
        for &v in &members {
            for c in 0..d {
                pooled[c] += h[v][c];
            }
        }
        if !members.is_empty() {
            pooled.iter_mut().for_each(|x| *x /= members.len() as f64);
        }
        concat.extend(pooled);
    }
    let b1 = mat(p, "head.b1");
    let b2 = mat(p, "head.b2");
    let z1: Vec<f64> = vm(&concat, &mat(p, "head.w1"))
        .iter()
        .zip(&b1[0])
        .map(|(x, b)| (x + b).max(0.0))
        .collect();
    let logits: Vec<f64> = vm(&z1, &mat(p, "head.w2"))
        .iter()
        .zip(&b2[0])
        .map(|(x, b)| x + b)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    DenseOut {
        probs: exps.iter().map(|e| e / z).collect(),
        layers,
        attention,
    }
}
