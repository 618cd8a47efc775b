use std::sync::Arc;

use super::{edge_param_names, GraphBatch, ModelConfig, NormStats, Variant};
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::math::{normalize, NormMode, ParamStore, Tape, Tensor, Var, NORM_EPS};

pub enum StatsMode<'a> {
    /// Batch statistics; running statistics are updated.
    Train(&'a mut NormStats),
    /// Running statistics only.
    Eval(&'a NormStats),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyOrValue {
    Key,
    Value,
}

impl KeyOrValue {
    fn name(self) -> &'static str {
        match self {
            KeyOrValue::Key => "aff_k",
            KeyOrValue::Value => "aff_v",
        }
    }

    fn slot(self) -> usize {
        match self {
            KeyOrValue::Key => 0,
            KeyOrValue::Value => 1,
        }
    }
}

enum Site {
    Node,
    Edge,
    Affinity(usize, KeyOrValue),
}

/// One forward pass: a tape plus read-only parameters, each bound to the
/// tape at most once.
pub struct Forward<'a> {
    pub tape: Tape,
    pub config: &'a ModelConfig,
    params: &'a ParamStore,
    stats: StatsMode<'a>,
    bound: Vec<Option<Var>>,
}

impl<'a> Forward<'a> {
    pub fn new(config: &'a ModelConfig, params: &'a ParamStore, stats: StatsMode<'a>) -> Self {
        Self {
            tape: Tape::new(),
            config,
            params,
            stats,
            bound: vec![None; params.len()],
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    /// Tape variable for the named parameter.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("no registered parameter `{name}`")))?;
        if let Some(v) = self.bound[id] {
            return Ok(v);
        }
        let v = self.tape.param(id, self.params.value(id));
        self.bound[id] = Some(v);
        Ok(v)
    }

    fn batch_norm(&mut self, x: Var, site: Site, prefix: &str) -> Result<Var> {
        let scale = self.param(&format!("{prefix}.scale"))?;
        let shift = self.param(&format!("{prefix}.shift"))?;
        let mode = match &mut self.stats {
            StatsMode::Train(s) => NormMode::BatchTrain(match site {
                Site::Node => &mut s.node,
                Site::Edge => &mut s.edge,
                Site::Affinity(l, kv) => &mut s.affinity[l][kv.slot()],
            }),
            StatsMode::Eval(s) => NormMode::BatchEval(match site {
                Site::Node => &s.node,
                Site::Edge => &s.edge,
                Site::Affinity(l, kv) => &s.affinity[l][kv.slot()],
            }),
        };
        normalize(&mut self.tape, x, mode, scale, shift, NORM_EPS)
    }

    pub(crate) fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let scale = self.param(&format!("{prefix}.scale"))?;
        let shift = self.param(&format!("{prefix}.shift"))?;
        normalize(&mut self.tape, x, NormMode::Layer, scale, shift, NORM_EPS)
    }

    /// Apply a per-type linear map to the rows of `x` (type-ordered);
    /// `name` gets `{type}` substituted.
    pub(crate) fn typed_linear(&mut self, x: Var, groups: &[Arc<[usize]>], name: &str) -> Result<Var> {
        let mut parts = Vec::new();
        for (ty, rows) in NodeType::ALL.iter().zip(groups) {
            if rows.is_empty() {
                continue;
            }
            let base = name.replace("{type}", ty.name());
            let w = self.param(&format!("{base}.w"))?;
            let b = self.param(&format!("{base}.b"))?;
            let xs = self.tape.gather_rows(x, rows.clone())?;
            parts.push(self.tape.linear(xs, w, Some(b))?);
        }
        self.tape.concat_rows(parts)
    }

    /// `n × 1` column holding each node's gate value.
    pub(crate) fn typed_gate(&mut self, groups: &[Arc<[usize]>], name: &str) -> Result<Var> {
        let mut parts = Vec::new();
        for (ty, rows) in NodeType::ALL.iter().zip(groups) {
            if rows.is_empty() {
                continue;
            }
            let g = self.param(&name.replace("{type}", ty.name()))?;
            let s = self.tape.sigmoid(g);
            let idx: Arc<[usize]> = vec![0; rows.len()].into();
            parts.push(self.tape.gather_rows(s, idx)?);
        }
        self.tape.concat_rows(parts)
    }
}

/// Batch-normalised node features, projected per type, plus the timestep
/// encoding.
pub fn embed_inputs(f: &mut Forward, b: &GraphBatch) -> Result<Var> {
    let x = f.tape.constant(b.features.clone());
    let xn = f.batch_norm(x, Site::Node, "bn.node")?;
    let h = f.typed_linear(xn, &b.type_nodes, "input.{type}")?;
    let enc = f.tape.constant(b.time_enc.clone());
    f.tape.add(h, enc)
}

/// Batch-normalised edge affinities (`m × 5`).
pub fn edge_inputs(f: &mut Forward, b: &GraphBatch) -> Result<Var> {
    let a = f.tape.constant(b.affinity.clone());
    f.batch_norm(a, Site::Edge, "bn.edge")
}

/// `relu(BN(a W₁ + b₁)) W₂` for block `block`.
pub fn affinity_embed(f: &mut Forward, a: Var, block: usize, which: KeyOrValue) -> Result<Var> {
    let prefix = format!("block{block}.{}", which.name());
    let w1 = f.param(&format!("{prefix}.w1"))?;
    let b1 = f.param(&format!("{prefix}.b1"))?;
    let w2 = f.param(&format!("{prefix}.w2"))?;
    let h = f.tape.linear(a, w1, Some(b1))?;
    let h = f.batch_norm(h, Site::Affinity(block, which), &format!("{prefix}.bn"))?;
    let h = f.tape.relu(h);
    f.tape.matmul(h, w2)
}

/// Project the per-edge source vectors of `x` through each triplet's
/// matrix, one product per distinct (source, triplet).
fn edge_projection(f: &mut Forward, x: Var, b: &GraphBatch, block: usize, which: KeyOrValue) -> Result<Var> {
    let mut parts = Vec::with_capacity(b.edge_groups.len());
    for group in &b.edge_groups {
        let (wk, wv) = edge_param_names(block, &group.ty);
        let name = match which {
            KeyOrValue::Key => wk,
            KeyOrValue::Value => wv,
        };
        let w = f
            .param(&name)
            .map_err(|_| Error::Config(format!("edge type `{}` has no registered parameters", group.ty.key())))?;
        let xs = f.tape.gather_rows(x, group.sources.clone())?;
        parts.push(f.tape.matmul(xs, w)?);
    }
    let all = f.tape.concat_rows(parts)?;
    f.tape.gather_rows(all, b.edge_source_row.clone())
}

/// Aggregated attention messages per node. `affinity` is the normalised
/// edge input for the ART variant and `None` for HGT.
pub fn art_attention(f: &mut Forward, h: Var, b: &GraphBatch, affinity: Option<Var>, block: usize) -> Result<Var> {
    let d = f.config.d;
    let n = b.n_nodes();
    if b.n_edges() == 0 {
        return Ok(f.tape.constant(Tensor::zeros(n, d)));
    }
    let qkv = f.typed_linear(h, &b.type_nodes, &format!("block{block}.{{type}}.qkv"))?;
    let q = f.tape.slice_cols(qkv, 0, d)?;
    let k = f.tape.slice_cols(qkv, d, d)?;
    let v = f.tape.slice_cols(qkv, 2 * d, d)?;

    let mut key = edge_projection(f, k, b, block, KeyOrValue::Key)?;
    let mut value = edge_projection(f, v, b, block, KeyOrValue::Value)?;
    if let Some(a) = affinity {
        let pk = affinity_embed(f, a, block, KeyOrValue::Key)?;
        let pv = affinity_embed(f, a, block, KeyOrValue::Value)?;
        key = f.tape.add(key, pk)?;
        value = f.tape.add(value, pv)?;
    }
    let qe = f.tape.gather_rows(q, b.edge_dst.clone())?;
    let score = f.tape.row_dot(qe, key)?;
    let score = f.tape.scale(score, 1.0 / (d as f64).sqrt());
    let alpha = f.tape.segment_softmax(score, b.edge_dst.clone(), n)?;
    let msg = f.tape.mul_col(value, alpha)?;
    f.tape.segment_sum(msg, b.edge_dst.clone(), n)
}

// y = λ·u + (1 − λ)·x, written as x + λ·(u − x).
pub(crate) fn gated(f: &mut Forward, x: Var, u: Var, lambda: Var) -> Result<Var> {
    let diff = f.tape.sub(u, x)?;
    let scaled = f.tape.mul_col(diff, lambda)?;
    f.tape.add(x, scaled)
}

/// Pre-norm block: LayerNorm, attention, gated residual, LayerNorm,
/// two-layer FFN, gated residual.
pub fn art_block(f: &mut Forward, x: Var, b: &GraphBatch, affinity: Option<Var>, block: usize) -> Result<Var> {
    let h1 = f.layer_norm(x, &format!("block{block}.ln1"))?;
    let u1 = art_attention(f, h1, b, affinity, block)?;
    let g1 = f.typed_gate(&b.type_nodes, &format!("block{block}.{{type}}.gate_art"))?;
    let y1 = gated(f, x, u1, g1)?;
    let h2 = f.layer_norm(y1, &format!("block{block}.ln2"))?;
    let hidden = f.typed_linear(h2, &b.type_nodes, &format!("block{block}.{{type}}.ffn1"))?;
    let hidden = f.tape.relu(hidden);
    let u2 = f.typed_linear(hidden, &b.type_nodes, &format!("block{block}.{{type}}.ffn2"))?;
    let g2 = f.typed_gate(&b.type_nodes, &format!("block{block}.{{type}}.gate_ffn"))?;
    gated(f, y1, u2, g2)
}

/// Embedding followed by `L` blocks; rows follow the batch's node order.
pub fn processor_forward(f: &mut Forward, b: &GraphBatch) -> Result<Var> {
    let mut x = embed_inputs(f, b)?;
    let affinity = match f.config.variant {
        Variant::Art if b.n_edges() > 0 => Some(edge_inputs(f, b)?),
        _ => None,
    };
    for l in 0..f.config.layers {
        x = art_block(f, x, b, affinity, l)?;
    }
    Ok(x)
}
