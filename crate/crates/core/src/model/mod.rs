//! Graph processor (ART / HGT blocks) and the object density head.

mod batch;
mod odn;
mod processor;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::GraphBatch;
pub use odn::{
    gmm_density, head_mixture, log_density, mdn_predict, mixture_nll, nll_loss, predict_params, sample_gaze, Component,
    ComponentNode, GmmPrediction, MixtureVars,
};
pub use processor::{
    affinity_embed, art_attention, art_block, edge_inputs, embed_inputs, processor_forward, Forward, KeyOrValue,
    StatsMode,
};

use crate::error::{Error, Result};
use crate::graph::{EdgeCategory, EdgeType, NodeType, SceneGraph, EDGE_DIM, NODE_DIM};
use crate::math::ParamStore;
use crate::math::{RunningStats, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Art,
    Hgt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Odn,
    Mdn { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub heads: usize,
    pub variant: Variant,
    pub head: HeadKind,
    /// Per-coordinate bound on the mean offset for non-structure nodes.
    pub delta_max: f64,
    /// Initial residual gate value in `(0, 1)`.
    pub gate_init: f64,
    /// Learning-rate multiplier for the head parameters.
    pub head_lr_scale: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            layers: 2,
            ffn_hidden: 256,
            heads: 1,
            variant: Variant::Art,
            head: HeadKind::Odn,
            delta_max: 0.05,
            gate_init: 0.5,
            head_lr_scale: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d must be a positive even number, got {}",
                self.d
            )));
        }
        if self.heads != 1 {
            return Err(Error::Config(format!(
                "only single-head attention is supported, got heads = {}",
                self.heads
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        if !(self.gate_init > 0.0 && self.gate_init < 1.0) {
            return Err(Error::Config(format!("gate_init {} outside (0, 1)", self.gate_init)));
        }
        if !(self.delta_max > 0.0) {
            return Err(Error::Config("delta_max must be positive".into()));
        }
        if let HeadKind::Mdn { k } = self.head {
            if k == 0 {
                return Err(Error::Config("MDN head needs k >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Running statistics for every batch-norm site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node: RunningStats,
    pub edge: RunningStats,
    /// Per block: key encoder, value encoder.
    pub affinity: Vec<[RunningStats; 2]>,
}

impl NormStats {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            node: RunningStats::new(NODE_DIM),
            edge: RunningStats::new(EDGE_DIM),
            affinity: (0..cfg.layers)
                .map(|_| [RunningStats::new(cfg.d), RunningStats::new(cfg.d)])
                .collect(),
        }
    }
}

/// Parameters, normalisation state and configuration of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub stats: NormStats,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn edge_param_names(block: usize, ty: &EdgeType) -> (String, String) {
    let key = ty.key();
    (
        format!("block{block}.edge.{key}.wk"),
        format!("block{block}.edge.{key}.wv"),
    )
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut m = Self {
            stats: NormStats::new(&config),
            params: ParamStore::new(),
            config,
        };
        m.register_base()?;
        Ok(m)
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.init_seed ^ fnv1a(name))
    }

    // Uniform in ±1/√fan_in, seeded by the parameter name so the value does
    // not depend on registration order.
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, lr: f64, decay: bool) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = self.rng_for(&name);
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.params
            .register(name, Tensor::from_matrix(rows, cols, data)?, lr, decay)?;
        Ok(())
    }

    fn constant(&mut self, name: String, cols: usize, value: f64) -> Result<()> {
        self.params.register(name, Tensor::filled(1, cols, value), 1.0, false)?;
        Ok(())
    }

    fn register_base(&mut self) -> Result<()> {
        let ModelConfig {
            d,
            layers,
            ffn_hidden,
            gate_init,
            head,
            head_lr_scale,
            ..
        } = self.config;
        let gate_logit = (gate_init / (1.0 - gate_init)).ln();
        self.constant("bn.node.scale".into(), NODE_DIM, 1.0)?;
        self.constant("bn.node.shift".into(), NODE_DIM, 0.0)?;
        self.constant("bn.edge.scale".into(), EDGE_DIM, 1.0)?;
        self.constant("bn.edge.shift".into(), EDGE_DIM, 0.0)?;
        for ty in NodeType::ALL {
            let n = ty.name();
            self.uniform(format!("input.{n}.w"), NODE_DIM, d, NODE_DIM, 1.0, true)?;
            self.uniform(format!("input.{n}.b"), 1, d, NODE_DIM, 1.0, false)?;
        }
        for l in 0..layers {
            for ln in ["ln1", "ln2"] {
                self.constant(format!("block{l}.{ln}.scale"), d, 1.0)?;
                self.constant(format!("block{l}.{ln}.shift"), d, 0.0)?;
            }
            for ty in NodeType::ALL {
                let n = ty.name();
                self.uniform(format!("block{l}.{n}.qkv.w"), d, 3 * d, d, 1.0, true)?;
                self.uniform(format!("block{l}.{n}.qkv.b"), 1, 3 * d, d, 1.0, false)?;
                self.constant(format!("block{l}.{n}.gate_art"), 1, gate_logit)?;
                self.constant(format!("block{l}.{n}.gate_ffn"), 1, gate_logit)?;
                self.uniform(format!("block{l}.{n}.ffn1.w"), d, ffn_hidden, d, 1.0, true)?;
                self.uniform(format!("block{l}.{n}.ffn1.b"), 1, ffn_hidden, d, 1.0, false)?;
                self.uniform(format!("block{l}.{n}.ffn2.w"), ffn_hidden, d, ffn_hidden, 1.0, true)?;
                self.uniform(format!("block{l}.{n}.ffn2.b"), 1, d, ffn_hidden, 1.0, false)?;
            }
            for enc in ["aff_k", "aff_v"] {
                self.uniform(format!("block{l}.{enc}.w1"), EDGE_DIM, d, EDGE_DIM, 1.0, true)?;
                self.uniform(format!("block{l}.{enc}.b1"), 1, d, EDGE_DIM, 1.0, false)?;
                self.constant(format!("block{l}.{enc}.bn.scale"), d, 1.0)?;
                self.constant(format!("block{l}.{enc}.bn.shift"), d, 0.0)?;
                self.uniform(format!("block{l}.{enc}.w2"), d, d, d, 1.0, true)?;
            }
        }
        match head {
            HeadKind::Odn => {
                for ty in NodeType::ALL {
                    let n = ty.name();
                    self.uniform(format!("odn.{n}.w"), d, 6, d, head_lr_scale, true)?;
                    self.uniform(format!("odn.{n}.b"), 1, 6, d, head_lr_scale, false)?;
                }
            }
            HeadKind::Mdn { k } => {
                self.uniform("mdn.w".into(), d, 6 * k, d, head_lr_scale, true)?;
                self.uniform("mdn.b".into(), 1, 6 * k, d, head_lr_scale, false)?;
            }
        }
        Ok(())
    }

    /// Register `W_K^φ, W_V^φ` for every triplet not yet known. Returns how
    /// many triplets were added.
    pub fn register_edge_types(&mut self, types: impl IntoIterator<Item = EdgeType>) -> Result<usize> {
        let types: BTreeSet<EdgeType> = types.into_iter().collect();
        let d = self.config.d;
        let mut added = 0;
        for ty in types {
            if self.params.id(&edge_param_names(0, &ty).0).is_some() {
                continue;
            }
            for l in 0..self.config.layers {
                let (wk, wv) = edge_param_names(l, &ty);
                self.uniform(wk, d, d, d, 1.0, true)?;
                self.uniform(wv, d, d, d, 1.0, true)?;
            }
            added += 1;
        }
        Ok(added)
    }

    /// Register every triplet present in `graphs`.
    pub fn register_graph_edge_types<'a>(&mut self, graphs: impl IntoIterator<Item = &'a SceneGraph>) -> Result<usize> {
        let mut seen = BTreeSet::new();
        for g in graphs {
            for e in g.edges() {
                seen.insert(g.edge_type(e));
            }
        }
        self.register_edge_types(seen)
    }

    /// Every triplet between the five node types in both edge categories.
    pub fn register_all_edge_types(&mut self) -> Result<usize> {
        let mut all = Vec::new();
        for src in NodeType::ALL {
            for dst in NodeType::ALL {
                for category in [EdgeCategory::Spatial, EdgeCategory::Temporal] {
                    all.push(EdgeType { src, category, dst });
                }
            }
        }
        self.register_edge_types(all)
    }

    /// Zero the second layer of both affinity encoders in every block, which
    /// makes their outputs exactly zero.
    pub fn zero_affinity_encoders(&mut self) {
        for l in 0..self.config.layers {
            for enc in ["aff_k", "aff_v"] {
                if let Some(id) = self.params.id(&format!("block{l}.{enc}.w2")) {
                    self.params.value_mut(id).data_mut().fill(0.0);
                }
            }
        }
    }

    /// Set a named parameter to a constant.
    pub fn fill_param(&mut self, name: &str, value: f64) -> Result<()> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))?;
        self.params.value_mut(id).data_mut().fill(value);
        Ok(())
    }

    /// Inference-mode forward pass producing one mixture per graph.
    pub fn predict_batch(&self, graphs: &[&SceneGraph]) -> Result<Vec<GmmPrediction>> {
        let batch = GraphBatch::new(graphs, None, self.config.d)?;
        let mut f = Forward::new(&self.config, &self.params, StatsMode::Eval(&self.stats));
        let x = processor_forward(&mut f, &batch)?;
        let mix = head_mixture(&mut f, &batch, x)?;
        Ok(mix.to_predictions(&f.tape, &batch))
    }

    pub fn predict(&self, g: &SceneGraph) -> Result<GmmPrediction> {
        Ok(self.predict_batch(&[g])?.remove(0))
    }

    /// Mean NLL of the targets in inference mode.
    pub fn eval_nll(&self, batch: &GraphBatch) -> Result<f64> {
        let mut f = Forward::new(&self.config, &self.params, StatsMode::Eval(&self.stats));
        let x = processor_forward(&mut f, batch)?;
        let mix = head_mixture(&mut f, batch, x)?;
        let loss = mixture_nll(&mut f.tape, &mix, batch)?;
        Ok(f.tape.value(loss).item())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Model = serde_json::from_str(&text)?;
        m.params.reindex();
        m.config.validate()?;
        Ok(m)
    }
}

/// A scalar loss recorded on a fresh tape together with the tape itself.
pub struct LossTape {
    pub tape: Tape,
    pub loss: crate::math::Var,
}

/// Training-mode forward pass and NLL on `batch`; running statistics in
/// `stats` are updated.
pub fn training_loss(
    config: &ModelConfig,
    params: &ParamStore,
    stats: &mut NormStats,
    batch: &GraphBatch,
) -> Result<LossTape> {
    let mut f = Forward::new(config, params, StatsMode::Train(stats));
    let x = processor_forward(&mut f, batch)?;
    let mix = head_mixture(&mut f, batch, x)?;
    let mut tape = f.into_tape();
    let loss = mixture_nll(&mut tape, &mix, batch)?;
    Ok(LossTape { tape, loss })
}
