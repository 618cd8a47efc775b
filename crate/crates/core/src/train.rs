//! Mini-batch NLL training with validation-based checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SceneGraph, DEFAULT_OFFSETS, DEFAULT_WINDOW};
use crate::math::{AdamConfig, OptimState};
use crate::model::{training_loss, GraphBatch, Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub odn_lr_multiplier: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelConfig,
    /// Window length `T` in timesteps.
    pub window: usize,
    pub offsets: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            odn_lr_multiplier: 0.1,
            weight_decay: 1e-6,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            model: ModelConfig::default(),
            window: DEFAULT_WINDOW,
            offsets: DEFAULT_OFFSETS.to_vec(),
        }
    }
}

impl TrainConfig {
    /// Batch 128, 50 epochs, d = 128.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.odn_lr_multiplier > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.offsets.is_empty() || self.offsets.contains(&0) {
            return Err(Error::Config(
                "offsets must be a non-empty set of positive integers".into(),
            ));
        }
        self.model.validate()
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            head_lr_scale: self.odn_lr_multiplier,
            ..self.model.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Validation NLL of the untrained model.
    pub initial_val_loss: f64,
    /// 1-based epoch of the kept checkpoint; 0 means untrained.
    pub selected_epoch: usize,
    pub seed: u64,
    pub steps: u64,
    pub config: TrainConfig,
    /// Why training stopped early, if it did.
    pub aborted: Option<String>,
}

/// The kept checkpoint and the report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
}

/// Shuffled batches of sample indices; the last batch may be short.
pub fn make_batches<R: rand::Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("no samples to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Epoch of minimum validation loss, 1-based, earliest on ties.
pub fn validate_select(report: &TrainReport) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in report.val_loss.iter().enumerate() {
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i + 1)
        .ok_or_else(|| Error::Contract("no validation loss recorded".into()))
}

fn pack<'a>(graphs: &'a [SceneGraph], targets: &[(f64, f64)], idx: &[usize], d: usize) -> Result<GraphBatch> {
    let g: Vec<&'a SceneGraph> = idx.iter().map(|&i| &graphs[i]).collect();
    let t: Vec<(f64, f64)> = idx.iter().map(|&i| targets[i]).collect();
    GraphBatch::new(&g, Some(&t), d)
}

/// Mean inference-mode NLL over a labelled set, in chunks of `chunk`.
pub fn evaluate_nll(model: &Model, graphs: &[SceneGraph], targets: &[(f64, f64)], chunk: usize) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..graphs.len()).collect();
    let mut total = 0.0;
    for c in idx.chunks(chunk.max(1)) {
        let b = pack(graphs, targets, c, model.config.d)?;
        total += model.eval_nll(&b)? * c.len() as f64;
    }
    Ok(total / graphs.len() as f64)
}

/// One optimizer step on the given batch. Returns the batch loss.
pub fn train_step(model: &mut Model, opt: &mut OptimState, batch: &GraphBatch) -> Result<f64> {
    let lt = training_loss(&model.config, &model.params, &mut model.stats, batch)?;
    let loss = lt.tape.value(lt.loss).item();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let grads = lt.tape.backward(lt.loss)?.params(&model.params.shapes());
    opt.adam_step(&mut model.params, &grads)?;
    Ok(loss)
}

/// Fresh model with every edge triplet of both sets registered.
pub fn init_model(cfg: &TrainConfig, train: &[SceneGraph], val: &[SceneGraph]) -> Result<Model> {
    let mut model = Model::new(cfg.model_config())?;
    model.register_graph_edge_types(train.iter().chain(val))?;
    Ok(model)
}

/// Train from `model` (see [`init_model`]). A non-finite loss or gradient
/// stops training and the best checkpoint so far is returned with
/// `report.aborted` set.
pub fn train_from(
    cfg: &TrainConfig,
    mut model: Model,
    train: (&[SceneGraph], &[(f64, f64)]),
    val: (&[SceneGraph], &[(f64, f64)]),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.0.is_empty() || val.0.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".into()));
    }
    if train.0.len() != train.1.len() || val.0.len() != val.1.len() {
        return Err(Error::dim("train", "graph and target counts differ"));
    }
    let adam = AdamConfig {
        lr: cfg.base_lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt = OptimState::new(adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.config.d;
    let initial_val_loss = evaluate_nll(&model, val.0, val.1, cfg.batch_size)?;
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        initial_val_loss,
        selected_epoch: 0,
        seed: cfg.seed,
        steps: 0,
        config: cfg.clone(),
        aborted: None,
    };
    let mut best = model.clone();

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = make_batches(train.0.len(), cfg.batch_size, &mut rng)?;
        let mut sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let b = pack(train.0, train.1, idx, d)?;
            match train_step(&mut model, &mut opt, &b) {
                Ok(l) => sum += l * idx.len() as f64,
                Err(Error::NonFiniteLoss { .. }) => {
                    report.aborted = Some(Error::NonFiniteLoss { epoch, batch: bi + 1 }.to_string());
                    break 'epochs;
                }
                Err(e @ Error::NonFiniteGradient { .. }) => {
                    report.aborted = Some(format!("epoch {epoch}, batch {}: {e}", bi + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        report.steps = opt.step_count();
        report.train_loss.push(sum / train.0.len() as f64);
        let v = evaluate_nll(&model, val.0, val.1, cfg.batch_size)?;
        report.val_loss.push(v);
        if validate_select(&report)? == epoch {
            best = model.clone();
            report.selected_epoch = epoch;
        }
    }
    Ok(TrainOutcome { report, model: best })
}

/// [`init_model`] followed by [`train_from`].
pub fn train(
    cfg: &TrainConfig,
    train: (&[SceneGraph], &[(f64, f64)]),
    val: (&[SceneGraph], &[(f64, f64)]),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = init_model(cfg, train.0, val.0)?;
    train_from(cfg, model, train, val)
}
