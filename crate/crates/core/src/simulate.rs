//! Autoregressive gaze rollout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GRAPH_RATE;
use crate::error::{Error, Result};
use crate::graph::{advance_window, assemble_window_graph, AppearanceProvider, FrameInput, NodeType, SceneGraph};
use crate::model::{sample_gaze, GmmPrediction, HeadKind, Model, ModelConfig};
use crate::post::{FrameWeights, NodeWeight};
use crate::trace::{GazeSample, GazeTrace, Provenance};

/// Anything that maps a window graph to a next-gaze mixture.
pub trait GazeModel: Sync {
    fn predict(&self, g: &SceneGraph) -> Result<GmmPrediction>;
}

impl GazeModel for Model {
    fn predict(&self, g: &SceneGraph) -> Result<GmmPrediction> {
        Model::predict(self, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub window: usize,
    pub offsets: Vec<usize>,
    /// Keep per-step mixing weights for salience ranking.
    pub record_weights: bool,
    pub rate: f64,
    pub frame_dims: (f64, f64),
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            runs: 50,
            seed: 0,
            window: crate::graph::DEFAULT_WINDOW,
            offsets: crate::graph::DEFAULT_OFFSETS.to_vec(),
            record_weights: false,
            rate: GRAPH_RATE,
            frame_dims: (640.0, 320.0),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.runs == 0 {
            return Err(Error::Config("horizon and runs must be at least 1".into()));
        }
        if self.window == 0 || !(self.rate > 0.0) {
            return Err(Error::Config("window must be at least 1 and rate positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// The `horizon` sampled positions, timed after the warmup.
    pub trace: GazeTrace,
    pub weights: Option<Vec<FrameWeights>>,
}

fn step_weights(g: &SceneGraph, pred: &GmmPrediction, step: usize) -> FrameWeights {
    let base = g.last_step().first().map_or(0, |n| n.id);
    let weights = pred
        .components
        .iter()
        .filter_map(|c| {
            c.node.map(|n| NodeWeight {
                slot: n.id - base,
                node_type: n.node_type,
                track: n.track,
                weight: c.pi,
            })
        })
        .collect();
    FrameWeights { step, weights }
}

/// One rollout: the first `window` frames (with their recorded gaze) seed
/// the graph, then each step samples a gaze and slides the window onto the
/// next frame.
pub fn rollout_run<M: GazeModel + ?Sized>(
    model: &M,
    frames: &[FrameInput],
    cfg: &RolloutConfig,
    provider: &dyn AppearanceProvider,
    run: u32,
) -> Result<Rollout> {
    cfg.validate()?;
    let needed = cfg.window + cfg.horizon;
    if frames.len() < needed {
        return Err(Error::FrameUnderrun(frames.len() + 1));
    }
    let seed = cfg.seed.wrapping_add(u64::from(run));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = assemble_window_graph(&frames[..cfg.window], &cfg.offsets, provider, cfg.frame_dims)?;
    let mut samples = Vec::with_capacity(cfg.horizon);
    let mut weights = cfg.record_weights.then(Vec::new);
    for h in 0..cfg.horizon {
        let pred = model.predict(&g)?;
        if let Some(w) = weights.as_mut() {
            w.push(step_weights(&g, &pred, h));
        }
        let (x, y) = sample_gaze(&pred, &mut rng)?;
        let (x, y) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
        let step = cfg.window + h;
        samples.push(GazeSample {
            t: step as f64 / cfg.rate,
            x,
            y,
            valid: true,
        });
        if h + 1 < cfg.horizon {
            g = advance_window(&g, &frames[step], (x, y), provider)?;
        }
    }
    Ok(Rollout {
        trace: GazeTrace {
            samples,
            rate: cfg.rate,
            provenance: Provenance::Simulated { run, seed },
        },
        weights,
    })
}

/// Single rollout seeded with `cfg.seed`.
pub fn rollout<M: GazeModel + ?Sized>(
    model: &M,
    frames: &[FrameInput],
    cfg: &RolloutConfig,
    provider: &dyn AppearanceProvider,
) -> Result<Rollout> {
    rollout_run(model, frames, cfg, provider, 0)
}

/// `cfg.runs` independent rollouts seeded `seed, seed + 1, …`, in run order.
pub fn multi_run<M: GazeModel + ?Sized>(
    model: &M,
    frames: &[FrameInput],
    cfg: &RolloutConfig,
    provider: &dyn AppearanceProvider,
) -> Result<Vec<Rollout>> {
    cfg.validate()?;
    (0..cfg.runs as u32)
        .into_par_iter()
        .map(|r| rollout_run(model, frames, cfg, provider, r))
        .collect()
}

/// ODN model whose head ignores node states: the gaze node takes all the
/// mixing weight and every component has standard deviation `sigma`.
pub fn fixation_model(config: ModelConfig, sigma: f64) -> Result<Model> {
    let config = ModelConfig {
        head: HeadKind::Odn,
        ..config
    };
    let mut m = Model::new(config)?;
    m.register_all_edge_types()?;
    let ls = sigma.ln();
    for ty in NodeType::ALL {
        let n = ty.name();
        m.fill_param(&format!("odn.{n}.w"), 0.0)?;
        let logit = if ty == NodeType::Gaze { 30.0 } else { -30.0 };
        let id = m.params.id(&format!("odn.{n}.b")).expect("registered head bias");
        m.params
            .value_mut(id)
            .data_mut()
            .copy_from_slice(&[0.0, 0.0, ls, ls, 0.0, logit]);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::prepare_synthetic;
    use crate::graph::GridAppearance;
    use crate::synth::{generate_sequence, GazePolicy, ScriptConfig};

    fn frames() -> Vec<FrameInput> {
        let s = generate_sequence(
            3,
            &ScriptConfig {
                duration: 3.0,
                ..ScriptConfig::default()
            },
            &GazePolicy::default(),
        )
        .unwrap();
        prepare_synthetic(&s, GRAPH_RATE).unwrap().frames
    }

    fn cfg() -> RolloutConfig {
        RolloutConfig {
            horizon: 20,
            runs: 3,
            seed: 7,
            window: 4,
            offsets: vec![1, 2],
            ..RolloutConfig::default()
        }
    }

    fn small_model() -> Model {
        let mut m = Model::new(ModelConfig {
            d: 16,
            ffn_hidden: 16,
            ..ModelConfig::default()
        })
        .unwrap();
        m.register_all_edge_types().unwrap();
        m
    }

    #[test]
    fn fixation_limit_stays_put() {
        let f = frames();
        let m = fixation_model(
            ModelConfig {
                d: 16,
                ffn_hidden: 16,
                ..ModelConfig::default()
            },
            1e-6,
        )
        .unwrap();
        let r = rollout(&m, &f, &cfg(), &GridAppearance::default()).unwrap();
        let (gx, gy) = f[3].gaze.unwrap();
        for s in &r.trace.samples {
            assert!((s.x - gx).abs() < 1e-3 && (s.y - gy).abs() < 1e-3);
        }
    }

    #[test]
    fn horizon_and_timing() {
        let f = frames();
        let c = RolloutConfig { horizon: 50, ..cfg() };
        let r = rollout(&small_model(), &f, &c, &GridAppearance::default()).unwrap();
        assert_eq!(r.trace.len(), 50);
        r.trace.check_uniform().unwrap();
        assert!((r.trace.samples[0].t - 4.0 / 20.0).abs() < 1e-12);
        assert_eq!(r.trace.provenance, Provenance::Simulated { run: 0, seed: 7 });
    }

    #[test]
    fn same_seed_same_trace() {
        let f = frames();
        let m = small_model();
        let a = rollout(&m, &f, &cfg(), &GridAppearance::default()).unwrap();
        let b = rollout(&m, &f, &cfg(), &GridAppearance::default()).unwrap();
        assert_eq!(a, b);
        let c = rollout(&m, &f, &RolloutConfig { seed: 8, ..cfg() }, &GridAppearance::default()).unwrap();
        assert_ne!(a.trace.samples, c.trace.samples);
    }

    #[test]
    fn underrun_names_missing_step() {
        let f = frames();
        let c = RolloutConfig { horizon: 100, ..cfg() };
        match rollout(&small_model(), &f[..30], &c, &GridAppearance::default()) {
            Err(Error::FrameUnderrun(t)) => assert_eq!(t, 31),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multi_run_matches_individual_runs() {
        let f = frames();
        let m = small_model();
        let runs = multi_run(&m, &f, &cfg(), &GridAppearance::default()).unwrap();
        assert_eq!(runs.len(), 3);
        for (i, r) in runs.iter().enumerate().rev() {
            let single = rollout_run(&m, &f, &cfg(), &GridAppearance::default(), i as u32).unwrap();
            assert_eq!(r, &single);
        }
        let one = multi_run(&m, &f, &RolloutConfig { runs: 1, ..cfg() }, &GridAppearance::default()).unwrap();
        assert_eq!(one[0], rollout(&m, &f, &cfg(), &GridAppearance::default()).unwrap());
    }

    #[test]
    fn later_frames_do_not_change_earlier_samples() {
        let f = frames();
        let m = small_model();
        let a = rollout(&m, &f, &cfg(), &GridAppearance::default()).unwrap();
        let mut edited = f.clone();
        let cut = 4 + 10;
        for fr in &mut edited[cut..] {
            fr.detections.clear();
        }
        let b = rollout(&m, &edited, &cfg(), &GridAppearance::default()).unwrap();
        // the sample at step h only sees frames up to window + h - 1
        assert_eq!(a.trace.samples[..=10], b.trace.samples[..=10]);
        assert_ne!(a.trace.samples, b.trace.samples);
    }

    #[test]
    fn recorded_weights_sum_to_one() {
        let f = frames();
        let c = RolloutConfig {
            record_weights: true,
            ..cfg()
        };
        let r = rollout(&small_model(), &f, &c, &GridAppearance::default()).unwrap();
        let w = r.weights.unwrap();
        assert_eq!(w.len(), 20);
        for fw in &w {
            let s: f64 = fw.weights.iter().map(|n| n.weight).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
