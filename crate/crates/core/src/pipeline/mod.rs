//! The gen → train → simulate → fixate → saliency → evaluate → report chain
//! over an artifact directory.
//!
//! Every command writes one write-once directory `<out>/<command>/` holding
//! its artifacts and a `manifest.json`.

pub mod config;
mod evaluate;
mod report;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{prepare_synthetic, window_samples, PreparedSequence, Sample};
use crate::error::{Error, Result};
use crate::graph::io::{read_gaze_csv, write_gaze_csv};
use crate::graph::{AppearanceProvider, GridAppearance, ZeroAppearance};
use crate::model::Model;
use crate::post::{
    build_saliency_map, detect_fixations, fixations_per_frame, preprocess_gaze, rank_object_salience,
    write_fixations_csv, write_map_csv, write_pgm, FixationEvent,
};
use crate::simulate::multi_run;
use crate::synth::{generate_sequence, read_sequence, scripted_gaze, write_sequence, Sequence};
use crate::trace::{GazeTrace, Provenance};
use crate::train::train;

pub use config::{parse_config, parse_config_str, AppearanceKind, DtwScale, PipelineConfig};
pub use evaluate::{Evaluation, MetricRow, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gen,
    Train,
    Simulate,
    Fixate,
    Saliency,
    Evaluate,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Gen,
        Command::Train,
        Command::Simulate,
        Command::Fixate,
        Command::Saliency,
        Command::Evaluate,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Simulate => "simulate",
            Command::Fixate => "fixate",
            Command::Saliency => "saliency",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }

    /// Stages whose artifacts must exist first.
    pub fn prerequisites(self) -> &'static [Command] {
        match self {
            Command::Gen => &[],
            Command::Train => &[Command::Gen],
            Command::Simulate => &[Command::Gen, Command::Train],
            Command::Fixate => &[Command::Gen, Command::Simulate],
            Command::Saliency => &[Command::Gen, Command::Fixate],
            Command::Evaluate => &[Command::Gen, Command::Train, Command::Simulate],
            Command::Report => &[Command::Gen, Command::Simulate, Command::Evaluate],
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    pub inputs: Vec<String>,
    /// Artifact paths relative to the command directory.
    pub outputs: Vec<String>,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Artifacts were written but the stage stopped early.
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub dir: PathBuf,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Artifact root.
    pub out: PathBuf,
    /// Replace an existing command directory.
    pub force: bool,
}

/// 0 success, 1 validation error, 2 runtime error or aborted run, 3 missing
/// prerequisite.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.status == RunStatus::Completed => 0,
        Ok(_) => 2,
        Err(Error::Config(_)) => 1,
        Err(Error::Prerequisite { .. }) => 3,
        Err(_) => 2,
    }
}

pub fn stage_dir(out: &Path, cmd: Command) -> PathBuf {
    out.join(cmd.name())
}

fn check_prerequisites(out: &Path, cmd: Command) -> Result<()> {
    for &p in cmd.prerequisites() {
        let m = stage_dir(out, p).join(MANIFEST);
        if !m.is_file() {
            return Err(Error::Prerequisite {
                stage: p.name(),
                path: m,
            });
        }
    }
    Ok(())
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        None => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn list_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            list_files(&p, root, out)?;
        } else if let Ok(rel) = p.strip_prefix(root) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Run one command. Validation and prerequisite checks happen before the
/// command directory is touched.
pub fn run_pipeline(cmd: Command, cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    retain_heap();
    check_prerequisites(&opts.out, cmd)?;
    let dir = stage_dir(&opts.out, cmd);
    prepare_dir(&dir, opts.force)?;
    let start = Instant::now();
    let status = match cmd {
        Command::Gen => run_gen(cfg, &dir)?,
        Command::Train => run_train(cfg, &opts.out, &dir)?,
        Command::Simulate => run_simulate(cfg, &opts.out, &dir)?,
        Command::Fixate => run_fixate(cfg, &opts.out, &dir)?,
        Command::Saliency => run_saliency(cfg, &opts.out, &dir)?,
        Command::Evaluate => evaluate::run(cfg, &opts.out, &dir)?,
        Command::Report => report::run(cfg, &opts.out, &dir)?,
    };
    let mut outputs = Vec::new();
    list_files(&dir, &dir, &mut outputs)?;
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config: cfg.clone(),
        inputs: cmd
            .prerequisites()
            .iter()
            .map(|p| stage_dir(&opts.out, *p).display().to_string())
            .collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(RunOutcome { status, dir, outputs })
}

/// Keep freed tensor buffers in the process heap instead of unmapping them,
/// so the next batch reuses them without page faults.
fn retain_heap() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        // SAFETY: mallopt only adjusts allocator thresholds.
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        });
    }
}

/// Run `commands` in order, stopping at the first failure or abort.
pub fn run_chain(commands: &[Command], cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut last = None;
    for &c in commands {
        let o = run_pipeline(c, cfg, opts)?;
        if o.status != RunStatus::Completed {
            return Ok(o);
        }
        last = Some(o);
    }
    last.ok_or_else(|| Error::Config("no commands to run".into()))
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub(crate) fn sequence_seed(base: u64, split: usize, index: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(split as u64 * 100_000)
        .wrapping_add(index as u64)
}

fn observer_file(k: usize) -> String {
    if k == 0 {
        "gaze.csv".into()
    } else {
        format!("observer_{k}.csv")
    }
}

/// Additional scripted observers of the same scene.
pub fn observer_gaze(seq: &Sequence, seed: u64, k: usize, policy: &crate::synth::GazePolicy) -> Result<GazeTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed).wrapping_add(k as u64 * 0x9e37_79b9));
    Ok(scripted_gaze(&seq.script, policy, &mut rng)?.trace)
}

fn run_gen(cfg: &PipelineConfig, dir: &Path) -> Result<RunStatus> {
    let d = &cfg.data;
    let splits = [
        ("train", d.train_sequences),
        ("val", d.val_sequences),
        ("test", d.test_sequences),
    ];
    let mut names: Vec<Vec<String>> = Vec::new();
    for (si, (split, n)) in splits.iter().enumerate() {
        let jobs: Vec<(usize, String)> = (0..*n).map(|i| (i, format!("{split}_{i:04}"))).collect();
        jobs.par_iter()
            .map(|(i, name)| {
                let seed = sequence_seed(cfg.seed, si, *i);
                let seq = generate_sequence(seed, &d.script, &d.policy)?;
                let sd = dir.join("sequences").join(name);
                write_sequence(&sd, &seq)?;
                if *split == "test" {
                    for k in 1..d.observers {
                        write_gaze_csv(&sd.join(observer_file(k)), &observer_gaze(&seq, seed, k, &d.policy)?)?;
                    }
                }
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        names.push(jobs.into_iter().map(|(_, n)| n).collect());
    }
    let split = Split {
        test: names.pop().unwrap_or_default(),
        val: names.pop().unwrap_or_default(),
        train: names.pop().unwrap_or_default(),
    };
    write_json(&dir.join("split.json"), &split)?;
    Ok(RunStatus::Completed)
}

pub(crate) fn read_split(out: &Path) -> Result<Split> {
    read_json(&stage_dir(out, Command::Gen).join("split.json"))
}

pub(crate) fn sequence_dir(out: &Path, name: &str) -> PathBuf {
    stage_dir(out, Command::Gen).join("sequences").join(name)
}

pub(crate) fn provider(kind: AppearanceKind) -> Box<dyn AppearanceProvider> {
    match kind {
        AppearanceKind::Grid => Box::new(GridAppearance::default()),
        AppearanceKind::Zero => Box::new(ZeroAppearance),
    }
}

pub(crate) fn load_prepared(out: &Path, name: &str, rate: f64) -> Result<(Sequence, PreparedSequence)> {
    let seq = read_sequence(&sequence_dir(out, name))?;
    let p = prepare_synthetic(&seq, rate)?;
    Ok((seq, p))
}

pub(crate) fn split_samples(cfg: &PipelineConfig, out: &Path, names: &[String]) -> Result<Vec<Sample>> {
    let prov = provider(cfg.data.appearance);
    let per: Vec<Vec<Sample>> = names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let (_, p) = load_prepared(out, name, cfg.rate)?;
            window_samples(
                &p,
                i,
                cfg.window,
                &cfg.t_d,
                cfg.data.stride,
                prov.as_ref(),
                cfg.frame_dims,
            )
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

// ---------------------------------------------------------------- train

pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_REPORT: &str = "train_report.json";

fn run_train(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let split = read_split(out)?;
    let tr = split_samples(cfg, out, &split.train)?;
    let va = split_samples(cfg, out, &split.val)?;
    let unpack = |s: &[Sample]| -> (Vec<_>, Vec<_>) { s.iter().map(|s| (s.graph.clone(), s.target)).unzip() };
    let (tg, ty) = unpack(&tr);
    let (vg, vy) = unpack(&va);
    let outcome = train(&cfg.train_config(), (&tg, &ty), (&vg, &vy))?;
    outcome.model.save(&dir.join(CHECKPOINT))?;
    write_json(&dir.join(TRAIN_REPORT), &outcome.report)?;
    Ok(match outcome.report.aborted {
        Some(why) => RunStatus::Aborted(why),
        None => RunStatus::Completed,
    })
}

/// The trained checkpoint, with any triplet absent from training
/// instantiated at its seeded initial value.
pub(crate) fn load_model(out: &Path) -> Result<Model> {
    let mut m = Model::load(&stage_dir(out, Command::Train).join(CHECKPOINT))?;
    m.register_all_edge_types()?;
    Ok(m)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub sequence: String,
    pub run: u32,
    pub seed: u64,
    pub horizon: usize,
    pub window: usize,
    pub offsets: Vec<usize>,
    pub rate: f64,
    pub checkpoint: String,
}

pub(crate) fn run_file(run: usize) -> String {
    format!("run_{run:03}.csv")
}

pub(crate) fn rollout_seed(cfg: &PipelineConfig, seq_index: usize) -> u64 {
    cfg.seed.wrapping_add(0x51_3a7e).wrapping_add(seq_index as u64 * 10_007)
}

fn run_simulate(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let split = read_split(out)?;
    let model = load_model(out)?;
    let prov = provider(cfg.data.appearance);
    for (i, name) in split.test.iter().enumerate() {
        let (_, p) = load_prepared(out, name, cfg.rate)?;
        let rc = crate::simulate::RolloutConfig {
            seed: rollout_seed(cfg, i),
            ..cfg.rollout_config()
        };
        let runs = multi_run(&model, &p.frames, &rc, prov.as_ref())?;
        let sd = dir.join(name);
        for (r, ro) in runs.iter().enumerate() {
            ensure_parent(&sd.join(run_file(r)))?;
            write_gaze_csv(&sd.join(run_file(r)), &ro.trace)?;
            let seed = match ro.trace.provenance {
                Provenance::Simulated { seed, .. } => seed,
                Provenance::Human => rc.seed,
            };
            let side = RunSidecar {
                sequence: name.clone(),
                run: r as u32,
                seed,
                horizon: rc.horizon,
                window: rc.window,
                offsets: rc.offsets.clone(),
                rate: rc.rate,
                checkpoint: format!("{}/{CHECKPOINT}", Command::Train.name()),
            };
            write_json(&sd.join(format!("run_{r:03}.json")), &side)?;
        }
        if cfg.simulate.record_weights {
            let w: Vec<_> = runs.iter().filter_map(|r| r.weights.clone()).collect();
            write_json(&sd.join("salience.json"), &rank_object_salience(&w))?;
        }
    }
    Ok(RunStatus::Completed)
}

pub(crate) fn read_runs(out: &Path, name: &str, runs: usize) -> Result<Vec<GazeTrace>> {
    let sd = stage_dir(out, Command::Simulate).join(name);
    (0..runs)
        .map(|r| {
            let mut t = read_gaze_csv(&sd.join(run_file(r)))?;
            let side: RunSidecar = read_json(&sd.join(format!("run_{r:03}.json")))?;
            t.rate = side.rate;
            t.provenance = Provenance::Simulated {
                run: side.run,
                seed: side.seed,
            };
            Ok(t)
        })
        .collect()
}

/// Observer traces of a test sequence at the graph rate over the simulated
/// span `[window, window + horizon)`.
pub(crate) fn human_segments(cfg: &PipelineConfig, out: &Path, name: &str) -> Result<Vec<GazeTrace>> {
    let sd = sequence_dir(out, name);
    let (a, b) = (cfg.window, cfg.window + cfg.simulate.horizon);
    (0..cfg.data.observers)
        .map(|k| {
            let raw = read_gaze_csv(&sd.join(observer_file(k)))?;
            let mut t = preprocess_gaze(&raw, cfg.rate)?;
            if t.len() < b {
                return Err(Error::FrameUnderrun(t.len() + 1));
            }
            t.samples = t.samples[a..b].to_vec();
            t.rate = cfg.rate;
            Ok(t)
        })
        .collect()
}

// ---------------------------------------------------------------- fixate

pub(crate) fn fixations(cfg: &PipelineConfig, t: &GazeTrace) -> Result<Vec<FixationEvent>> {
    detect_fixations(t, cfg.fixate.t0, cfg.fixate.t1, cfg.fixate.min_duration)
}

fn run_fixate(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let split = read_split(out)?;
    for name in &split.test {
        for (r, t) in read_runs(out, name, cfg.simulate.runs)?.iter().enumerate() {
            ensure_parent(&dir.join("model").join(name).join(run_file(r)))?;
            write_fixations_csv(&dir.join("model").join(name).join(run_file(r)), &fixations(cfg, t)?)?;
        }
        for (k, t) in human_segments(cfg, out, name)?.iter().enumerate() {
            let p = dir.join("human").join(name).join(format!("observer_{k}.csv"));
            ensure_parent(&p)?;
            write_fixations_csv(&p, &fixations(cfg, t)?)?;
        }
    }
    Ok(RunStatus::Completed)
}

// ---------------------------------------------------------------- saliency

/// Fixation centroids per video frame over the simulated span.
pub(crate) fn frame_fixations(cfg: &PipelineConfig, fps: f64, fix: &[FixationEvent]) -> Vec<Vec<(f64, f64)>> {
    let t0 = cfg.window as f64 / cfg.rate;
    let n_frames = (cfg.simulate.horizon as f64 / cfg.rate * fps).floor() as usize;
    let shifted: Vec<FixationEvent> = fix
        .iter()
        .map(|f| FixationEvent {
            onset: f.onset - t0,
            ..*f
        })
        .collect();
    fixations_per_frame(&shifted, n_frames, fps)
}

fn run_saliency(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let split = read_split(out)?;
    let fdir = stage_dir(out, Command::Fixate);
    let dims = (cfg.saliency.width, cfg.saliency.height);
    for name in &split.test {
        let fps = read_sequence(&sequence_dir(out, name))?.scene.fps;
        let groups = [
            ("model", (0..cfg.simulate.runs).map(run_file).collect::<Vec<_>>()),
            (
                "human",
                (0..cfg.data.observers).map(|k| format!("observer_{k}.csv")).collect(),
            ),
        ];
        for (group, files) in groups {
            let mut per_frame: Vec<Vec<(f64, f64)>> = Vec::new();
            for f in &files {
                let fx = crate::post::read_fixations_csv(&fdir.join(group).join(name).join(f))?;
                let ff = frame_fixations(cfg, fps, &fx);
                if per_frame.is_empty() {
                    per_frame = vec![Vec::new(); ff.len()];
                }
                for (a, b) in per_frame.iter_mut().zip(ff) {
                    a.extend(b);
                }
            }
            for m in build_saliency_map(&per_frame, dims)? {
                let base = dir.join(name).join(group).join(format!("frame_{:03}", m.frame));
                ensure_parent(&base.with_extension("csv"))?;
                write_map_csv(&base.with_extension("csv"), &m)?;
                write_pgm(&base.with_extension("pgm"), &m)?;
            }
        }
    }
    Ok(RunStatus::Completed)
}
