//! Scripted synthetic scenes and gaze policies with known attention labels.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::io::{read_detections, read_gaze_csv, read_masks, write_detections, write_gaze_csv, write_masks};
use crate::graph::{Detection, DetectorLabel, StructureMask, APPEARANCE_DIM};
use crate::trace::{GazeSample, GazeTrace, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScript {
    pub id: u32,
    pub label: String,
    /// `(t_sec, x, y)`, strictly increasing in time; the track is visible
    /// between its first and last waypoint.
    pub waypoints: Vec<(f64, f64, f64)>,
    pub size: (f64, f64),
    /// `(t_sec, depth)` control points, linearly interpolated.
    pub depth: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub track: u32,
    pub onset: f64,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub tracks: Vec<TrackScript>,
    pub hazards: Vec<Hazard>,
    /// Video frame rate.
    pub fps: f64,
    pub duration: f64,
    pub seed: u64,
}

/// Per-frame detections and masks at the script's frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub fps: f64,
    pub frames: Vec<Vec<Detection>>,
    pub masks: Vec<StructureMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    AttendNearestHazard,
    CenterBias,
    PursuitOf { track: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazePolicy {
    pub kind: PolicyKind,
    /// Delay between a target change and the saccade onset (s).
    pub saccade_latency: f64,
    /// Samples taken by the linear saccade jump.
    pub saccade_steps: usize,
    /// Isotropic fixation noise σ (normalised units).
    pub noise: f64,
    /// Fixation duration range for free viewing (s).
    pub fixation_duration: (f64, f64),
    /// Spread of free-viewing fixation targets around the centre.
    pub center_spread: f64,
    /// Native sampling rate (Hz).
    pub rate: f64,
    /// Expected blinks per second.
    pub blink_rate: f64,
    pub blink_duration: f64,
}

impl Default for GazePolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::AttendNearestHazard,
            saccade_latency: 0.15,
            saccade_steps: 2,
            noise: 0.01,
            fixation_duration: (0.3, 0.6),
            center_spread: 0.08,
            rate: 60.0,
            blink_rate: 0.2,
            blink_duration: 0.1,
        }
    }
}

/// Raw gaze with the attended track per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedGaze {
    pub trace: GazeTrace,
    pub labels: Vec<Option<u32>>,
}

fn lerp_series(points: &[(f64, f64)], t: f64) -> f64 {
    if t <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        if t <= w[1].0 {
            let a = (t - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + a * (w[1].1 - w[0].1);
        }
    }
    points[points.len() - 1].1
}

impl TrackScript {
    pub fn visible(&self, t: f64) -> bool {
        let first = self.waypoints[0].0;
        let last = self.waypoints[self.waypoints.len() - 1].0;
        t >= first - 1e-9 && t <= last + 1e-9
    }

    pub fn position(&self, t: f64) -> (f64, f64) {
        let xs: Vec<(f64, f64)> = self.waypoints.iter().map(|w| (w.0, w.1)).collect();
        let ys: Vec<(f64, f64)> = self.waypoints.iter().map(|w| (w.0, w.2)).collect();
        (lerp_series(&xs, t), lerp_series(&ys, t))
    }

    pub fn depth_at(&self, t: f64) -> f64 {
        if self.depth.is_empty() {
            0.5
        } else {
            lerp_series(&self.depth, t)
        }
    }

    fn validate(&self) -> Result<()> {
        DetectorLabel::parse(&self.label)
            .map_err(|_| Error::Script(format!("track {} has unknown label `{}`", self.id, self.label)))?;
        if self.waypoints.is_empty() {
            return Err(Error::Script(format!("track {} has no waypoints", self.id)));
        }
        for &(t, x, y) in &self.waypoints {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::Script(format!(
                    "track {} waypoint ({x}, {y}) at t={t} outside [0, 1]²",
                    self.id
                )));
            }
        }
        if self.waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Script(format!("track {} waypoint times must increase", self.id)));
        }
        if self.depth.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Script(format!("track {} depth times must increase", self.id)));
        }
        Ok(())
    }
}

impl SceneScript {
    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps + 1e-9).floor() as usize
    }

    pub fn track(&self, id: u32) -> Option<&TrackScript> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.duration > 0.0) {
            return Err(Error::Script("frame rate and duration must be positive".into()));
        }
        let mut ids: Vec<u32> = self.tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Script("duplicate track id".into()));
        }
        for t in &self.tracks {
            t.validate()?;
        }
        for h in &self.hazards {
            if self.track(h.track).is_none() {
                return Err(Error::Script(format!("hazard references unknown track {}", h.track)));
            }
        }
        Ok(())
    }

    /// Hazard track with the smallest depth among those active and visible
    /// at `t`; ties go to the lower track id.
    pub fn nearest_hazard(&self, t: f64) -> Option<u32> {
        self.hazards
            .iter()
            .filter(|h| h.onset <= t + 1e-9)
            .filter_map(|h| self.track(h.track))
            .filter(|tr| tr.visible(t))
            .min_by(|a, b| a.depth_at(t).total_cmp(&b.depth_at(t)).then(a.id.cmp(&b.id)))
            .map(|tr| tr.id)
    }
}

fn unit_vector(seed: u64, track: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(track) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let v: Vec<f64> = (0..APPEARANCE_DIM).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Detections for every video frame. Appearance vectors are fixed random
/// unit vectors per track; the drivable mask is the lower half.
pub fn generate_scene(script: &SceneScript) -> Result<Scene> {
    script.validate()?;
    let appearance: Vec<Vec<f64>> = script.tracks.iter().map(|t| unit_vector(script.seed, t.id)).collect();
    let n = script.n_frames();
    let mut frames = Vec::with_capacity(n);
    for f in 0..n {
        let t = f as f64 / script.fps;
        let dets = script
            .tracks
            .iter()
            .zip(&appearance)
            .filter(|(tr, _)| tr.visible(t))
            .map(|(tr, app)| {
                let (x, y) = tr.position(t);
                Detection {
                    label: tr.label.clone(),
                    bbox: [x, y, tr.size.0, tr.size.1],
                    score: 0.9,
                    depth: tr.depth_at(t),
                    appearance: Some(app.clone()),
                    track: Some(tr.id),
                }
            })
            .collect();
        frames.push(dets);
    }
    Ok(Scene {
        fps: script.fps,
        frames,
        masks: vec![StructureMask::lower_half(); n],
    })
}

/// Knobs for random script generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptConfig {
    pub duration: f64,
    pub fps: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_hazards: usize,
    /// Maximum object speed (normalised units per second).
    pub max_speed: f64,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            fps: 10.0,
            min_objects: 3,
            max_objects: 8,
            max_hazards: 3,
            max_speed: 0.08,
        }
    }
}

const RANDOM_LABELS: [&str; 6] = ["car", "car", "truck", "person", "bicycle", "traffic light"];

/// A random script: objects drift linearly across the frame with slowly
/// changing depth; the first hazard is active from the start.
pub fn random_script(seed: u64, cfg: &ScriptConfig) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects.max(cfg.min_objects));
    let dur = cfg.duration;
    let tracks: Vec<TrackScript> = (0..n as u32)
        .map(|id| {
            let label = RANDOM_LABELS[rng.random_range(0..RANDOM_LABELS.len())].to_string();
            let still = label == "traffic light";
            let start = (rng.random_range(0.1..0.9), rng.random_range(0.3..0.85));
            let (vx, vy) = if still {
                (0.0, 0.0)
            } else {
                (
                    rng.random_range(-cfg.max_speed..cfg.max_speed),
                    rng.random_range(-cfg.max_speed..cfg.max_speed) * 0.5,
                )
            };
            let end = (
                (start.0 + vx * dur).clamp(0.02, 0.98),
                (start.1 + vy * dur).clamp(0.02, 0.98),
            );
            let depth0: f64 = rng.random_range(0.1..0.9);
            let depth1 = (depth0 + rng.random_range(-0.4..0.4)).clamp(0.05, 0.95);
            TrackScript {
                id,
                label,
                waypoints: vec![(0.0, start.0, start.1), (dur, end.0, end.1)],
                size: (rng.random_range(0.04..0.15), rng.random_range(0.04..0.15)),
                depth: vec![(0.0, depth0), (dur, depth1)],
            }
        })
        .collect();
    let n_hazards = rng.random_range(1..=cfg.max_hazards.max(1)).min(n);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    let mut hazards = Vec::new();
    for h in 0..n_hazards {
        let pick = rng.random_range(0..ids.len());
        let track = ids.swap_remove(pick);
        let onset = if h == 0 { 0.0 } else { rng.random_range(0.0..dur * 0.8) };
        hazards.push(Hazard {
            track,
            onset,
            severity: rng.random_range(0.5..1.0),
        });
    }
    SceneScript {
        tracks,
        hazards,
        fps: cfg.fps,
        duration: dur,
        seed,
    }
}

/// Gaze generated by `policy` over the scene's duration at the policy's
/// native rate, with blinks marked invalid.
pub fn scripted_gaze<R: Rng + ?Sized>(script: &SceneScript, policy: &GazePolicy, rng: &mut R) -> Result<ScriptedGaze> {
    if !(policy.rate > 0.0) || policy.noise < 0.0 {
        return Err(Error::Config(
            "gaze policy needs a positive rate and non-negative noise".into(),
        ));
    }
    let n = (script.duration * policy.rate + 1e-9).floor() as usize;
    let dt = 1.0 / policy.rate;
    let noise = Normal::new(0.0, policy.noise.max(1e-300)).map_err(|e| Error::Config(e.to_string()))?;
    let latency_steps = (policy.saccade_latency * policy.rate).round() as usize;
    let jump = policy.saccade_steps.max(1);

    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut current: Option<u32> = None;
    let mut pos = (0.5, 0.5);
    let mut pending: Option<(Option<u32>, usize)> = None;
    let mut saccade: Option<((f64, f64), usize)> = None;
    let mut free_target = (0.5, 0.5);
    let mut free_left = 0usize;

    let aim = |id: Option<u32>, t: f64, free: (f64, f64)| -> (f64, f64) {
        match id.and_then(|i| script.track(i)) {
            Some(tr) if tr.visible(t) => tr.position(t),
            _ => free,
        }
    };

    for i in 0..n {
        let t = i as f64 * dt;
        let wanted = match policy.kind {
            PolicyKind::AttendNearestHazard => script.nearest_hazard(t),
            PolicyKind::CenterBias => None,
            PolicyKind::PursuitOf { track } => script.track(track).filter(|tr| tr.visible(t)).map(|tr| tr.id),
        };
        if i == 0 {
            current = wanted;
            pos = aim(current, t, free_target);
        } else if wanted != current && pending.map(|p| p.0) != Some(wanted) {
            pending = Some((wanted, i + latency_steps));
        } else if wanted == current {
            pending = None;
        }
        if let Some((target, at)) = pending {
            if i >= at {
                current = target;
                pending = None;
                saccade = Some((pos, 0));
            }
        }
        if current.is_none() {
            if free_left == 0 {
                let (lo, hi) = policy.fixation_duration;
                let d = if hi > lo { rng.random_range(lo..hi) } else { lo };
                free_left = ((d * policy.rate).round() as usize).max(1);
                let sx: f64 = rng.sample(StandardNormal);
                let sy: f64 = rng.sample(StandardNormal);
                let next = (
                    (0.5 + policy.center_spread * sx).clamp(0.05, 0.95),
                    (0.5 + policy.center_spread * sy).clamp(0.05, 0.95),
                );
                if i > 0 && saccade.is_none() {
                    saccade = Some((pos, 0));
                }
                free_target = next;
            }
            free_left -= 1;
        }
        let goal = aim(current, t, free_target);
        let base = match saccade {
            Some((from, k)) => {
                let a = (k + 1) as f64 / jump as f64;
                if k + 1 >= jump {
                    saccade = None;
                } else {
                    saccade = Some((from, k + 1));
                }
                (from.0 + a * (goal.0 - from.0), from.1 + a * (goal.1 - from.1))
            }
            None => goal,
        };
        pos = base;
        let x = (base.0 + noise.sample(rng)).clamp(0.0, 1.0);
        let y = (base.1 + noise.sample(rng)).clamp(0.0, 1.0);
        samples.push(GazeSample { t, x, y, valid: true });
        labels.push(current);
    }

    // blinks: Poisson arrivals, each hiding a short span
    if policy.blink_rate > 0.0 && n > 0 {
        let blink_len = ((policy.blink_duration * policy.rate).round() as usize).max(1);
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / policy.blink_rate;
            let start = (t * policy.rate) as usize;
            if start >= n {
                break;
            }
            // keep the very first and last samples valid
            for s in samples
                .iter_mut()
                .take((start + blink_len).min(n - 1))
                .skip(start.max(1))
            {
                s.valid = false;
                s.x = 0.0;
                s.y = 0.0;
            }
        }
    }

    Ok(ScriptedGaze {
        trace: GazeTrace {
            samples,
            rate: policy.rate,
            provenance: Provenance::Human,
        },
        labels,
    })
}

/// One generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub script: SceneScript,
    pub scene: Scene,
    pub gaze: ScriptedGaze,
}

pub fn generate_sequence(seed: u64, cfg: &ScriptConfig, policy: &GazePolicy) -> Result<Sequence> {
    let script = random_script(seed, cfg);
    let scene = generate_scene(&script)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let gaze = scripted_gaze(&script, policy, &mut rng)?;
    Ok(Sequence { script, scene, gaze })
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    t_sec: f64,
    track: Option<u32>,
}

/// Write `detections.jsonl`, `masks.jsonl`, `gaze.csv`, `labels.csv` and
/// `script.json` into `dir`.
pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_detections(&dir.join("detections.jsonl"), &seq.scene.frames)?;
    write_masks(&dir.join("masks.jsonl"), &seq.scene.masks)?;
    write_gaze_csv(&dir.join("gaze.csv"), &seq.gaze.trace)?;
    let lp = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&lp).map_err(|e| Error::Csv(format!("{}: {e}", lp.display())))?;
    for (s, l) in seq.gaze.trace.samples.iter().zip(&seq.gaze.labels) {
        w.serialize(LabelRow { t_sec: s.t, track: *l })
            .map_err(|e| Error::Csv(format!("{}: {e}", lp.display())))?;
    }
    w.flush().map_err(|e| Error::io(&lp, e))?;
    let sp = dir.join("script.json");
    fs::write(&sp, serde_json::to_string_pretty(&seq.script)?).map_err(|e| Error::io(&sp, e))
}

/// Read a sequence written by [`write_sequence`].
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let sp = dir.join("script.json");
    let script: SceneScript = serde_json::from_str(&fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?)?;
    let dets = read_detections(&dir.join("detections.jsonl"))?;
    let masks = read_masks(&dir.join("masks.jsonl"))?;
    let frames = (0..masks.len())
        .map(|i| dets.get(&i).cloned().unwrap_or_default())
        .collect();
    let trace = read_gaze_csv(&dir.join("gaze.csv"))?;
    let lp = dir.join("labels.csv");
    let mut rdr = csv::Reader::from_path(&lp).map_err(|e| Error::Csv(format!("{}: {e}", lp.display())))?;
    let labels = rdr
        .deserialize::<LabelRow>()
        .map(|r| {
            r.map(|r| r.track)
                .map_err(|e| Error::Csv(format!("{}: {e}", lp.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        scene: Scene {
            fps: script.fps,
            frames,
            masks,
        },
        script,
        gaze: ScriptedGaze { trace, labels },
    })
}
