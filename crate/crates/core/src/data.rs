//! Turning recorded sequences into graph-rate frames and training windows.

use crate::error::{Error, Result};
use crate::graph::io::{attach_gaze, upsample_frames};
use crate::graph::{assemble_window_graph, AppearanceProvider, FrameInput, SceneGraph};
use crate::post::preprocess_gaze;
use crate::synth::Sequence;
use crate::trace::GazeTrace;

/// Graph timestep rate (Hz).
pub const GRAPH_RATE: f64 = 20.0;

/// Frames and gaze aligned one-to-one at the graph rate.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    /// Frames with the recorded gaze attached.
    pub frames: Vec<FrameInput>,
    pub gaze: GazeTrace,
    /// Attended track per step, when known.
    pub labels: Vec<Option<u32>>,
}

impl PreparedSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Upsample video frames and preprocess raw gaze onto `rate`, truncating
/// both to the shorter stream. Raw per-sample labels are picked at the
/// nearest raw sample.
pub fn prepare_sequence(
    video: &[FrameInput],
    fps: f64,
    raw_gaze: &GazeTrace,
    raw_labels: Option<&[Option<u32>]>,
    rate: f64,
) -> Result<PreparedSequence> {
    let mut frames = upsample_frames(video, fps, rate)?;
    let mut gaze = preprocess_gaze(raw_gaze, rate)?;
    let n = frames.len().min(gaze.len());
    frames.truncate(n);
    gaze.samples.truncate(n);
    attach_gaze(&mut frames, &gaze)?;
    let labels = match raw_labels {
        Some(l) if !l.is_empty() => {
            let t0 = raw_gaze.samples[0].t;
            gaze.samples
                .iter()
                .map(|s| {
                    let i = ((s.t - t0) * raw_gaze.rate).round().max(0.0) as usize;
                    l[i.min(l.len() - 1)]
                })
                .collect()
        }
        _ => vec![None; n],
    };
    Ok(PreparedSequence { frames, gaze, labels })
}

pub fn prepare_synthetic(seq: &Sequence, rate: f64) -> Result<PreparedSequence> {
    let video: Vec<FrameInput> = seq
        .scene
        .frames
        .iter()
        .zip(&seq.scene.masks)
        .map(|(d, m)| FrameInput {
            detections: d.clone(),
            mask: m.clone(),
            gaze: None,
            feature_grid: None,
        })
        .collect();
    prepare_sequence(&video, seq.scene.fps, &seq.gaze.trace, Some(&seq.gaze.labels), rate)
}

/// A window graph and the gaze one step after its final timestep.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: SceneGraph,
    pub target: (f64, f64),
    /// Attended track at the target step.
    pub label: Option<u32>,
    pub sequence: usize,
    /// Index of the target step within its sequence.
    pub step: usize,
}

/// Windows of `window` steps every `stride` steps, each paired with the
/// following gaze position.
pub fn window_samples(
    seq: &PreparedSequence,
    sequence: usize,
    window: usize,
    offsets: &[usize],
    stride: usize,
    provider: &dyn AppearanceProvider,
    frame_dims: (f64, f64),
) -> Result<Vec<Sample>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut end = window;
    while end < seq.len() {
        let graph = assemble_window_graph(&seq.frames[end - window..end], offsets, provider, frame_dims)?;
        let s = &seq.gaze.samples[end];
        out.push(Sample {
            graph,
            target: (s.x.clamp(0.0, 1.0), s.y.clamp(0.0, 1.0)),
            label: seq.labels[end],
            sequence,
            step: end,
        });
        end += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GridAppearance;
    use crate::synth::{generate_sequence, GazePolicy, ScriptConfig};

    fn seq() -> PreparedSequence {
        let cfg = ScriptConfig {
            duration: 3.0,
            ..ScriptConfig::default()
        };
        let s = generate_sequence(2, &cfg, &GazePolicy::default()).unwrap();
        prepare_synthetic(&s, GRAPH_RATE).unwrap()
    }

    #[test]
    fn rates_are_aligned() {
        let p = seq();
        assert_eq!(p.len(), 60);
        assert_eq!(p.gaze.len(), 60);
        assert_eq!(p.labels.len(), 60);
        assert!(p.frames.iter().all(|f| f.gaze.is_some()));
        // 10 fps video duplicated onto 20 Hz steps
        assert_eq!(p.frames[0].detections, p.frames[1].detections);
    }

    #[test]
    fn windows_pair_with_next_gaze() {
        let p = seq();
        let s = window_samples(&p, 0, 8, &[1, 2, 4], 5, &GridAppearance::default(), (640.0, 320.0)).unwrap();
        assert_eq!(s.len(), 11);
        for smp in &s {
            assert_eq!(smp.graph.window(), 8);
            let g = &p.gaze.samples[smp.step];
            assert_eq!(smp.target, (g.x, g.y));
            assert_eq!(smp.graph.current_gaze(), p.frames[smp.step - 1].gaze.unwrap());
        }
    }
}
