//! Detection / mask JSON-lines and gaze CSV ingestion, plus frame-rate
//! alignment onto the graph rate.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detection, FrameInput, StructureMask};
use crate::error::{Error, Result};
use crate::trace::{GazeSample, GazeTrace, Provenance};

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    frame: usize,
    #[serde(flatten)]
    detection: Detection,
}

#[derive(Serialize, Deserialize)]
struct MaskRecord {
    frame: usize,
    mask: Vec<u8>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Ingestion(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Detections grouped by frame index.
pub fn read_detections(path: &Path) -> Result<BTreeMap<usize, Vec<Detection>>> {
    let mut frames: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for rec in json_lines::<DetectionRecord>(path)? {
        frames.entry(rec.frame).or_default().push(rec.detection);
    }
    Ok(frames)
}

pub fn write_detections(path: &Path, frames: &[Vec<Detection>]) -> Result<()> {
    let mut w = create(path)?;
    for (frame, dets) in frames.iter().enumerate() {
        for d in dets {
            let rec = DetectionRecord {
                frame,
                detection: d.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Masks for frames `0..n`; every frame must appear exactly once.
pub fn read_masks(path: &Path) -> Result<Vec<StructureMask>> {
    let mut recs = json_lines::<MaskRecord>(path)?;
    recs.sort_by_key(|r| r.frame);
    recs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.frame != i {
                return Err(Error::Ingestion(format!(
                    "{}: mask for frame {i} missing or duplicated",
                    path.display()
                )));
            }
            StructureMask::new(r.mask)
        })
        .collect()
}

pub fn write_masks(path: &Path, masks: &[StructureMask]) -> Result<()> {
    let mut w = create(path)?;
    for (frame, m) in masks.iter().enumerate() {
        let rec = MaskRecord {
            frame,
            mask: m.0.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct GazeRow {
    t_sec: f64,
    x: f64,
    y: f64,
    valid: u8,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv(format!("{}: {e}", path.display()))
}

/// Gaze CSV with header `t_sec,x,y,valid`. The rate is taken from the
/// median sample spacing.
pub fn read_gaze_csv(path: &Path) -> Result<GazeTrace> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut samples = Vec::new();
    for row in rdr.deserialize::<GazeRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        samples.push(GazeSample {
            t: row.t_sec,
            x: row.x,
            y: row.y,
            valid: row.valid != 0,
        });
    }
    if samples.len() < 2 {
        return Err(Error::Ingestion(format!(
            "{}: gaze trace needs at least 2 samples",
            path.display()
        )));
    }
    let mut steps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    steps.sort_by(f64::total_cmp);
    let dt = steps[steps.len() / 2];
    if !(dt > 0.0) {
        return Err(Error::Ingestion(format!(
            "{}: timestamps are not increasing",
            path.display()
        )));
    }
    Ok(GazeTrace {
        samples,
        rate: 1.0 / dt,
        provenance: Provenance::Human,
    })
}

pub fn write_gaze_csv(path: &Path, trace: &GazeTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for s in &trace.samples {
        w.serialize(GazeRow {
            t_sec: s.t,
            x: s.x,
            y: s.y,
            valid: u8::from(s.valid),
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pair per-frame detections with masks; frames without detections are
/// empty. Frame count comes from the mask file.
pub fn video_frames(
    detections: &BTreeMap<usize, Vec<Detection>>,
    masks: Vec<StructureMask>,
) -> Result<Vec<FrameInput>> {
    if let Some((&last, _)) = detections.last_key_value() {
        if last >= masks.len() {
            return Err(Error::Ingestion(format!(
                "detections reference frame {last} but only {} masks exist",
                masks.len()
            )));
        }
    }
    Ok(masks
        .into_iter()
        .enumerate()
        .map(|(i, mask)| FrameInput {
            detections: detections.get(&i).cloned().unwrap_or_default(),
            mask,
            gaze: None,
            feature_grid: None,
        })
        .collect())
}

/// Resample a video stream at `fps` onto `rate` by frame duplication
/// (graph step `k` takes video frame `⌊k·fps/rate⌋`).
pub fn upsample_frames(frames: &[FrameInput], fps: f64, rate: f64) -> Result<Vec<FrameInput>> {
    if !(fps > 0.0 && rate > 0.0) || fps > rate {
        return Err(Error::Config(format!(
            "cannot upsample {fps} fps video onto a {rate} Hz graph"
        )));
    }
    let n = (frames.len() as f64 * rate / fps + 1e-9).floor() as usize;
    Ok((0..n)
        .map(|k| {
            let src = ((k as f64 * fps / rate) + 1e-9).floor() as usize;
            frames[src.min(frames.len() - 1)].clone()
        })
        .collect())
}

/// Attach gaze positions (already at the graph rate) to frames, one per step.
pub fn attach_gaze(frames: &mut [FrameInput], gaze: &GazeTrace) -> Result<()> {
    if gaze.samples.len() < frames.len() {
        return Err(Error::Ingestion(format!(
            "{} gaze samples for {} frames",
            gaze.samples.len(),
            frames.len()
        )));
    }
    for (f, s) in frames.iter_mut().zip(&gaze.samples) {
        f.gaze = Some((s.x.clamp(0.0, 1.0), s.y.clamp(0.0, 1.0)));
    }
    Ok(())
}
