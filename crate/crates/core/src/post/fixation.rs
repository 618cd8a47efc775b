use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::GazeTrace;

pub const EYEMMV_T0: f64 = 0.08;
pub const EYEMMV_T1: f64 = 0.05;
pub const MIN_FIXATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationEvent {
    pub onset: f64,
    pub duration: f64,
    pub x: f64,
    pub y: f64,
    /// First and last member sample indices (inclusive).
    pub first: usize,
    pub last: usize,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn centroid(points: &[(f64, f64)], members: &[usize]) -> (f64, f64) {
    let n = members.len() as f64;
    let (sx, sy) = members
        .iter()
        .fold((0.0, 0.0), |acc, &i| (acc.0 + points[i].0, acc.1 + points[i].1));
    (sx / n, sy / n)
}

/// Two-stage dispersion filter. Stage 1 grows a cluster while each new
/// sample stays within `t0` of the running centroid; stage 2 repeatedly
/// drops members farther than `t1` from the centroid until none remain
/// outside. Clusters spanning less than `min_dur` are discarded.
pub fn detect_fixations(trace: &GazeTrace, t0: f64, t1: f64, min_dur: f64) -> Result<Vec<FixationEvent>> {
    trace.check_uniform()?;
    if !(t1 <= t0) || t1 < 0.0 {
        return Err(Error::Contract(format!(
            "thresholds need 0 ≤ t1 ≤ t0, got t0={t0}, t1={t1}"
        )));
    }
    let dt = 1.0 / trace.rate;
    let points = trace.points();
    let n = points.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut sum = points[start];
        let mut end = start + 1;
        while end < n {
            let k = (end - start) as f64;
            let c = (sum.0 / k, sum.1 / k);
            if dist(points[end], c) > t0 {
                break;
            }
            sum.0 += points[end].0;
            sum.1 += points[end].1;
            end += 1;
        }

        let mut members: Vec<usize> = (start..end).collect();
        let mut c = centroid(&points, &members);
        loop {
            let before = members.len();
            members.retain(|&i| dist(points[i], c) <= t1);
            if members.is_empty() || members.len() == before {
                break;
            }
            c = centroid(&points, &members);
        }
        if let (Some(&first), Some(&last)) = (members.first(), members.last()) {
            let duration = (last - first + 1) as f64 * dt;
            if duration >= min_dur - 1e-9 {
                out.push(FixationEvent {
                    onset: trace.samples[first].t,
                    duration,
                    x: c.0,
                    y: c.1,
                    first,
                    last,
                });
            }
        }
        start = end;
    }
    Ok(out)
}

/// Per-sample fixation indicator over `n` samples.
pub fn fixation_labels(n: usize, fixations: &[FixationEvent]) -> Vec<bool> {
    let mut labels = vec![false; n];
    for f in fixations {
        for l in labels.iter_mut().take((f.last + 1).min(n)).skip(f.first) {
            *l = true;
        }
    }
    labels
}

pub fn write_fixations_csv(path: &Path, fixations: &[FixationEvent]) -> Result<()> {
    let err = |e: csv::Error| Error::Csv(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["onset", "duration", "x", "y", "first", "last"])
        .map_err(err)?;
    for f in fixations {
        w.serialize((f.onset, f.duration, f.x, f.y, f.first, f.last))
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_fixations_csv(path: &Path) -> Result<Vec<FixationEvent>> {
    let err = |e: csv::Error| Error::Csv(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize::<FixationEvent>().map(|row| row.map_err(err)).collect()
}
