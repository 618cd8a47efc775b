use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::post::FixationEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationStats {
    /// Absent when there are no fixations.
    pub mean_duration: Option<f64>,
    /// Fixations per second.
    pub rate: f64,
}

pub fn fixation_stats(fixations: &[FixationEvent], duration: f64) -> Result<FixationStats> {
    if !(duration > 0.0) {
        return Err(Error::Contract(format!("trace duration {duration} is not positive")));
    }
    let n = fixations.len();
    Ok(FixationStats {
        mean_duration: (n > 0).then(|| fixations.iter().map(|f| f.duration).sum::<f64>() / n as f64),
        rate: n as f64 / duration,
    })
}

/// Time from `t_origin` to the onset of the first fixation at or after it
/// whose centroid lies within `radius · width` pixels of `center`.
pub fn aoi_tff(
    fixations: &[FixationEvent],
    center: (f64, f64),
    radius: f64,
    t_origin: f64,
    dims: (f64, f64),
) -> Result<Option<f64>> {
    if !(radius > 0.0) {
        return Err(Error::Contract(format!("AOI radius {radius} is not positive")));
    }
    let r = radius * dims.0;
    Ok(fixations
        .iter()
        .filter(|f| f.onset >= t_origin - 1e-12)
        .find(|f| {
            let d = ((f.x - center.0) * dims.0).hypot((f.y - center.1) * dims.1);
            d <= r * (1.0 + 1e-12)
        })
        .map(|f| f.onset - t_origin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDynamics {
    /// Time of each difference relative to the onset sample.
    pub offsets: Vec<f64>,
    pub mean_diff: Vec<f64>,
    pub onsets: usize,
}

/// Mean differenced fixation indicator around every fixation onset (a
/// fixation sample preceded by a non-fixation sample). Onsets whose
/// `±window` span leaves the trace are skipped. The difference
/// `v[k+1] − v[k]` is reported at offset `(k + 1 − w)/rate`, so a clean
/// onset is `+1` at offset 0.
pub fn gaze_state_dynamics(labels: &[Vec<bool>], rate: f64, window: f64) -> Result<StateDynamics> {
    if !(rate > 0.0) || window < 0.0 {
        return Err(Error::Contract("rate must be positive and window non-negative".into()));
    }
    let w = (window * rate).round() as usize;
    let mut sum = vec![0.0; 2 * w];
    let mut onsets = 0;
    for trace in labels {
        for i in 1..trace.len() {
            if !(trace[i] && !trace[i - 1]) || i < w || i + w >= trace.len() {
                continue;
            }
            let v = &trace[i - w..=i + w];
            for (k, s) in sum.iter_mut().enumerate() {
                *s += f64::from(u8::from(v[k + 1])) - f64::from(u8::from(v[k]));
            }
            onsets += 1;
        }
    }
    if onsets == 0 {
        return Ok(StateDynamics {
            offsets: Vec::new(),
            mean_diff: Vec::new(),
            onsets: 0,
        });
    }
    Ok(StateDynamics {
        offsets: (0..2 * w).map(|k| (k as f64 + 1.0 - w as f64) / rate).collect(),
        mean_diff: sum.into_iter().map(|s| s / onsets as f64).collect(),
        onsets,
    })
}
