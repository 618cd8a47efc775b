use crate::error::{Error, Result};
use crate::trace::{GazeSample, GazeTrace};

/// Replace invalid samples: interior gaps are linearly interpolated in
/// time, leading and trailing gaps take the nearest valid value.
pub fn fill_invalid(raw: &GazeTrace) -> Result<GazeTrace> {
    let valid: Vec<usize> = (0..raw.len()).filter(|&i| raw.samples[i].valid).collect();
    if valid.len() < 2 {
        return Err(Error::Preprocess(format!(
            "{} valid samples; at least 2 are needed",
            valid.len()
        )));
    }
    let s = &raw.samples;
    let mut out = Vec::with_capacity(s.len());
    let mut next = 0;
    for (i, smp) in s.iter().enumerate() {
        while next < valid.len() && valid[next] < i {
            next += 1;
        }
        let (x, y) = if smp.valid {
            (smp.x, smp.y)
        } else if next == 0 {
            (s[valid[0]].x, s[valid[0]].y)
        } else if next == valid.len() {
            let l = valid[valid.len() - 1];
            (s[l].x, s[l].y)
        } else {
            let (a, b) = (&s[valid[next - 1]], &s[valid[next]]);
            let w = (smp.t - a.t) / (b.t - a.t);
            (a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
        };
        out.push(GazeSample {
            t: smp.t,
            x,
            y,
            valid: true,
        });
    }
    Ok(GazeTrace {
        samples: out,
        rate: raw.rate,
        provenance: raw.provenance.clone(),
    })
}

/// Linear-interpolation resampling of an all-valid trace to `rate`,
/// starting at the first timestamp and stopping at the last.
pub fn resample(trace: &GazeTrace, rate: f64) -> Result<GazeTrace> {
    if !(rate > 0.0) {
        return Err(Error::Preprocess(format!("target rate {rate} is not positive")));
    }
    let s = &trace.samples;
    if s.is_empty() {
        return Err(Error::Preprocess("empty trace".into()));
    }
    if (rate - trace.rate).abs() < 1e-12 {
        return Ok(GazeTrace { rate, ..trace.clone() });
    }
    let t0 = s[0].t;
    let t_end = s[s.len() - 1].t;
    let mut out = Vec::new();
    let mut j = 0;
    for k in 0.. {
        let t = t0 + k as f64 / rate;
        if t > t_end + 1e-9 {
            break;
        }
        while j + 2 < s.len() && s[j + 1].t <= t {
            j += 1;
        }
        let (x, y) = if s.len() == 1 {
            (s[0].x, s[0].y)
        } else {
            let (a, b) = (&s[j], &s[j + 1]);
            let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            (a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
        };
        out.push(GazeSample { t, x, y, valid: true });
    }
    Ok(GazeTrace {
        samples: out,
        rate,
        provenance: trace.provenance.clone(),
    })
}

/// Blink filling followed by resampling to `target_rate`.
pub fn preprocess_gaze(raw: &GazeTrace, target_rate: f64) -> Result<GazeTrace> {
    resample(&fill_invalid(raw)?, target_rate)
}
