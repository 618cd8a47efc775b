//! Gaze traces shared by ingestion, simulation, post-processing and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Human,
    Simulated { run: u32, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeTrace {
    pub samples: Vec<GazeSample>,
    /// Samples per second.
    pub rate: f64,
    pub provenance: Provenance,
}

impl GazeTrace {
    /// All-valid trace at `rate` starting at `t_start`.
    pub fn from_points(points: &[(f64, f64)], rate: f64, t_start: f64, provenance: Provenance) -> Self {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| GazeSample {
                t: t_start + i as f64 / rate,
                x,
                y,
                valid: true,
            })
            .collect();
        Self {
            samples,
            rate,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.x, s.y)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Check timestamps are strictly increasing with spacing `1/rate`.
    pub fn check_uniform(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::Contract(format!("trace rate {} is not positive", self.rate)));
        }
        let dt = 1.0 / self.rate;
        for (i, w) in self.samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::Contract(format!(
                    "non-uniform sampling at sample {}: step {step} vs {dt}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_check() {
        let mut tr = GazeTrace::from_points(&[(0.1, 0.1); 5], 20.0, 0.0, Provenance::Human);
        tr.check_uniform().unwrap();
        assert!((tr.duration() - 0.25).abs() < 1e-12);
        tr.samples[3].t += 0.02;
        assert!(matches!(tr.check_uniform(), Err(Error::Contract(_))));
    }
}
