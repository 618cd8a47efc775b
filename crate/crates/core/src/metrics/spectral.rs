use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::GazeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchConfig {
    pub max_segment: usize,
    /// Fraction of a segment shared with the next one.
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            max_segment: 256,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Bin frequencies in Hz, from `df` to the Nyquist frequency.
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub segment: usize,
    pub overlap: usize,
}

impl SpectralProfile {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            self.freqs.first().copied().unwrap_or(0.0)
        }
    }

    /// Rectangle-rule total power over the bins.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    pub fn peak(&self) -> Option<f64> {
        self.psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.freqs[i])
    }
}

/// One-sided Welch density estimate with a periodic Hann window and
/// per-segment mean removal. The DC bin is dropped.
pub fn welch(x: &[f64], rate: f64, cfg: &WelchConfig) -> Result<SpectralProfile> {
    let n = x.len();
    let seg = cfg.max_segment.min(n / 2);
    if seg < 2 {
        return Err(Error::Contract(format!("{n} samples are too few for a Welch estimate")));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::Config(format!("overlap {} outside [0, 1)", cfg.overlap)));
    }
    let noverlap = (seg as f64 * cfg.overlap).floor() as usize;
    let hop = seg - noverlap;
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let nbins = seg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut count = 0;
    let mut start = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    while start + seg <= n {
        let s = &x[start..start + seg];
        let mean = s.iter().sum::<f64>() / seg as f64;
        for (b, (v, w)) in buf.iter_mut().zip(s.iter().zip(&window)) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (rate * wss * count as f64);
    let mut psd: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    let last = nbins - 1;
    for (k, p) in psd.iter_mut().enumerate() {
        if k != 0 && !(seg.is_multiple_of(2) && k == last) {
            *p *= 2.0;
        }
    }
    let df = rate / seg as f64;
    Ok(SpectralProfile {
        freqs: (1..nbins).map(|k| k as f64 * df).collect(),
        psd: psd[1..].to_vec(),
        segment: seg,
        overlap: noverlap,
    })
}

/// Residual magnitudes `‖p_i(t) − p̄(t)‖` of each trace from the group
/// mean, over the common prefix length.
pub fn residuals(group: &[GazeTrace]) -> Result<Vec<Vec<f64>>> {
    if group.len() < 2 {
        return Err(Error::Contract(
            "residual spectra need at least two traces per group".into(),
        ));
    }
    let n = group.iter().map(GazeTrace::len).min().unwrap_or(0);
    let k = group.len() as f64;
    let mean: Vec<(f64, f64)> = (0..n)
        .map(|t| {
            let (sx, sy) = group
                .iter()
                .fold((0.0, 0.0), |a, g| (a.0 + g.samples[t].x, a.1 + g.samples[t].y));
            (sx / k, sy / k)
        })
        .collect();
    Ok(group
        .iter()
        .map(|g| {
            (0..n)
                .map(|t| (g.samples[t].x - mean[t].0).hypot(g.samples[t].y - mean[t].1))
                .collect()
        })
        .collect())
}

/// Welch PSD of each trace's residual magnitude, averaged over the group.
pub fn residual_psd(group: &[GazeTrace], rate: f64, cfg: &WelchConfig) -> Result<SpectralProfile> {
    let res = residuals(group)?;
    let mut out: Option<SpectralProfile> = None;
    for r in &res {
        let p = welch(r, rate, cfg)?;
        match out.as_mut() {
            None => out = Some(p),
            Some(o) => o.psd.iter_mut().zip(&p.psd).for_each(|(a, b)| *a += b),
        }
    }
    let mut out = out.expect("group has traces");
    let k = res.len() as f64;
    out.psd.iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

fn interp(f: &[f64], p: &[f64], x: f64) -> f64 {
    if x <= f[0] {
        return p[0];
    }
    if x >= f[f.len() - 1] {
        return p[p.len() - 1];
    }
    let i = f.partition_point(|&v| v <= x) - 1;
    let w = (x - f[i]) / (f[i + 1] - f[i]);
    p[i] + w * (p[i + 1] - p[i])
}

/// Exact integral of the piecewise-linear PSD between `lo` and `hi`; below
/// the first bin the PSD is held at the first bin's value.
pub fn band_power(profile: &SpectralProfile, lo: f64, hi: f64) -> Result<f64> {
    let f = &profile.freqs;
    let p = &profile.psd;
    if f.is_empty() || hi > f[f.len() - 1] + 1e-9 || lo < 0.0 || hi <= lo {
        return Err(Error::Contract(format!(
            "band [{lo}, {hi}] Hz is not covered by the spectrum"
        )));
    }
    let mut knots = vec![lo];
    knots.extend(f.iter().copied().filter(|&v| v > lo && v < hi));
    knots.push(hi);
    Ok(knots
        .windows(2)
        .map(|w| (w[1] - w[0]) * (interp(f, p, w[0]) + interp(f, p, w[1])) / 2.0)
        .sum())
}

pub const LOW_BAND: (f64, f64) = (0.1, 1.0);
pub const HIGH_BAND: (f64, f64) = (1.0, 5.0);

/// High-band power over low-band power.
pub fn band_ratio(profile: &SpectralProfile, low: (f64, f64), high: (f64, f64)) -> Result<f64> {
    let lp = band_power(profile, low.0, low.1)?;
    if lp <= 0.0 {
        return Err(Error::Undefined("no power in the low band".into()));
    }
    Ok(band_power(profile, high.0, high.1)? / lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tr(points: Vec<(f64, f64)>) -> GazeTrace {
        GazeTrace::from_points(&points, 20.0, 0.0, Provenance::Human)
    }

    // Two traces mirrored about a common path so each residual is
    // c + a·sin(2π f t).
    fn planted(f0: f64, n: usize) -> Vec<GazeTrace> {
        let r = |i: usize| 0.1 + 0.05 * (2.0 * std::f64::consts::PI * f0 * i as f64 / 20.0).sin();
        let base = |i: usize| (0.5 + 0.001 * i as f64 % 0.2, 0.5);
        vec![
            tr((0..n).map(|i| (base(i).0 + r(i), base(i).1)).collect()),
            tr((0..n).map(|i| (base(i).0 - r(i), base(i).1)).collect()),
        ]
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let g = planted(2.0, 400);
        let p = residual_psd(&g, 20.0, &WelchConfig::default()).unwrap();
        assert_eq!(p.segment, 200);
        assert!((p.peak().unwrap() - 2.0).abs() <= p.df() + 1e-12);
        assert!((p.freqs[p.freqs.len() - 1] - 10.0).abs() < 1e-12);
        assert!(p.psd.iter().all(|&v| v >= 0.0));
        let var = variance(&residuals(&g).unwrap()[0]);
        assert!((p.total_power() / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn parseval_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        let p = welch(&x, 20.0, &WelchConfig::default()).unwrap();
        assert!((p.total_power() / variance(&x) - 1.0).abs() < 0.02);
    }

    #[test]
    fn identical_traces_have_zero_psd() {
        let t = tr((0..100).map(|i| (i as f64 / 100.0, 0.3)).collect());
        let p = residual_psd(&[t.clone(), t], 20.0, &WelchConfig::default()).unwrap();
        assert!(p.psd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_trace_group_is_an_error() {
        let t = tr(vec![(0.5, 0.5); 50]);
        assert!(residual_psd(&[t], 20.0, &WelchConfig::default()).is_err());
    }

    fn profile(df: f64, psd: Vec<f64>) -> SpectralProfile {
        SpectralProfile {
            freqs: (1..=psd.len()).map(|k| k as f64 * df).collect(),
            psd,
            segment: 0,
            overlap: 0,
        }
    }

    #[test]
    fn flat_spectrum_ratio_is_width_ratio() {
        let p = profile(0.05, vec![2.0; 200]);
        let r = band_ratio(&p, LOW_BAND, HIGH_BAND).unwrap();
        assert!((r - 4.0 / 0.9).abs() < 1e-12);
        // below the first bin the value is held flat
        let coarse = profile(0.25, vec![1.0; 40]);
        assert!((band_ratio(&coarse, LOW_BAND, HIGH_BAND).unwrap() - 4.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn low_only_power_gives_zero() {
        let p = profile(0.1, (1..=100).map(|k| if k < 10 { 1.0 } else { 0.0 }).collect());
        assert_eq!(band_ratio(&p, LOW_BAND, HIGH_BAND).unwrap(), 0.0);
        let zero = profile(0.1, vec![0.0; 100]);
        assert!(matches!(
            band_ratio(&zero, LOW_BAND, HIGH_BAND),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn band_power_matches_trapezoid_on_bin_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psd: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let p = profile(0.1, psd.clone());
        // bins at 0.1 k: low band spans bins 1..=10, high band 10..=50
        let trap = |a: usize, b: usize| (a..b).map(|k| 0.1 * (psd[k - 1] + psd[k]) / 2.0).sum::<f64>();
        let lo = band_power(&p, 0.1, 1.0).unwrap();
        let hi = band_power(&p, 1.0, 5.0).unwrap();
        assert!((lo - trap(1, 10)).abs() < 1e-12);
        assert!((hi - trap(10, 50)).abs() < 1e-12);
        assert!((band_ratio(&p, LOW_BAND, HIGH_BAND).unwrap() - trap(10, 50) / trap(1, 10)).abs() < 1e-12);
    }
}
