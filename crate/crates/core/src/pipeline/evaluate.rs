//! Metric tables over the simulated test sequences.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DtwScale, PipelineConfig};
use super::{
    fixations, frame_fixations, human_segments, load_model, load_prepared, read_runs, read_split, split_samples,
    write_json, write_text, RunStatus,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aoi_tff, auc, band_ratio, center_prior, dtw, dtw_pixels, gaze_state_dynamics, information_gain,
    levenshtein_scanpath, mean_std, nss, pair_best_match, residual_psd, temporal_correlation, PairingResult,
    SpectralProfile, StateDynamics,
};
use crate::model::{HeadKind, Model, Variant};
use crate::post::{build_saliency_map, fixation_labels, preprocess_gaze, FixationEvent, SaliencyMap};
use crate::synth::Sequence;
use crate::trace::{GazeTrace, Provenance};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values.iter().copied());
        Some(Summary {
            mean,
            std,
            n: values.len(),
        })
    }
}

/// One table row: metric name to summary, absent when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub values: BTreeMap<String, Option<Summary>>,
    /// High-band over low-band residual power.
    pub band_ratio: Option<f64>,
    pub state_dynamics: StateDynamics,
    pub psd: Option<SpectralProfile>,
    /// Best-match detail per test sequence and sequence metric.
    pub pairs: BTreeMap<String, Vec<PairingResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dataset: String,
    pub rows: Vec<MetricRow>,
    /// Steps where the top-weighted node is the scripted attended object.
    pub attended_hits: usize,
    pub attended_steps: usize,
}

pub const COLUMNS: [(&str, &str); 9] = [
    ("tc", "TC"),
    ("dtw", "DTW"),
    ("lev", "LEV"),
    ("fix_dur", "Fix Dur (s)"),
    ("fix_rate", "Fix Rate (fix/s)"),
    ("aoi_tff", "AOI TFF (s)"),
    ("nss", "NSS"),
    ("ig", "IG"),
    ("auc", "AUC"),
];

pub fn model_name(m: &Model) -> String {
    let p = match m.config.variant {
        Variant::Art => "ART",
        Variant::Hgt => "HGT",
    };
    match m.config.head {
        HeadKind::Odn => p.to_string(),
        HeadKind::Mdn { k } => format!("{p}+MDN{k}"),
    }
}

struct TestSequence {
    seq: Sequence,
    humans: Vec<GazeTrace>,
    generated: Vec<GazeTrace>,
    gaussian: Vec<GazeTrace>,
}

#[derive(Default)]
struct Pooled {
    seq: BTreeMap<&'static str, Vec<f64>>,
    pairs: BTreeMap<String, Vec<PairingResult>>,
    fix_dur: Vec<f64>,
    fix_rate: Vec<f64>,
    tff: Vec<f64>,
    nss: Vec<f64>,
    ig: Vec<f64>,
    auc: Vec<f64>,
    labels: Vec<Vec<bool>>,
    psd: Vec<SpectralProfile>,
}

/// Bivariate normal fitted to `points`, sampled with a Cholesky factor.
struct Gaussian2 {
    mean: (f64, f64),
    chol: (f64, f64, f64),
}

impl Gaussian2 {
    fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract(
                "no training fixations for the Gaussian baseline".into(),
            ));
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx = (points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n).max(1e-4);
        let syy = (points.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n).max(1e-4);
        let sxy = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let l11 = sxx.sqrt();
        let l21 = sxy / l11;
        let l22 = (syy - l21 * l21).max(1e-8).sqrt();
        Ok(Self {
            mean: (mx, my),
            chol: (l11, l21, l22),
        })
    }

    fn trace(&self, n: usize, t0: f64, rate: f64, rng: &mut ChaCha8Rng) -> GazeTrace {
        let (l11, l21, l22) = self.chol;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                (
                    (self.mean.0 + l11 * z1).clamp(0.0, 1.0),
                    (self.mean.1 + l21 * z1 + l22 * z2).clamp(0.0, 1.0),
                )
            })
            .collect();
        GazeTrace::from_points(&pts, rate, t0, Provenance::Human)
    }
}

fn training_fixations(cfg: &PipelineConfig, out: &Path, names: &[String]) -> Result<Vec<(f64, f64)>> {
    let per: Vec<Vec<(f64, f64)>> = names
        .par_iter()
        .map(|name| {
            let (seq, _) = load_prepared(out, name, cfg.rate)?;
            let t = preprocess_gaze(&seq.gaze.trace, cfg.rate)?;
            Ok(fixations(cfg, &t)?.iter().map(|f| (f.x, f.y)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn sequence_metric(cfg: &PipelineConfig, name: &str) -> Box<dyn Fn(&GazeTrace, &GazeTrace) -> Result<f64> + Sync> {
    let dims = cfg.frame_dims;
    let grid = cfg.evaluate.lev_grid;
    let scale = cfg.evaluate.dtw_scale;
    match name {
        "tc" => Box::new(temporal_correlation),
        "dtw" => Box::new(move |a, b| match scale {
            DtwScale::Pixels => dtw_pixels(a, b, dims),
            DtwScale::Normalized => dtw(a, b),
        }),
        _ => Box::new(move |a, b| Ok(levenshtein_scanpath(a, b, grid) as f64)),
    }
}

fn pixels(map: &SaliencyMap, pts: &[(f64, f64)]) -> Vec<(usize, usize)> {
    pts.iter().map(|&(x, y)| map.pixel(x, y)).collect()
}

fn pool_frames(per_trace: &[Vec<Vec<(f64, f64)>>], skip: Option<usize>) -> Vec<Vec<(f64, f64)>> {
    let n = per_trace.first().map_or(0, Vec::len);
    (0..n)
        .map(|f| {
            per_trace
                .iter()
                .enumerate()
                .filter(|(k, _)| Some(*k) != skip)
                .flat_map(|(_, t)| t[f].iter().copied())
                .collect()
        })
        .collect()
}

// saliency scores of `maps` against the human fixations of each frame
fn score_maps(maps: &[SaliencyMap], human: &[Vec<(f64, f64)>], prior: &SaliencyMap, p: &mut Pooled) -> Result<()> {
    for (m, fx) in maps.iter().zip(human) {
        if fx.is_empty() {
            continue;
        }
        let px = pixels(m, fx);
        match nss(m, &px) {
            Ok(v) => p.nss.push(v),
            Err(Error::DegenerateMap(_)) => {}
            Err(e) => return Err(e),
        }
        p.ig.push(information_gain(m, prior, &px)?);
        p.auc.push(auc(m, &px)?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_group(
    cfg: &PipelineConfig,
    ts: &TestSequence,
    traces: &[GazeTrace],
    leave_one_out: bool,
    aoi: Option<(f64, f64)>,
    prior: &SaliencyMap,
    static_map: Option<&SaliencyMap>,
    p: &mut Pooled,
) -> Result<()> {
    let reference = &ts.humans;
    for name in ["tc", "dtw", "lev"] {
        let f = sequence_metric(cfg, name);
        let r = pair_best_match(traces, reference, f.as_ref(), name == "tc", leave_one_out)?;
        p.seq
            .entry(name)
            .or_default()
            .extend(r.matches.iter().flatten().map(|m| m.value));
        p.pairs.entry(name.to_string()).or_default().push(r);
    }
    let t0 = cfg.window as f64 / cfg.rate;
    let dur = cfg.simulate.horizon as f64 / cfg.rate;
    let dims = (cfg.saliency.width, cfg.saliency.height);
    let fix: Vec<Vec<FixationEvent>> = traces.iter().map(|t| fixations(cfg, t)).collect::<Result<_>>()?;
    for (t, f) in traces.iter().zip(&fix) {
        p.fix_dur.extend(f.iter().map(|e| e.duration));
        p.fix_rate.push(f.len() as f64 / dur);
        if let Some(c) = aoi {
            if let Some(v) = aoi_tff(f, c, cfg.evaluate.aoi_radius, t0, cfg.frame_dims)? {
                p.tff.push(v);
            }
        }
        p.labels.push(fixation_labels(t.len(), f));
    }
    p.psd.push(residual_psd(traces, cfg.rate, &cfg.evaluate.welch)?);

    let human_fix: Vec<Vec<FixationEvent>> = reference.iter().map(|t| fixations(cfg, t)).collect::<Result<_>>()?;
    let human_frames: Vec<_> = human_fix
        .iter()
        .map(|f| frame_fixations(cfg, ts.seq.scene.fps, f))
        .collect();
    if let Some(m) = static_map {
        let pooled = pool_frames(&human_frames, None);
        let maps: Vec<SaliencyMap> = (0..pooled.len()).map(|_| m.clone()).collect();
        return score_maps(&maps, &pooled, prior, p);
    }
    if leave_one_out {
        for k in 0..human_frames.len() {
            let maps = build_saliency_map(&pool_frames(&human_frames, Some(k)), dims)?;
            score_maps(&maps, &human_frames[k], prior, p)?;
        }
    } else {
        let own: Vec<_> = fix.iter().map(|f| frame_fixations(cfg, ts.seq.scene.fps, f)).collect();
        let maps = build_saliency_map(&pool_frames(&own, None), dims)?;
        score_maps(&maps, &pool_frames(&human_frames, None), prior, p)?;
    }
    Ok(())
}

fn mean_profile(profiles: &[SpectralProfile]) -> Option<SpectralProfile> {
    let first = profiles.first()?;
    let mut out = first.clone();
    for p in &profiles[1..] {
        if p.freqs.len() != out.freqs.len() {
            return None;
        }
        out.psd.iter_mut().zip(&p.psd).for_each(|(a, b)| *a += b);
    }
    let k = profiles.len() as f64;
    out.psd.iter_mut().for_each(|v| *v /= k);
    Some(out)
}

fn finish(cfg: &PipelineConfig, model: String, p: Pooled) -> Result<MetricRow> {
    let mut values = BTreeMap::new();
    for (k, v) in &p.seq {
        values.insert((*k).to_string(), Summary::of(v));
    }
    values.insert("fix_dur".into(), Summary::of(&p.fix_dur));
    values.insert("fix_rate".into(), Summary::of(&p.fix_rate));
    values.insert("aoi_tff".into(), Summary::of(&p.tff));
    values.insert("nss".into(), Summary::of(&p.nss));
    values.insert("ig".into(), Summary::of(&p.ig));
    values.insert("auc".into(), Summary::of(&p.auc));
    let psd = mean_profile(&p.psd);
    let ratio = match &psd {
        Some(prof) => match band_ratio(prof, cfg.evaluate.low_band, cfg.evaluate.high_band) {
            Ok(r) => Some(r),
            Err(Error::Undefined(_) | Error::Contract(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(MetricRow {
        model,
        values,
        band_ratio: ratio,
        state_dynamics: gaze_state_dynamics(&p.labels, cfg.rate, cfg.evaluate.state_window)?,
        psd,
        pairs: p.pairs,
    })
}

/// Fraction of held-out steps whose argmax mixture component sits on the
/// scripted attended object.
pub fn attended_accuracy(model: &Model, samples: &[crate::data::Sample]) -> Result<(usize, usize)> {
    let labelled: Vec<_> = samples.iter().filter(|s| s.label.is_some()).collect();
    let mut hits = 0;
    for chunk in labelled.chunks(32) {
        let graphs: Vec<_> = chunk.iter().map(|s| &s.graph).collect();
        for (pred, s) in model.predict_batch(&graphs)?.iter().zip(chunk) {
            if pred.argmax().and_then(|c| c.node).and_then(|n| n.track) == s.label {
                hits += 1;
            }
        }
    }
    Ok((hits, labelled.len()))
}

pub fn evaluate(cfg: &PipelineConfig, out: &Path) -> Result<Evaluation> {
    let split = read_split(out)?;
    let model = load_model(out)?;
    let base = training_fixations(cfg, out, &split.train)?;
    let dims = (cfg.saliency.width, cfg.saliency.height);
    let prior = center_prior(&base, dims)?;
    let gauss = Gaussian2::fit(&base)?;
    let t0 = cfg.window as f64 / cfg.rate;

    let tests: Vec<TestSequence> = split
        .test
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (seq, _) = load_prepared(out, name, cfg.rate)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6a05).wrapping_add(i as u64));
            let gaussian = (0..cfg.simulate.runs)
                .map(|_| gauss.trace(cfg.simulate.horizon, t0, cfg.rate, &mut rng))
                .collect();
            Ok(TestSequence {
                humans: human_segments(cfg, out, name)?,
                generated: read_runs(out, name, cfg.simulate.runs)?,
                gaussian,
                seq,
            })
        })
        .collect::<Result<_>>()?;

    let mut pooled: [Pooled; 3] = Default::default();
    for ts in &tests {
        let aoi = ts
            .seq
            .script
            .nearest_hazard(t0)
            .and_then(|id| ts.seq.script.track(id))
            .map(|tr| tr.position(t0));
        let [h, m, g] = &mut pooled;
        score_group(cfg, ts, &ts.humans, true, aoi, &prior, None, h)?;
        score_group(cfg, ts, &ts.generated, false, aoi, &prior, None, m)?;
        score_group(cfg, ts, &ts.gaussian, false, aoi, &prior, Some(&prior), g)?;
    }
    let [h, m, g] = pooled;
    let rows = vec![
        finish(cfg, "Human".into(), h)?,
        finish(cfg, model_name(&model), m)?,
        finish(cfg, "Gaussian".into(), g)?,
    ];
    // every held-out step, one sequence at a time
    let dense = PipelineConfig {
        data: super::config::DataSection {
            stride: 1,
            ..cfg.data.clone()
        },
        ..cfg.clone()
    };
    let (mut attended_hits, mut attended_steps) = (0, 0);
    for name in &split.test {
        let (h, n) = attended_accuracy(&model, &split_samples(&dense, out, std::slice::from_ref(name))?)?;
        attended_hits += h;
        attended_steps += n;
    }
    Ok(Evaluation {
        dataset: "synthetic".into(),
        rows,
        attended_hits,
        attended_steps,
    })
}

fn cell(s: Option<&Summary>) -> String {
    match s {
        Some(s) if s.mean.is_finite() => format!("{:.4} ± {:.4}", s.mean, s.std),
        _ => "-".into(),
    }
}

/// The table as CSV: one row per model, one `mean ± std` column per metric.
pub fn metrics_csv(e: &Evaluation) -> String {
    let mut s = String::from("Dataset,Model");
    for (_, title) in COLUMNS {
        let _ = write!(s, ",{title}");
    }
    s.push('\n');
    for r in &e.rows {
        let _ = write!(s, "{},{}", e.dataset, r.model);
        for (key, _) in COLUMNS {
            let _ = write!(s, ",{}", cell(r.values.get(key).and_then(Option::as_ref)));
        }
        s.push('\n');
    }
    s
}

pub fn state_dynamics_csv(e: &Evaluation) -> String {
    let mut s = String::from("model,offset_s,mean_diff,onsets\n");
    for r in &e.rows {
        let d = &r.state_dynamics;
        for (o, v) in d.offsets.iter().zip(&d.mean_diff) {
            let _ = writeln!(s, "{},{o:?},{v:?},{}", r.model, d.onsets);
        }
    }
    s
}

pub fn psd_csv(e: &Evaluation) -> String {
    let mut s = String::from("model,freq_hz,psd\n");
    for r in &e.rows {
        if let Some(p) = &r.psd {
            for (f, v) in p.freqs.iter().zip(&p.psd) {
                let _ = writeln!(s, "{},{f:?},{v:?}", r.model);
            }
        }
    }
    s
}

pub fn band_ratio_csv(e: &Evaluation) -> String {
    let mut s = String::from("model,band_ratio\n");
    for r in &e.rows {
        let _ = writeln!(
            s,
            "{},{}",
            r.model,
            r.band_ratio.map_or("-".into(), |v| format!("{v:?}"))
        );
    }
    s
}

pub(super) fn run(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let e = evaluate(cfg, out)?;
    write_text(&dir.join(METRICS_CSV), &metrics_csv(&e))?;
    write_text(&dir.join("state_dynamics.csv"), &state_dynamics_csv(&e))?;
    write_text(&dir.join("psd.csv"), &psd_csv(&e))?;
    write_text(&dir.join("band_ratio.csv"), &band_ratio_csv(&e))?;
    write_text(
        &dir.join("policy.csv"),
        &format!(
            "split,hits,steps,accuracy\ntest,{},{},{:?}\n",
            e.attended_hits,
            e.attended_steps,
            e.attended_hits as f64 / e.attended_steps.max(1) as f64
        ),
    )?;
    write_json(&dir.join(METRICS_JSON), &e)?;
    Ok(RunStatus::Completed)
}
