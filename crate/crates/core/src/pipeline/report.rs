//! Summary table and static figures from the evaluation artifacts.

use std::fmt::Write;
use std::path::Path;

use super::config::PipelineConfig;
use super::evaluate::{Evaluation, COLUMNS, METRICS_JSON};
use super::svg::{heat_overlay, line_plot, Series};
use super::{
    fixations, frame_fixations, human_segments, read_json, read_runs, read_split, stage_dir, write_text, Command,
    RunStatus,
};
use crate::error::Result;
use crate::post::build_saliency_map;
use crate::synth::read_sequence;

/// Long-format table: one line per model and metric.
pub fn summary_csv(e: &Evaluation) -> String {
    let mut s = String::from("model,metric,mean,std,n\n");
    for r in &e.rows {
        for (key, _) in COLUMNS {
            match r.values.get(key).and_then(Option::as_ref) {
                Some(v) => {
                    let _ = writeln!(s, "{},{key},{:?},{:?},{}", r.model, v.mean, v.std, v.n);
                }
                None => {
                    let _ = writeln!(s, "{},{key},-,-,0", r.model);
                }
            }
        }
        if let Some(b) = r.band_ratio {
            let _ = writeln!(s, "{},band_ratio,{b:?},-,1", r.model);
        }
    }
    let _ = writeln!(
        s,
        "policy,attended_accuracy,{:?},-,{}",
        e.attended_hits as f64 / e.attended_steps.max(1) as f64,
        e.attended_steps
    );
    s
}

pub(super) fn run(cfg: &PipelineConfig, out: &Path, dir: &Path) -> Result<RunStatus> {
    let e: Evaluation = read_json(&stage_dir(out, Command::Evaluate).join(METRICS_JSON))?;
    write_text(&dir.join("summary.csv"), &summary_csv(&e))?;

    let ed: Vec<Series> = e
        .rows
        .iter()
        .map(|r| Series {
            name: r.model.clone(),
            points: r
                .state_dynamics
                .offsets
                .iter()
                .copied()
                .zip(r.state_dynamics.mean_diff.iter().copied())
                .collect(),
        })
        .collect();
    write_text(
        &dir.join("ed_curve.svg"),
        &line_plot("Gaze state dynamics", "offset (s)", "E(d)", &ed, false),
    )?;

    let psd: Vec<Series> = e
        .rows
        .iter()
        .filter_map(|r| {
            r.psd.as_ref().map(|p| Series {
                name: r.model.clone(),
                points: p.freqs.iter().copied().zip(p.psd.iter().copied()).collect(),
            })
        })
        .collect();
    write_text(
        &dir.join("psd.svg"),
        &line_plot("Residual power spectrum", "frequency (Hz)", "PSD", &psd, true),
    )?;

    let split = read_split(out)?;
    if let Some(name) = split.test.first() {
        let runs = read_runs(out, name, cfg.simulate.runs)?;
        let humans = human_segments(cfg, out, name)?;
        let mut series = Vec::new();
        for (label, t) in [("model", runs.first()), ("human", humans.first())] {
            if let Some(t) = t {
                series.push(Series {
                    name: format!("{label} x"),
                    points: t.samples.iter().map(|s| (s.t, s.x)).collect(),
                });
                series.push(Series {
                    name: format!("{label} y"),
                    points: t.samples.iter().map(|s| (s.t, s.y)).collect(),
                });
            }
        }
        write_text(
            &dir.join("gaze_time.svg"),
            &line_plot(
                &format!("Gaze over time, {name}"),
                "time (s)",
                "position",
                &series,
                false,
            ),
        )?;

        let fps = read_sequence(&super::sequence_dir(out, name))?.scene.fps;
        let mut model_frames: Vec<Vec<(f64, f64)>> = Vec::new();
        for t in &runs {
            let ff = frame_fixations(cfg, fps, &fixations(cfg, t)?);
            if model_frames.is_empty() {
                model_frames = vec![Vec::new(); ff.len()];
            }
            model_frames.iter_mut().zip(ff).for_each(|(a, b)| a.extend(b));
        }
        if !model_frames.is_empty() {
            let mid = model_frames.len() / 2;
            let maps = build_saliency_map(&model_frames, (cfg.saliency.width, cfg.saliency.height))?;
            let m = &maps[mid];
            let mx = m.max();
            let norm: Vec<f64> = m.data.iter().map(|v| if mx > 0.0 { v / mx } else { 0.0 }).collect();
            let mut pts = Vec::new();
            for t in &humans {
                let ff = frame_fixations(cfg, fps, &fixations(cfg, t)?);
                pts.extend(ff.get(mid).into_iter().flatten().copied());
            }
            write_text(
                &dir.join("saliency_overlay.svg"),
                &heat_overlay(&format!("Model saliency, frame {mid}"), &norm, m.width, m.height, &pts),
            )?;
        }
    }
    Ok(RunStatus::Completed)
}
