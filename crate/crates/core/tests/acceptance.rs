//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --test acceptance -- 1 4 9`.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazegraph::data::prepare_synthetic;
use gazegraph::graph::{
    assemble_window_graph, Detection, FrameInput, GridAppearance, NodeType, SceneGraph, StructureMask, APPEARANCE_DIM,
};
use gazegraph::math::finite_diff_compare;
use gazegraph::metrics::{
    auc, dtw_points, edit_distance, information_gain, nss, pair_best_match, residual_psd, WelchConfig,
};
use gazegraph::model::{gmm_density, training_loss, Component, GmmPrediction, GraphBatch, Model, ModelConfig, Variant};
use gazegraph::pipeline::{
    parse_config_str, run_pipeline, stage_dir, Command, Evaluation, PipelineConfig, RunOptions, RunStatus,
};
use gazegraph::post::{detect_fixations, SaliencyMap, EYEMMV_T0, EYEMMV_T1, MIN_FIXATION};
use gazegraph::simulate::{fixation_model, rollout, RolloutConfig};
use gazegraph::synth::{generate_sequence, GazePolicy, ScriptConfig};
use gazegraph::trace::{GazeTrace, Provenance};
use gazegraph::train::TrainReport;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn frame(rng: &mut ChaCha8Rng, objects: usize) -> FrameInput {
    let labels = ["car", "person", "bicycle", "traffic light", "truck"];
    FrameInput {
        detections: (0..objects)
            .map(|i| Detection {
                label: labels[rng.random_range(0..labels.len())].into(),
                bbox: [
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                ],
                score: rng.random_range(0.3..1.0),
                depth: rng.random_range(0.0..1.0),
                appearance: Some((0..APPEARANCE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()),
                track: Some(i as u32),
            })
            .collect(),
        mask: StructureMask::new((0..128).map(|_| u8::from(rng.random_bool(0.5))).collect()).unwrap(),
        gaze: Some((rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))),
        feature_grid: None,
    }
}

fn random_graph(rng: &mut ChaCha8Rng, window: usize, offsets: &[usize], max_objects: usize) -> SceneGraph {
    let frames: Vec<FrameInput> = (0..window)
        .map(|_| {
            let n = rng.random_range(0..=max_objects);
            frame(rng, n)
        })
        .collect();
    assemble_window_graph(&frames, offsets, &GridAppearance::default(), (1.0, 1.0)).unwrap()
}

// ------------------------------------------------------------------ 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = [frame(&mut rng, 1), frame(&mut rng, 1)];
    let g = assemble_window_graph(&frames, &[1], &GridAppearance::default(), (1.0, 1.0)).unwrap();
    let per_step = g.nodes().iter().filter(|n| n.t == 1).count();
    if per_step != 3 || g.window() != 2 {
        return Err(format!("graph has {per_step} nodes per step over {} steps", g.window()));
    }
    let cfg = ModelConfig {
        d: 4,
        layers: 2,
        ffn_hidden: 4,
        init_seed: 3,
        ..ModelConfig::default()
    };
    let mut m = Model::new(cfg).unwrap();
    m.register_graph_edge_types([&g]).unwrap();
    // move the gates and norms off their initial values
    for p in m.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let target = [(0.42, 0.61)];
    let b = GraphBatch::new(&[&g], Some(&target), m.config.d).unwrap();
    let mut stats = m.stats.clone();
    let lt = training_loss(&m.config, &m.params, &mut stats, &b).unwrap();
    let grads = lt.tape.backward(lt.loss).unwrap().params(&m.params.shapes());
    let mut worst = (0.0f64, String::new());
    let mut scalars = 0;
    // Edge-norm shifts and encoder first-layer biases feed a train-mode batch
    // norm that removes them, so their gradient is exactly zero and the
    // central difference only sees one ulp of the loss over 2h. That floor
    // falls as 1/h while truncation error on the other entries grows as h²;
    // h = 2e-4 keeps both well below the tolerance.
    let h = 2e-4;
    let mut probe = m.params.clone();
    for id in 0..m.params.len() {
        let err = finite_diff_compare(
            |t| {
                *probe.value_mut(id) = t.clone();
                let mut s = m.stats.clone();
                let lt = training_loss(&m.config, &probe, &mut s, &b)?;
                Ok(lt.tape.value(lt.loss).item())
            },
            m.params.value(id),
            &grads[id],
            h,
        )
        .unwrap();
        *probe.value_mut(id) = m.params.value(id).clone();
        scalars += m.params.value(id).len();
        if err > worst.0 {
            worst = (err, m.params.get(id).name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 < 1e-4 && secs < 10.0,
        format!(
            "max rel err {:.2e} ({}) over {scalars} scalars at h={h:e}, {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

// ------------------------------------------------------------------ 2

fn random_prediction(rng: &mut ChaCha8Rng) -> GmmPrediction {
    let k = rng.random_range(2..=12);
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    GmmPrediction {
        components: w
            .iter()
            .map(|wi| Component {
                pi: wi / s,
                mu: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
                sigma: (rng.random_range(0.03..0.3), rng.random_range(0.03..0.3)),
                rho: rng.random_range(-0.9..0.9),
                delta: (0.0, 0.0),
                node: None,
            })
            .collect(),
    }
}

fn density_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // trapezoid rule over a box holding every component beyond 8σ
    let (lo, hi, n) = (-1.5, 2.5, 800usize);
    let h = (hi - lo) / n as f64;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_prediction(&mut rng);
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let y = lo + j as f64 * h;
                let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
                total += wx * wy * gmm_density(&p, (x, y)).unwrap();
            }
        }
        worst = worst.max((total * h * h - 1.0).abs());
    }
    check(worst < 1e-3, format!("max |∫p − 1| = {worst:.2e} over 100 mixtures"))
}

// ------------------------------------------------------------------ 3

fn parameter_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0usize;
    let mut worst_delta = 0.0f64;
    let mut failures = Vec::new();
    for model_seed in 0..10u64 {
        let cfg = ModelConfig {
            d: 16,
            ffn_hidden: 16,
            init_seed: model_seed,
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg).unwrap();
        m.register_all_edge_types().unwrap();
        // large weights drive the head into saturation
        let spread = 0.5 + model_seed as f64;
        for p in m.params.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-spread..spread);
            }
        }
        let graphs: Vec<SceneGraph> = (0..100).map(|_| random_graph(&mut rng, 4, &[1, 2], 5)).collect();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        for (g, pred) in graphs.iter().zip(m.predict_batch(&refs).unwrap()) {
            checked += 1;
            let sum: f64 = pred.components.iter().map(|c| c.pi).sum();
            if (sum - 1.0).abs() > 1e-9 {
                failures.push(format!("Σπ = {sum}"));
            }
            for c in &pred.components {
                if !(c.sigma.0 > 0.0 && c.sigma.1 > 0.0 && c.rho.abs() < 1.0 && c.pi >= 0.0) {
                    failures.push(format!("σ {:?} ρ {}", c.sigma, c.rho));
                }
                let Some(node) = c.node else {
                    failures.push("component without node".into());
                    continue;
                };
                if node.node_type == NodeType::Structure {
                    continue;
                }
                let anchor = g
                    .nodes()
                    .iter()
                    .find(|n| n.id == node.id)
                    .map(|n| n.position())
                    .unwrap();
                let d = (c.mu.0 - anchor.0).abs().max((c.mu.1 - anchor.1).abs());
                worst_delta = worst_delta.max(d);
                if d > 0.05 + 1e-12 {
                    failures.push(format!("|Δμ| = {d}"));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{checked} graphs, max |Δμ| {worst_delta:.5}, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------------------ 4

fn ablation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut equal = 0;
    let total = 50;
    for seed in 0..total {
        let g = random_graph(&mut rng, 5, &[1, 2, 4], 4);
        let mut m = Model::new(ModelConfig {
            d: 16,
            ffn_hidden: 16,
            init_seed: seed,
            ..ModelConfig::default()
        })
        .unwrap();
        m.register_graph_edge_types([&g]).unwrap();
        m.zero_affinity_encoders();
        let art = m.predict(&g).unwrap();
        m.config.variant = Variant::Hgt;
        let hgt = m.predict(&g).unwrap();
        let bits = |p: &GmmPrediction| -> Vec<u64> {
            p.components
                .iter()
                .flat_map(|c| [c.pi, c.mu.0, c.mu.1, c.sigma.0, c.sigma.1, c.rho])
                .map(f64::to_bits)
                .collect()
        };
        if bits(&art) == bits(&hgt) {
            equal += 1;
        }
    }
    check(equal == total, format!("{equal}/{total} graphs bit-identical"))
}

// ------------------------------------------------------------------ 5

fn policy_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let opts = RunOptions {
        out: dir.path().to_path_buf(),
        force: false,
    };
    let mut secs = Vec::new();
    for cmd in [Command::Gen, Command::Train, Command::Simulate, Command::Evaluate] {
        let t = Instant::now();
        let o = run_pipeline(cmd, &cfg, &opts).map_err(|e| format!("{} failed: {e}", cmd.name()))?;
        if o.status != RunStatus::Completed {
            return Err(format!("{} stopped: {:?}", cmd.name(), o.status));
        }
        secs.push(t.elapsed().as_secs_f64());
    }
    let report: TrainReport = read_json(&stage_dir(dir.path(), Command::Train).join("train_report.json"));
    let eval: Evaluation = read_json(&stage_dir(dir.path(), Command::Evaluate).join("metrics.json"));
    let kept = match report.selected_epoch {
        0 => report.initial_val_loss,
        e => report.val_loss[e - 1],
    };
    let gain = report.initial_val_loss - kept;
    let acc = eval.attended_hits as f64 / eval.attended_steps.max(1) as f64;
    // training plus held-out scoring; the rollouts are not part of the budget
    let budget = secs[0] + secs[1] + secs[3];
    check(
        acc >= 0.7 && gain >= 1.0 && budget < 1800.0,
        format!(
            "attended {}/{} = {acc:.3}, val NLL {:.3} → {kept:.3} (gain {gain:.2} nat, epoch {}), gen+train+evaluate {budget:.0}s, simulate {:.0}s",
            eval.attended_hits, eval.attended_steps, report.initial_val_loss, report.selected_epoch, secs[2]
        ),
    )
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

// ------------------------------------------------------------------ 6

fn fixation_mechanism() -> Outcome {
    let rate = 20.0;
    let seq = generate_sequence(6, &ScriptConfig::default(), &GazePolicy::default()).unwrap();
    let p = prepare_synthetic(&seq, rate).unwrap();
    let m = fixation_model(
        ModelConfig {
            d: 16,
            ffn_hidden: 16,
            ..ModelConfig::default()
        },
        1e-3,
    )
    .unwrap();
    let cfg = RolloutConfig {
        horizon: 40,
        runs: 1,
        seed: 6,
        window: 10,
        offsets: vec![1, 2, 4, 8],
        rate,
        ..RolloutConfig::default()
    };
    let r = rollout(&m, &p.frames, &cfg, &GridAppearance::default()).map_err(|e| e.to_string())?;
    let fix = detect_fixations(&r.trace, EYEMMV_T0, EYEMMV_T1, MIN_FIXATION).map_err(|e| e.to_string())?;
    let n = r.trace.len();
    let best = fix.iter().map(|f| f.last + 1 - f.first).max().unwrap_or(0);
    let cover = best as f64 / n as f64;
    check(
        !fix.is_empty() && cover >= 0.9,
        format!(
            "{} fixation(s), longest covers {best}/{n} samples ({:.0}%) over {:.1}s",
            fix.len(),
            cover * 100.0,
            n as f64 / rate
        ),
    )
}

// ------------------------------------------------------------------ 7

fn eyemmv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rate = 60.0;
    let mut exact = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=5);
        let mut centres: Vec<(f64, f64)> = Vec::new();
        while centres.len() < k {
            let c = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            if centres
                .last()
                .is_none_or(|p: &(f64, f64)| (p.0 - c.0).hypot(p.1 - c.1) > 0.3)
            {
                centres.push(c);
            }
        }
        let mut pts = Vec::new();
        for (i, c) in centres.iter().enumerate() {
            if i > 0 {
                // one in-flight sample halfway through the saccade
                let p = centres[i - 1];
                pts.push(((p.0 + c.0) / 2.0, (p.1 + c.1) / 2.0));
            }
            let len = rng.random_range(12..36);
            for _ in 0..len {
                pts.push((c.0 + rng.random_range(-0.01..0.01), c.1 + rng.random_range(-0.01..0.01)));
            }
        }
        let t = GazeTrace::from_points(&pts, rate, 0.0, Provenance::Human);
        let fix = detect_fixations(&t, EYEMMV_T0, EYEMMV_T1, MIN_FIXATION).unwrap();
        if fix.len() == k {
            exact += 1;
            for (f, c) in fix.iter().zip(&centres) {
                worst = worst.max((f.x - c.0).abs().max((f.y - c.1).abs()));
            }
        }
    }
    check(
        exact == 100 && worst <= 0.01,
        format!("exact count on {exact}/100 traces, max centroid error {worst:.4}"),
    )
}

// ------------------------------------------------------------------ 8

fn warp_paths(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, acc: f64, best: &mut f64) {
    let acc = acc + (a[i].0 - b[j].0).hypot(a[i].1 - b[j].1);
    if i + 1 == a.len() && j + 1 == b.len() {
        *best = best.min(acc);
        return;
    }
    if i + 1 < a.len() {
        warp_paths(a, b, i + 1, j, acc, best);
    }
    if j + 1 < b.len() {
        warp_paths(a, b, i, j + 1, acc, best);
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        warp_paths(a, b, i + 1, j + 1, acc, best);
    }
}

fn brute_nss(map: &[f64], fix: &[usize]) -> f64 {
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let sd = (map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    fix.iter().map(|&i| (map[i] - mean) / sd).sum::<f64>() / fix.len() as f64
}

fn brute_ig(map: &[f64], base: &[f64], fix: &[usize]) -> f64 {
    let (sm, sb) = (map.iter().sum::<f64>(), base.iter().sum::<f64>());
    fix.iter()
        .map(|&i| (map[i] / sm + 1e-12).log2() - (base[i] / sb + 1e-12).log2())
        .sum::<f64>()
        / fix.len() as f64
}

fn brute_auc(map: &[f64], fix: &[usize]) -> f64 {
    let mut thr: Vec<f64> = fix.iter().map(|&i| map[i]).collect();
    thr.sort_by(|a, b| b.total_cmp(a));
    thr.dedup();
    let mut roc = vec![(0.0, 0.0)];
    for t in thr {
        let tp = fix.iter().filter(|&&i| map[i] >= t).count() as f64 / fix.len() as f64;
        let fp = map.iter().filter(|&&v| v >= t).count() as f64 / map.len() as f64;
        roc.push((fp, tp));
    }
    roc.push((1.0, 1.0));
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut notes = Vec::new();

    let mut dtw_pairs = 0;
    for la in 1..=6 {
        for lb in 1..=6 {
            for _ in 0..5 {
                let mut pts = |n: usize| -> Vec<(f64, f64)> {
                    (0..n)
                        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                        .collect()
                };
                let (a, b) = (pts(la), pts(lb));
                let mut best = f64::INFINITY;
                warp_paths(&a, &b, 0, 0, 0.0, &mut best);
                if dtw_points(&a, &b).unwrap() != best {
                    notes.push(format!("dtw {la}×{lb}"));
                }
                dtw_pairs += 1;
            }
        }
    }

    let cases = [
        ("kitten", "sitting", 3),
        ("flaw", "lawn", 2),
        ("saturday", "sunday", 3),
        ("intention", "execution", 5),
        ("", "abc", 3),
        ("abc", "abc", 0),
        ("gumbo", "gambol", 2),
    ];
    for (a, b, want) in cases {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        if edit_distance(&a, &b) != want || edit_distance(&b, &a) != want {
            notes.push(format!("levenshtein {a:?}/{b:?}"));
        }
    }

    let mut sal_worst = 0.0f64;
    for frame in 0..50 {
        let mut map = SaliencyMap::zeros(frame, 8, 4);
        let mut base = SaliencyMap::zeros(frame, 8, 4);
        for v in map.data.iter_mut() {
            // repeated values exercise tied thresholds
            *v = (rng.random_range(0..6) as f64) / 5.0;
        }
        for v in base.data.iter_mut() {
            *v = rng.random_range(0.01..1.0);
        }
        map.data[0] = 1.0;
        let fix: Vec<usize> = (0..rng.random_range(1..10)).map(|_| rng.random_range(0..32)).collect();
        let px: Vec<(usize, usize)> = fix.iter().map(|&i| (i % 8, i / 8)).collect();
        for (got, want) in [
            (nss(&map, &px).unwrap(), brute_nss(&map.data, &fix)),
            (
                information_gain(&map, &base, &px).unwrap(),
                brute_ig(&map.data, &base.data, &fix),
            ),
            (auc(&map, &px).unwrap(), brute_auc(&map.data, &fix)),
        ] {
            sal_worst = sal_worst.max((got - want).abs());
        }
    }
    if sal_worst > 1e-9 {
        notes.push(format!("saliency error {sal_worst:.2e}"));
    }

    let metric = |a: &GazeTrace, b: &GazeTrace| dtw_points(&a.points(), &b.points());
    for case in 0..30 {
        let traces: Vec<GazeTrace> = (0..6)
            .map(|_| {
                let pts: Vec<(f64, f64)> = (0..rng.random_range(2..6))
                    .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                    .collect();
                GazeTrace::from_points(&pts, 20.0, 0.0, Provenance::Human)
            })
            .collect();
        let (gen, refs) = traces.split_at(3);
        let loo = case % 2 == 1;
        let refs = if loo { gen } else { refs };
        let r = pair_best_match(gen, refs, &metric, false, loo).unwrap();
        let mut vals = Vec::new();
        for (i, g) in gen.iter().enumerate() {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, h) in refs.iter().enumerate() {
                if loo && i == j {
                    continue;
                }
                let v = metric(g, h).unwrap();
                if v < best.0 {
                    best = (v, j);
                }
            }
            let m = r.matches[i].unwrap();
            if m.reference != best.1 || m.value != best.0 {
                notes.push(format!("pairing case {case} trace {i}"));
            }
            vals.push(best.0);
        }
        let mean = vals.iter().sum::<f64>() / 3.0;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        if (r.mean - mean).abs() > 1e-12 || (r.std - std).abs() > 1e-12 {
            notes.push(format!("pairing aggregate case {case}"));
        }
    }

    check(
        notes.is_empty(),
        format!(
            "{dtw_pairs} DTW pairs exact, {} edit cases, saliency max err {sal_worst:.1e}, 30 pairing cases{}",
            cases.len(),
            if notes.is_empty() {
                String::new()
            } else {
                format!("; mismatches: {}", notes.join(", "))
            }
        ),
    )
}

// ------------------------------------------------------------------ 9

fn spectral_sanity() -> Outcome {
    let rate = 20.0;
    let n = 512;
    let (amp, offset, f0) = (0.05, 0.1, 2.0);
    let r: Vec<f64> = (0..n)
        .map(|i| offset + amp * (2.0 * PI * f0 * i as f64 / rate).sin())
        .collect();
    // two traces mirrored about a drifting mean: both residual magnitudes equal r
    let centre = |i: usize| (0.5 + 0.001 * i as f64 / n as f64, 0.4);
    let angle = 0.7f64;
    let a: Vec<(f64, f64)> = (0..n)
        .map(|i| (centre(i).0 + r[i] * angle.cos(), centre(i).1 + r[i] * angle.sin()))
        .collect();
    let b: Vec<(f64, f64)> = (0..n)
        .map(|i| (centre(i).0 - r[i] * angle.cos(), centre(i).1 - r[i] * angle.sin()))
        .collect();
    let group = [
        GazeTrace::from_points(&a, rate, 0.0, Provenance::Human),
        GazeTrace::from_points(&b, rate, 0.0, Provenance::Human),
    ];
    let p = residual_psd(&group, rate, &WelchConfig::default()).map_err(|e| e.to_string())?;
    let peak = p.peak().unwrap();
    let df = p.df();
    let mean = r.iter().sum::<f64>() / n as f64;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let power = p.total_power();
    let rel = (power - var).abs() / var;
    check(
        (peak - f0).abs() <= df + 1e-12 && rel < 0.02,
        format!(
            "peak {peak:.4} Hz (bin {df:.4} Hz), ∫PSD {power:.6e} vs variance {var:.6e} ({:.2}%)",
            rel * 100.0
        ),
    )
}

// ------------------------------------------------------------------ 10

fn determinism() -> Outcome {
    let cfg = parse_config_str(include_str!("../../../configs/smoke.toml")).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let opts = RunOptions {
            out: d.path().to_path_buf(),
            force: false,
        };
        for cmd in [Command::Gen, Command::Train, Command::Simulate, Command::Evaluate] {
            run_pipeline(cmd, &cfg, &opts).map_err(|e| e.to_string())?;
        }
    }
    let files = [
        "metrics.csv",
        "metrics.json",
        "state_dynamics.csv",
        "psd.csv",
        "band_ratio.csv",
        "policy.csv",
    ];
    let mut differ = Vec::new();
    let mut bytes = 0;
    for f in files {
        let read = |d: &tempfile::TempDir| std::fs::read(stage_dir(d.path(), Command::Evaluate).join(f)).unwrap();
        let (x, y) = (read(&dirs[0]), read(&dirs[1]));
        bytes += x.len();
        if x != y {
            differ.push(f);
        }
    }
    check(
        differ.is_empty(),
        format!(
            "{} tables, {bytes} bytes compared{}",
            files.len(),
            if differ.is_empty() {
                String::new()
            } else {
                format!("; differ: {differ:?}")
            }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "density normalization", density_normalization),
        (3, "parameter validity", parameter_validity),
        (4, "ablation identity", ablation_identity),
        (6, "fixation mechanism", fixation_mechanism),
        (7, "fixation detection oracle", eyemmv_oracle),
        (8, "metric oracles", metric_oracles),
        (9, "spectral sanity", spectral_sanity),
        (10, "determinism", determinism),
        (5, "synthetic policy recovery", policy_recovery),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
