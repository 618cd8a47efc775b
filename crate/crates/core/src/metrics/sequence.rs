use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::GazeTrace;

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Accumulated cost of the optimal monotone alignment of two point
/// sequences, with Euclidean local cost.
pub fn dtw_points(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("dtw needs two non-empty traces".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = dist(p, b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// DTW on normalised coordinates.
pub fn dtw(a: &GazeTrace, b: &GazeTrace) -> Result<f64> {
    dtw_points(&a.points(), &b.points())
}

/// DTW with coordinates scaled to pixels of a `w × h` frame.
pub fn dtw_pixels(a: &GazeTrace, b: &GazeTrace, dims: (f64, f64)) -> Result<f64> {
    let scale =
        |t: &GazeTrace| -> Vec<(f64, f64)> { t.points().into_iter().map(|(x, y)| (x * dims.0, y * dims.1)).collect() };
    dtw_points(&scale(a), &scale(b))
}

fn resample_series(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == n {
        return v.to_vec();
    }
    (0..n)
        .map(|i| {
            let pos = i as f64 * (v.len() - 1) as f64 / (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            let w = pos - lo as f64;
            v[lo] + w * (v[hi] - v[lo])
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation of a constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean of the x and y Pearson correlations; the shorter trace is
/// linearly resampled to the longer one's length.
pub fn temporal_correlation(a: &GazeTrace, b: &GazeTrace) -> Result<f64> {
    let n = a.len().max(b.len());
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(
            "temporal correlation needs at least 2 samples per trace".into(),
        ));
    }
    let xs = |t: &GazeTrace| resample_series(&t.samples.iter().map(|s| s.x).collect::<Vec<_>>(), n);
    let ys = |t: &GazeTrace| resample_series(&t.samples.iter().map(|s| s.y).collect::<Vec<_>>(), n);
    Ok(0.5 * (pearson(&xs(a), &xs(b))? + pearson(&ys(a), &ys(b))?))
}

/// Cell index of each sample on a `gw × gh` grid, row-major.
pub fn tokenize(t: &GazeTrace, grid: (usize, usize)) -> Vec<usize> {
    let (gw, gh) = grid;
    t.samples
        .iter()
        .map(|s| {
            let c = ((s.x * gw as f64).floor().max(0.0) as usize).min(gw - 1);
            let r = ((s.y * gh as f64).floor().max(0.0) as usize).min(gh - 1);
            r * gw + c
        })
        .collect()
}

/// Unit-cost edit distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const LEV_GRID: (usize, usize) = (16, 8);

pub fn levenshtein_scanpath(a: &GazeTrace, b: &GazeTrace, grid: (usize, usize)) -> usize {
    edit_distance(&tokenize(a, grid), &tokenize(b, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMetric {
    Dtw,
    /// DTW on pixel coordinates of the given frame size.
    DtwPixels,
    Tc,
    Lev,
}

impl SequenceMetric {
    pub fn name(self) -> &'static str {
        match self {
            SequenceMetric::Dtw => "dtw",
            SequenceMetric::DtwPixels => "dtw_px",
            SequenceMetric::Tc => "tc",
            SequenceMetric::Lev => "lev",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == SequenceMetric::Tc
    }

    pub fn eval(self, a: &GazeTrace, b: &GazeTrace, dims: (f64, f64)) -> Result<f64> {
        match self {
            SequenceMetric::Dtw => dtw(a, b),
            SequenceMetric::DtwPixels => dtw_pixels(a, b, dims),
            SequenceMetric::Tc => temporal_correlation(a, b),
            SequenceMetric::Lev => Ok(levenshtein_scanpath(a, b, LEV_GRID) as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub reference: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    /// Per generated trace; `None` when the metric is undefined against
    /// every reference.
    pub matches: Vec<Option<Match>>,
    pub mean: f64,
    /// Population standard deviation of the matched values.
    pub std: f64,
}

/// Best reference for every generated trace. Pairs where the metric is
/// undefined are skipped. Under leave-one-out the two lists must be the
/// same and a trace is never compared with itself.
pub fn pair_best_match(
    generated: &[GazeTrace],
    reference: &[GazeTrace],
    metric: &(dyn Fn(&GazeTrace, &GazeTrace) -> Result<f64> + Sync),
    higher_is_better: bool,
    leave_one_out: bool,
) -> Result<PairingResult> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Contract("pairing needs non-empty trace lists".into()));
    }
    if leave_one_out {
        if generated.len() != reference.len() {
            return Err(Error::Contract("leave-one-out pairs a list with itself".into()));
        }
        if generated.len() < 2 {
            return Err(Error::Contract("leave-one-out needs at least two traces".into()));
        }
    }
    let mut matches = Vec::with_capacity(generated.len());
    for (i, g) in generated.iter().enumerate() {
        let mut best: Option<Match> = None;
        for (j, r) in reference.iter().enumerate() {
            if leave_one_out && i == j {
                continue;
            }
            let v = match metric(g, r) {
                Ok(v) => v,
                Err(Error::Undefined(_)) => continue,
                Err(e) => return Err(e),
            };
            let better = match best {
                None => true,
                Some(b) if higher_is_better => v > b.value,
                Some(b) => v < b.value,
            };
            if better {
                best = Some(Match { reference: j, value: v });
            }
        }
        matches.push(best);
    }
    let (mean, std) = mean_std(matches.iter().flatten().map(|m| m.value));
    Ok(PairingResult { matches, mean, std })
}

/// Mean and population std, summed in sorted order so the result does not
/// depend on input order. NaN for an empty input.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Provenance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tr(points: &[(f64, f64)]) -> GazeTrace {
        GazeTrace::from_points(points, 20.0, 0.0, Provenance::Human)
    }

    // Minimum over every monotone warping path, each path's cost summed
    // from the start.
    fn dtw_exhaustive(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        fn go(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = dist(a[i], b[j]) + acc;
            if i + 1 == a.len() && j + 1 == b.len() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                go(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                go(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                go(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        go(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn dtw_small_cases() {
        assert_eq!(dtw(&tr(&[(0.0, 0.0), (1.0, 0.0)]), &tr(&[(0.0, 0.0)])).unwrap(), 1.0);
        let a = tr(&[(0.1, 0.2), (0.3, 0.4)]);
        assert_eq!(dtw(&a, &a).unwrap(), 0.0);
        assert!(matches!(dtw(&a, &tr(&[])), Err(Error::Contract(_))));
        assert_eq!(
            dtw_pixels(&tr(&[(0.0, 0.0), (1.0, 0.0)]), &tr(&[(0.0, 0.0)]), (640.0, 320.0)).unwrap(),
            640.0
        );
    }

    #[test]
    fn dtw_matches_exhaustive_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            let b: Vec<(f64, f64)> = (0..m).map(|_| (rng.random(), rng.random())).collect();
            assert_eq!(dtw_points(&a, &b).unwrap(), dtw_exhaustive(&a, &b));
        }
    }

    #[test]
    fn tc_identity_mirror_and_formula() {
        let a = tr(&[(0.1, 0.5), (0.4, 0.2), (0.3, 0.9), (0.8, 0.6)]);
        assert!((temporal_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mx = a.samples.iter().map(|s| s.x).sum::<f64>() / 4.0;
        let my = a.samples.iter().map(|s| s.y).sum::<f64>() / 4.0;
        let m = tr(&a
            .samples
            .iter()
            .map(|s| (2.0 * mx - s.x, 2.0 * my - s.y))
            .collect::<Vec<_>>());
        assert!((temporal_correlation(&a, &m).unwrap() + 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<(f64, f64)> = (0..30).map(|_| (rng.random(), rng.random())).collect();
        let q: Vec<(f64, f64)> = (0..30).map(|_| (rng.random(), rng.random())).collect();
        // r = (nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))
        let r = |u: &[f64], v: &[f64]| {
            let n = u.len() as f64;
            let sx: f64 = u.iter().sum();
            let sy: f64 = v.iter().sum();
            let sxy: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let sxx: f64 = u.iter().map(|a| a * a).sum();
            let syy: f64 = v.iter().map(|a| a * a).sum();
            (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
        };
        let px: Vec<f64> = p.iter().map(|v| v.0).collect();
        let py: Vec<f64> = p.iter().map(|v| v.1).collect();
        let qx: Vec<f64> = q.iter().map(|v| v.0).collect();
        let qy: Vec<f64> = q.iter().map(|v| v.1).collect();
        let expect = 0.5 * (r(&px, &qx) + r(&py, &qy));
        assert!((temporal_correlation(&tr(&p), &tr(&q)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn tc_constant_is_undefined() {
        let a = tr(&[(0.5, 0.1), (0.5, 0.2), (0.5, 0.3)]);
        let b = tr(&[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3)]);
        assert!(matches!(temporal_correlation(&a, &b), Err(Error::Undefined(_))));
    }

    #[test]
    fn tc_resamples_shorter_trace() {
        let a = tr(&[(0.0, 0.0), (0.5, 0.25), (1.0, 0.5)]);
        let b = tr(&[(0.0, 0.0), (1.0, 0.5)]);
        assert!((temporal_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edit_distance_textbook() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance(b"flaw", b"lawn"), 2);
        assert_eq!(edit_distance(b"", b"abcd"), 4);
        assert_eq!(edit_distance(b"same", b"same"), 0);
        // token analogue of kitten/sitting on the grid
        let cell = |c: usize| ((c % 16) as f64 / 16.0 + 0.01, (c / 16) as f64 / 8.0 + 0.01);
        let a = tr(&b"kitten".map(|c| cell(c as usize - 97)));
        let b = tr(&b"sitting".map(|c| cell(c as usize - 97)));
        assert_eq!(levenshtein_scanpath(&a, &b, LEV_GRID), 3);
        assert_eq!(levenshtein_scanpath(&a, &a, LEV_GRID), 0);
        assert_eq!(levenshtein_scanpath(&tr(&[]), &a, LEV_GRID), 6);
    }

    #[test]
    fn tokens_clamp_to_grid() {
        let t = tr(&[(0.0, 0.0), (1.0, 1.0), (0.5, 0.5)]);
        assert_eq!(tokenize(&t, (16, 8)), vec![0, 127, 4 * 16 + 8]);
    }

    fn random_traces(rng: &mut ChaCha8Rng, n: usize) -> Vec<GazeTrace> {
        (0..n)
            .map(|_| {
                let len = rng.random_range(2..6);
                tr(&(0..len).map(|_| (rng.random(), rng.random())).collect::<Vec<_>>())
            })
            .collect()
    }

    #[test]
    fn pairing_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let gen = random_traces(&mut rng, 3);
            let refs = random_traces(&mut rng, 3);
            let m = |a: &GazeTrace, b: &GazeTrace| dtw(a, b);
            let got = pair_best_match(&gen, &refs, &m, false, false).unwrap();
            let mut values = Vec::new();
            for (i, g) in gen.iter().enumerate() {
                let all: Vec<f64> = refs.iter().map(|r| dtw(g, r).unwrap()).collect();
                let best = (0..3).min_by(|&a, &b| all[a].total_cmp(&all[b])).unwrap();
                assert_eq!(
                    got.matches[i],
                    Some(Match {
                        reference: best,
                        value: all[best]
                    })
                );
                values.push(all[best]);
            }
            let mean = values.iter().sum::<f64>() / 3.0;
            let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!((got.mean - mean).abs() < 1e-12 && (got.std - std).abs() < 1e-12);

            let tc = |a: &GazeTrace, b: &GazeTrace| temporal_correlation(a, b);
            let got = pair_best_match(&gen, &refs, &tc, true, false).unwrap();
            for (i, g) in gen.iter().enumerate() {
                let all: Vec<f64> = refs.iter().map(|r| temporal_correlation(g, r).unwrap()).collect();
                let best = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(got.matches[i].unwrap().value, best);
            }
        }
    }

    #[test]
    fn self_match_and_closer_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let refs = random_traces(&mut rng, 4);
        let m = |a: &GazeTrace, b: &GazeTrace| dtw(a, b);
        let got = pair_best_match(&refs[1..3], &refs, &m, false, false).unwrap();
        assert!(got.matches.iter().all(|x| x.unwrap().value == 0.0));

        let g = tr(&[(0.5, 0.5)]);
        let near = tr(&[(0.55, 0.5)]);
        let far = tr(&[(0.9, 0.5)]);
        let got = pair_best_match(&[g], &[far, near], &m, false, false).unwrap();
        assert_eq!(got.matches[0].unwrap().reference, 1);
    }

    #[test]
    fn leave_one_out_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t = random_traces(&mut rng, 3);
        let m = |a: &GazeTrace, b: &GazeTrace| dtw(a, b);
        let got = pair_best_match(&t, &t, &m, false, true).unwrap();
        for (i, x) in got.matches.iter().enumerate() {
            assert_ne!(x.unwrap().reference, i);
            assert!(x.unwrap().value > 0.0);
        }
        assert!(pair_best_match(&t[..1], &t[..1], &m, false, true).is_err());
    }

    proptest! {
        #[test]
        fn dtw_symmetric_and_zero_suffix(
            a in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..8),
            b in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..8),
        ) {
            let ab = dtw_points(&a, &b).unwrap();
            prop_assert_eq!(ab, dtw_points(&b, &a).unwrap());
            prop_assert_eq!(dtw_points(&a, &a).unwrap(), 0.0);
            // repeating the final points of both costs at most one more match
            let (la, lb) = (*a.last().unwrap(), *b.last().unwrap());
            let mut a2 = a.clone();
            a2.push(la);
            let mut b2 = b.clone();
            b2.push(lb);
            let ext = dtw_points(&a2, &b2).unwrap();
            prop_assert!(ext >= ab - 1e-12);
            prop_assert!(ext <= ab + (la.0 - lb.0).hypot(la.1 - lb.1) + 1e-12);
        }

        #[test]
        fn edit_distance_is_a_metric(
            a in prop::collection::vec(0u8..4, 0..10),
            b in prop::collection::vec(0u8..4, 0..10),
            c in prop::collection::vec(0u8..4, 0..10),
        ) {
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }

        #[test]
        fn pairing_aggregate_ignores_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = random_traces(&mut rng, 5);
            let refs = random_traces(&mut rng, 4);
            let m = |a: &GazeTrace, b: &GazeTrace| dtw(a, b);
            let fwd = pair_best_match(&gen, &refs, &m, false, false).unwrap();
            let rev: Vec<GazeTrace> = gen.iter().rev().cloned().collect();
            let back = pair_best_match(&rev, &refs, &m, false, false).unwrap();
            prop_assert_eq!(fwd.mean, back.mean);
            prop_assert_eq!(fwd.std, back.std);
        }
    }
}
