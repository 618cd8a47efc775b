use crate::error::{Error, Result};
use crate::post::SaliencyMap;

pub const IG_EPS: f64 = 1e-12;

fn check_pixels(map: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<()> {
    if fixations.is_empty() {
        return Err(Error::Contract("no fixations to score".into()));
    }
    if let Some(&(x, y)) = fixations.iter().find(|&&(x, y)| x >= map.width || y >= map.height) {
        return Err(Error::Contract(format!(
            "fixation pixel ({x}, {y}) outside {}×{} map",
            map.width, map.height
        )));
    }
    Ok(())
}

/// Mean z-scored saliency at the fixation pixels.
pub fn nss(map: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<f64> {
    check_pixels(map, fixations)?;
    let n = map.data.len() as f64;
    let mean = map.data.iter().sum::<f64>() / n;
    let var = map.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateMap("zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(fixations.iter().map(|&(x, y)| (map.get(x, y) - mean) / sd).sum::<f64>() / fixations.len() as f64)
}

fn probabilities(map: &SaliencyMap) -> Vec<f64> {
    let s: f64 = map.data.iter().sum();
    if s > 0.0 {
        map.data.iter().map(|v| v / s).collect()
    } else {
        vec![0.0; map.data.len()]
    }
}

/// Mean log₂ ratio of model to baseline probability at the fixations,
/// both maps normalised to sum to one.
pub fn information_gain(map: &SaliencyMap, baseline: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<f64> {
    check_pixels(map, fixations)?;
    if (map.width, map.height) != (baseline.width, baseline.height) {
        return Err(Error::dim("information_gain", "map and baseline sizes differ"));
    }
    let p = probabilities(map);
    let b = probabilities(baseline);
    Ok(fixations
        .iter()
        .map(|&(x, y)| {
            let i = y * map.width + x;
            (p[i] + IG_EPS).log2() - (b[i] + IG_EPS).log2()
        })
        .sum::<f64>()
        / fixations.len() as f64)
}

/// AUC-Judd: one ROC point per distinct fixation saliency value, with the
/// false-positive rate taken over all pixels.
pub fn auc(map: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<f64> {
    check_pixels(map, fixations)?;
    let mut fix: Vec<f64> = fixations.iter().map(|&(x, y)| map.get(x, y)).collect();
    fix.sort_by(|a, b| b.total_cmp(a));
    let mut all = map.data.clone();
    all.sort_by(|a, b| b.total_cmp(a));
    let (nf, np) = (fix.len() as f64, all.len() as f64);

    let mut pts = vec![(0.0, 0.0)];
    let (mut fi, mut pi) = (0, 0);
    let mut i = 0;
    while i < fix.len() {
        let thr = fix[i];
        while i < fix.len() && fix[i] >= thr {
            i += 1;
        }
        while fi < fix.len() && fix[fi] >= thr {
            fi += 1;
        }
        while pi < all.len() && all[pi] >= thr {
            pi += 1;
        }
        pts.push((pi as f64 / np, fi as f64 / nf));
    }
    pts.push((1.0, 1.0));
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Bivariate Gaussian fitted to fixation positions (normalised
/// coordinates), rendered on a `w × h` grid at pixel positions `i / w`.
/// Variances are floored at `1e-4` so a single fixation still gives a
/// proper map.
pub fn center_prior(fixations: &[(f64, f64)], dims: (usize, usize)) -> Result<SaliencyMap> {
    if fixations.is_empty() {
        return Err(Error::Contract("center prior needs at least one fixation".into()));
    }
    let n = fixations.len() as f64;
    let mx = fixations.iter().map(|p| p.0).sum::<f64>() / n;
    let my = fixations.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = fixations.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
    let mut syy = fixations.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
    let sxy = fixations.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    sxx = sxx.max(1e-4);
    syy = syy.max(1e-4);
    let det = (sxx * syy - sxy * sxy).max(1e-12);
    let (w, h) = dims;
    let mut map = SaliencyMap::zeros(0, w, h);
    for py in 0..h {
        for px in 0..w {
            let dx = px as f64 / w as f64 - mx;
            let dy = py as f64 / h as f64 - my;
            let q = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
            map.data[py * w + px] = (-0.5 * q).exp();
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(w: usize, h: usize, data: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            frame: 0,
            width: w,
            height: h,
            data,
        }
    }

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, levels: u32) -> SaliencyMap {
        map(
            w,
            h,
            (0..w * h)
                .map(|_| f64::from(rng.random_range(0..levels)) / f64::from(levels))
                .collect(),
        )
    }

    fn random_fixations(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| (rng.random_range(0..w), rng.random_range(0..h)))
            .collect()
    }

    #[test]
    fn nss_direct_example() {
        let m = map(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let v = nss(&m, &[(0, 0)]).unwrap();
        assert!((v - 0.75 / 0.1875f64.sqrt()).abs() < 1e-12);
        assert!((v - 1.732).abs() < 1e-3);
        let m = map(3, 1, vec![0.0, 0.5, 1.0]);
        assert!(nss(&m, &[(1, 0)]).unwrap().abs() < 1e-15);
        assert!(matches!(
            nss(&map(2, 1, vec![0.3, 0.3]), &[(0, 0)]),
            Err(Error::DegenerateMap(_))
        ));
    }

    #[test]
    fn ig_cases() {
        let base = map(2, 2, vec![0.25; 4]);
        assert_eq!(information_gain(&base, &base, &[(1, 1)]).unwrap(), 0.0);
        let double = map(2, 2, vec![0.5, 0.5, 0.0, 0.0]);
        let v = information_gain(&double, &base, &[(0, 0), (1, 0)]).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let v = information_gain(&double, &base, &[(0, 1)]).unwrap();
        assert!(v.is_finite() && v < -30.0);
    }

    #[test]
    fn auc_constant_and_exact_maps() {
        let c = map(4, 2, vec![0.7; 8]);
        assert_eq!(auc(&c, &[(0, 0), (3, 1)]).unwrap(), 0.5);
        let mut m = map(8, 4, vec![0.0; 32]);
        let fix = [(1, 1), (6, 2), (3, 0)];
        for &(x, y) in &fix {
            m.data[y * 8 + x] = 1.0;
        }
        let v = auc(&m, &fix).unwrap();
        assert!((v - (1.0 - 3.0 / 64.0)).abs() < 1e-12);
    }

    // Direct definitions, written independently of the sorted sweeps.
    fn nss_brute(m: &SaliencyMap, fix: &[(usize, usize)]) -> f64 {
        let n = m.data.len() as f64;
        let mean: f64 = m.data.iter().sum::<f64>() / n;
        let sd = (m.data.iter().map(|v| v * v).sum::<f64>() / n - mean * mean).sqrt();
        fix.iter()
            .map(|&(x, y)| (m.data[y * m.width + x] - mean) / sd)
            .sum::<f64>()
            / fix.len() as f64
    }

    fn ig_brute(m: &SaliencyMap, b: &SaliencyMap, fix: &[(usize, usize)]) -> f64 {
        let sm: f64 = m.data.iter().sum();
        let sb: f64 = b.data.iter().sum();
        let mut acc = 0.0;
        for &(x, y) in fix {
            let i = y * m.width + x;
            acc += ((m.data[i] / sm + IG_EPS) / (b.data[i] / sb + IG_EPS)).ln() / std::f64::consts::LN_2;
        }
        acc / fix.len() as f64
    }

    fn auc_brute(m: &SaliencyMap, fix: &[(usize, usize)]) -> f64 {
        let vals: Vec<f64> = fix.iter().map(|&(x, y)| m.data[y * m.width + x]).collect();
        let mut thresholds: Vec<f64> = Vec::new();
        for v in &vals {
            if !thresholds.contains(v) {
                thresholds.push(*v);
            }
        }
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut tpr = vec![0.0];
        let mut fpr = vec![0.0];
        for t in thresholds {
            tpr.push(vals.iter().filter(|&&v| v >= t).count() as f64 / vals.len() as f64);
            fpr.push(m.data.iter().filter(|&&v| v >= t).count() as f64 / m.data.len() as f64);
        }
        tpr.push(1.0);
        fpr.push(1.0);
        let mut area = 0.0;
        for k in 1..tpr.len() {
            area += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2.0;
        }
        area
    }

    #[test]
    fn small_grids_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let m = random_map(&mut rng, 8, 4, 6);
            let b = random_map(&mut rng, 8, 4, 6);
            let n = rng.random_range(1..8);
            let fix = random_fixations(&mut rng, 8, 4, n);
            if m.data.iter().all(|&v| v == m.data[0]) || b.data.iter().all(|&v| v == 0.0) {
                continue;
            }
            assert!((nss(&m, &fix).unwrap() - nss_brute(&m, &fix)).abs() < 1e-9);
            assert!((information_gain(&m, &b, &fix).unwrap() - ig_brute(&m, &b, &fix)).abs() < 1e-9);
            assert!((auc(&m, &fix).unwrap() - auc_brute(&m, &fix)).abs() < 1e-9);
        }
    }

    #[test]
    fn nss_of_uniform_fixations_centres_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let m = random_map(&mut rng, 16, 8, 50);
        let n = 20_000;
        let fix = random_fixations(&mut rng, 16, 8, n);
        let v = nss(&m, &fix).unwrap();
        assert!(v.abs() < 3.0 / (n as f64).sqrt(), "{v}");
    }

    #[test]
    fn auc_of_map_distributed_fixations_beats_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m = random_map(&mut rng, 16, 8, 50);
        let total: f64 = m.data.iter().sum();
        let fix: Vec<(usize, usize)> = (0..2000)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                let mut i = 0;
                while u > m.data[i] && i + 1 < m.data.len() {
                    u -= m.data[i];
                    i += 1;
                }
                (i % 16, i / 16)
            })
            .collect();
        assert!(auc(&m, &fix).unwrap() > 0.5);
    }

    #[test]
    fn center_prior_peaks_at_fixation_mean() {
        let p = center_prior(&[(0.25, 0.5), (0.75, 0.5)], (16, 8)).unwrap();
        let argmax = p.data.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!((argmax % 16, argmax / 16), (8, 4));
        let single = center_prior(&[(0.5, 0.5)], (16, 8)).unwrap();
        assert!(single.data.iter().all(|v| v.is_finite()));
    }
}
