use std::fs;
use std::io::Write;
use std::path::Path;

use super::FixationEvent;
use crate::error::{Error, Result};

/// Row-major `height × width` map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SaliencyMap {
    pub fn zeros(frame: usize, width: usize, height: usize) -> Self {
        Self {
            frame,
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel of a normalised coordinate.
    pub fn pixel(&self, x: f64, y: f64) -> (usize, usize) {
        to_pixel(x, y, self.width, self.height)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

fn to_pixel(x: f64, y: f64, w: usize, h: usize) -> (usize, usize) {
    let px = (x * w as f64).round().clamp(0.0, (w - 1) as f64) as usize;
    let py = (y * h as f64).round().clamp(0.0, (h - 1) as f64) as usize;
    (px, py)
}

/// Blur σ in pixels for an image `width` pixels wide.
pub fn blur_sigma(width: usize) -> f64 {
    19.0 * width as f64 / 640.0
}

// symmetric reflection: -1 → 0, n → n-1
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    i = i.rem_euclid(period);
    (if i < n { i } else { period - 1 - i }) as usize
}

/// Separable Gaussian blur with radius ⌈3σ⌉ and reflected borders.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();

    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = (-r..=r)
                .zip(&kernel)
                .map(|(k, w)| w * row[reflect(x as isize + k, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for x in 0..width {
        for y in 0..height {
            out[y * width + x] = (-r..=r)
                .zip(&kernel)
                .map(|(k, w)| w * tmp[reflect(y as isize + k, height) * width + x])
                .sum();
        }
    }
    out
}

/// One map per frame: fixation counts at rounded pixels, blurred, and
/// divided by the maximum (an empty frame stays zero).
pub fn build_saliency_map(fixations: &[Vec<(f64, f64)>], dims: (usize, usize)) -> Result<Vec<SaliencyMap>> {
    let (w, h) = dims;
    if w == 0 || h == 0 {
        return Err(Error::Contract(format!("saliency map size {w}×{h}")));
    }
    let sigma = blur_sigma(w);
    fixations
        .iter()
        .enumerate()
        .map(|(frame, points)| {
            let mut counts = vec![0.0; w * h];
            for &(x, y) in points {
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    return Err(Error::Contract(format!("fixation ({x}, {y}) outside [0, 1]²")));
                }
                let (px, py) = to_pixel(x, y, w, h);
                counts[py * w + px] += 1.0;
            }
            let mut data = gaussian_blur(&counts, w, h, sigma);
            let max = data.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                data.iter_mut().for_each(|v| *v /= max);
            }
            Ok(SaliencyMap {
                frame,
                width: w,
                height: h,
                data,
            })
        })
        .collect()
}

/// Fixation centroids active at each of `n_frames` frames at `fps`; a
/// fixation covers `[onset, onset + duration)`.
pub fn fixations_per_frame(fixations: &[FixationEvent], n_frames: usize, fps: f64) -> Vec<Vec<(f64, f64)>> {
    (0..n_frames)
        .map(|f| {
            let t = f as f64 / fps;
            fixations
                .iter()
                .filter(|fx| fx.onset <= t + 1e-9 && t < fx.onset + fx.duration - 1e-9)
                .map(|fx| (fx.x, fx.y))
                .collect()
        })
        .collect()
}

/// 8-bit binary PGM, values scaled by 255 and rounded.
pub fn write_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    bytes.extend(map.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Raw grid, one CSV row per image row, shortest round-trip formatting.
pub fn write_map_csv(path: &Path, map: &SaliencyMap) -> Result<()> {
    let mut s = String::new();
    for row in map.data.chunks(map.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_map_csv(path: &Path, frame: usize) -> Result<SaliencyMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut width = 0;
    let mut height = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Csv(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if height > 0 && row.len() != width {
            return Err(Error::Csv(format!(
                "{} row {} has {} cells, expected {width}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        width = row.len();
        height += 1;
        data.extend(row);
    }
    Ok(SaliencyMap {
        frame,
        width,
        height,
        data,
    })
}
