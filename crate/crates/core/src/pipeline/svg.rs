//! Minimal static SVG line plots and heat-map overlays.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 45.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series], log_y: bool) -> ((f64, f64), (f64, f64)) {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let y = if log_y { y.log10() } else { y };
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    ((x0, x1), (y0, y1))
}

/// Line plot of each series with a legend; `log_y` plots `log10(y)` and
/// drops non-positive values.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let ((x0, x1), (y0, y1)) = bounds(series, log_y);
    let (ml, mr, mt, mb) = MARGIN;
    let pw = W - ml - mr;
    let ph = H - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let ylab = if log_y {
            format!("1e{yv:.1}")
        } else {
            format!("{yv:.3}")
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            sx(xv),
            H - mb + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#,
            ml - 5.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        H - 8.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(if log_y { y.log10() } else { y })))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = mt + 12.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            W - mr - 110.0,
            W - mr - 95.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            W - mr - 90.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A `w × h` map in `[0, 1]` drawn as shaded cells with gaze points on top.
pub fn heat_overlay(title: &str, map: &[f64], w: usize, h: usize, points: &[(f64, f64)]) -> String {
    let scale = (W / w as f64).min((H - 30.0) / h as f64);
    let (pw, ph) = (scale * w as f64, scale * h as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{pw:.0}" height="{:.0}" viewBox="0 0 {pw:.1} {:.1}" font-family="sans-serif" font-size="12">"#,
        ph + 30.0,
        ph + 30.0
    );
    let _ = writeln!(s, r#"<rect width="{pw:.1}" height="{:.1}" fill="white"/>"#, ph + 30.0);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#,
        pw / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<g transform="translate(0 30)">"#);
    let _ = writeln!(s, r#"<rect width="{pw:.1}" height="{ph:.1}" fill="black"/>"#);
    for r in 0..h {
        for c in 0..w {
            let v = map[r * w + c].clamp(0.0, 1.0);
            if v > 0.004 {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{scale:.2}" height="{scale:.2}" fill="rgb(255,{},0)" fill-opacity="{v:.3}"/>"#,
                    c as f64 * scale,
                    r as f64 * scale,
                    (255.0 * (1.0 - v)).round() as u8
                );
            }
        }
    }
    for &(x, y) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="cyan" stroke-width="1.5"/>"#,
            x * pw,
            y * ph
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_well_formed_and_stable() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)],
        }];
        let a = line_plot("t", "x", "y", &s, false);
        assert_eq!(a, line_plot("t", "x", "y", &s, false));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        assert!(!a.contains("NaN"));
        let l = line_plot("t", "x", "y", &s, true);
        assert!(l.contains("polyline"));
    }

    #[test]
    fn overlay_draws_points() {
        let s = heat_overlay("m", &[0.0, 1.0, 0.5, 0.0], 2, 2, &[(0.5, 0.5)]);
        assert_eq!(s.matches("<circle").count(), 1);
        assert_eq!(s.matches("fill-opacity").count(), 2);
    }
}
