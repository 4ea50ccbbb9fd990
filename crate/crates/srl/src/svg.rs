//! Minimal SVG figures: heatmaps with overlay lines and line plots.

use std::fmt::Write as _;

use srl_core::sweep::{Axis, Spacing};

const W: f64 = 720.0;
const H: f64 = 560.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

// viridis sampled at five stops
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

fn color(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let k = STOPS.iter().position(|s| s.0 >= u).unwrap_or(4).max(1);
    let (a, b) = (STOPS[k - 1], STOPS[k]);
    let t = (u - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + t * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Position of `v` on `axis` in cell units, cell `k` spanning `[k, k+1]`.
fn axis_pos(axis: &Axis, v: f64) -> f64 {
    if axis.count == 1 {
        return 0.5;
    }
    let u = match axis.spacing {
        Spacing::Log => (v.ln() - axis.min.ln()) / (axis.max.ln() - axis.min.ln()),
        Spacing::Linear => (v - axis.min) / (axis.max - axis.min),
    };
    u * (axis.count - 1) as f64 + 0.5
}

pub struct Heatmap<'a> {
    pub title: &'a str,
    pub colorbar_label: &'a str,
    /// Horizontal axis (columns `j`).
    pub x_axis: &'a Axis,
    pub x_label: &'a str,
    /// Vertical axis (rows `i`), drawn bottom to top.
    pub y_axis: &'a Axis,
    pub y_label: &'a str,
    /// Row-major values; `None` cells are drawn grey.
    pub values: &'a [Option<f64>],
    /// Lines in data coordinates `(x, y)`, with a stroke colour and dash flag.
    pub lines: Vec<(Vec<(f64, f64)>, &'a str, bool)>,
}

impl Heatmap<'_> {
    pub fn render(&self) -> String {
        let (rows, cols) = (self.y_axis.count, self.x_axis.count);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let (cw, ch) = (pw / cols as f64, ph / rows as f64);
        let logs: Vec<f64> = self
            .values
            .iter()
            .flatten()
            .filter(|v| v.is_finite() && **v > 0.0)
            .map(|v| v.log10())
            .collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", LEFT + pw / 2.0, esc(self.title));
        for i in 0..rows {
            for j in 0..cols {
                let fill = match self.values[i * cols + j] {
                    Some(v) if v.is_finite() && v > 0.0 => color((v.log10() - lo) / span),
                    Some(v) if v == 0.0 => color(0.0),
                    _ => "#bbbbbb".to_string(),
                };
                let x = LEFT + j as f64 * cw;
                let y = TOP + ph - (i + 1) as f64 * ch;
                let _ = writeln!(
                    s,
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        // overlays, clipped to the plot area
        let _ = writeln!(s, "<clipPath id=\"plot\"><rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\"/></clipPath>");
        for (pts, stroke, dashed) in &self.lines {
            let path: Vec<String> = pts
                .iter()
                .filter(|(x, y)| *x > 0.0 && *y > 0.0)
                .map(|&(x, y)| {
                    let px = LEFT + axis_pos(self.x_axis, x) * cw;
                    let py = TOP + ph - axis_pos(self.y_axis, y) * ch;
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            if path.len() < 2 {
                continue;
            }
            let dash = if *dashed { " stroke-dasharray=\"8 5\"" } else { "" };
            let _ = writeln!(
                s,
                "<polyline clip-path=\"url(#plot)\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
                path.join(" ")
            );
        }
        let _ = writeln!(s, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
        ticks(&mut s, self.x_axis, true, cw, ph);
        ticks(&mut s, self.y_axis, false, ch, ph);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", LEFT + pw / 2.0, H - 15.0, esc(self.x_label));
        let _ = writeln!(
            s,
            "<text transform=\"translate(22 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
            TOP + ph / 2.0,
            esc(self.y_label)
        );
        // colour bar
        let bx = W - RIGHT + 25.0;
        for k in 0..50 {
            let u = k as f64 / 49.0;
            let y = TOP + ph - (k + 1) as f64 * ph / 50.0;
            let _ = writeln!(s, "<rect x=\"{bx}\" y=\"{y:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>", ph / 50.0 + 0.05, color(u));
        }
        if lo.is_finite() {
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">1e{lo:.1}</text>", bx + 20.0, TOP + ph);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">1e{hi:.1}</text>", bx + 20.0, TOP + 10.0);
        }
        let _ = writeln!(
            s,
            "<text transform=\"translate({} {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
            W - 12.0,
            TOP + ph / 2.0,
            esc(self.colorbar_label)
        );
        s.push_str("</svg>\n");
        s
    }
}

fn ticks(s: &mut String, axis: &Axis, horizontal: bool, cell: f64, ph: f64) {
    let marks: Vec<f64> = match axis.spacing {
        Spacing::Log => {
            let (a, b) = (axis.min.log10().ceil() as i32, axis.max.log10().floor() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        }
        Spacing::Linear => (0..5).map(|k| axis.min + (axis.max - axis.min) * k as f64 / 4.0).collect(),
    };
    for v in marks {
        let p = axis_pos(axis, v) * cell;
        let label = match axis.spacing {
            Spacing::Log => format!("1e{}", v.log10().round() as i32),
            Spacing::Linear => format!("{v:.3e}"),
        };
        if horizontal {
            let x = LEFT + p;
            let _ = writeln!(s, "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>", TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{label}</text>", TOP + ph + 18.0);
        } else {
            let y = TOP + ph - p;
            let _ = writeln!(s, "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>", LEFT - 5.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>", LEFT - 8.0, y + 4.0);
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Linear-axis line plot of labelled series.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let map = |x: f64, y: f64| (LEFT + (x - x0) / (x1 - x0) * pw, TOP + ph - (y - y0) / (y1 - y0) * ph);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", LEFT + pw / 2.0, esc(title));
    for (k, (label, p)) in series.iter().enumerate() {
        let stroke = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let (px, py) = map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let lx = W - RIGHT + 8.0;
        let _ = writeln!(s, "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{stroke}\" stroke-width=\"2\"/>", lx + 18.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>", lx + 22.0, ly + 4.0, esc(label));
    }
    let _ = writeln!(s, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let (x, _) = map(x0 + u * (x1 - x0), y0);
        let (_, y) = map(x0, y0 + u * (y1 - y0));
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>", TOP + ph + 18.0, x0 + u * (x1 - x0));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{:.3e}</text>", LEFT - 6.0, y + 4.0, y0 + u * (y1 - y0));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", LEFT + pw / 2.0, H - 15.0, esc(x_label));
    let _ = writeln!(
        s,
        "<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        TOP + ph / 2.0,
        esc(y_label)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(2.0), color(1.0));
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let a = Axis::log(3, 1.0, 100.0);
        let b = Axis::linear(2, 0.0, 1.0);
        let vals = vec![Some(1.0), None, Some(10.0), Some(0.0), Some(5.0), Some(f64::NAN)];
        let svg = Heatmap {
            title: "t",
            colorbar_label: "c",
            x_axis: &b,
            x_label: "x",
            y_axis: &a,
            y_label: "y",
            values: &vals,
            lines: vec![(vec![(0.1, 1.0), (0.9, 100.0)], "white", true)],
        }
        .render();
        assert_eq!(svg.matches("fill=\"#bbbbbb\"").count(), 2);
        assert!(svg.contains("polyline"));
        assert!(svg.starts_with("<svg"));
    }
}
