//! Tiny standalone SVG chart writer (lines, markers, shaded bands, dashed
//! reference lines). No external assets.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub line: bool,
    pub markers: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>, color: &str) -> Self {
        Series {
            label: label.to_owned(),
            points,
            color: color.to_owned(),
            line: true,
            markers: false,
        }
    }

    pub fn scatter(label: &str, points: Vec<(f64, f64)>, color: &str) -> Self {
        Series {
            label: label.to_owned(),
            points,
            color: color.to_owned(),
            line: true,
            markers: true,
        }
    }
}

/// Horizontal or vertical dashed reference line.
#[derive(Clone, Debug)]
pub enum Reference {
    Horizontal(f64, String),
    Vertical(f64, String),
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
    pub references: Vec<Reference>,
    /// Gray band below this y value.
    pub shade_below: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Chart {
            title: title.to_owned(),
            x_label: x_label.to_owned(),
            y_label: y_label.to_owned(),
            x_range: None,
            y_range: None,
            series: Vec::new(),
            references: Vec::new(),
            shade_below: None,
        }
    }

    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let ref_x = self.references.iter().filter_map(|r| match r {
            Reference::Vertical(v, _) => Some(*v),
            _ => None,
        });
        let ref_y = self.references.iter().filter_map(|r| match r {
            Reference::Horizontal(v, _) => Some(*v),
            _ => None,
        });
        let (x0, x1) = self.x_range.unwrap_or_else(|| extent(xs.chain(ref_x)));
        let (y0, y1) = self
            .y_range
            .unwrap_or_else(|| extent(ys.chain(ref_y).chain(self.shade_below)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        if let Some(level) = self.shade_below {
            let top = sy(level.clamp(y0, y1));
            let _ = writeln!(
                out,
                r##"<rect class="perfect-zone" x="{LEFT:.2}" y="{top:.2}" width="{pw:.2}" height="{:.2}" fill="#d9d9d9"/>"##,
                TOP + ph - top
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in 0..=4 {
            let fx = x0 + (x1 - x0) * t as f64 / 4.0;
            let fy = y0 + (y1 - y0) * t as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
                sx(fx),
                TOP + ph + 16.0,
                fx
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
                LEFT - 6.0,
                sy(fy) + 4.0,
                fy
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for r in &self.references {
            let (x_a, y_a, x_b, y_b, label) = match r {
                Reference::Horizontal(v, l) => (LEFT, sy(*v), LEFT + pw, sy(*v), l),
                Reference::Vertical(v, l) => (sx(*v), TOP, sx(*v), TOP + ph, l),
            };
            let _ = writeln!(
                out,
                r#"<line class="reference" x1="{x_a:.2}" y1="{y_a:.2}" x2="{x_b:.2}" y2="{y_b:.2}" stroke="gray" stroke-dasharray="6 4"><title>{}</title></line>"#,
                escape(label)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            if s.line && s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    pts.join(" "),
                    s.color
                );
            }
            if s.markers {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="{}"/>"#,
                        sx(x),
                        sy(y),
                        s.color
                    );
                }
            }
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="4" fill="{}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 6.0,
                s.color,
                lx + 18.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_is_valid() {
        let svg = Chart::new("empty", "x", "y").render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn single_marker() {
        let mut c = Chart::new("one", "x", "y");
        c.series.push(Series::scatter("s", vec![(0.5, 0.5)], "red"));
        assert_eq!(c.render().matches("class=\"marker\"").count(), 1);
    }
}
