//! Minimal SVG line plots. Output depends only on the data, so repeated runs
//! produce identical files.

use std::fmt::Write;

pub const WIDTH: f64 = 1200.0;
pub const HEIGHT: f64 = 400.0;

const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 14.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 44.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
    /// Draw dots instead of a polyline.
    pub scatter: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        Self {
            label: label.into(),
            points,
            color: color.into(),
            dashed: false,
            scatter: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn scatter(mut self) -> Self {
        self.scatter = true;
        self
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Circle {
        cx: f64,
        cy: f64,
        r: f64,
        fill: String,
        stroke: String,
        dashed: bool,
    },
    /// Axis-aligned band between two y values over an x range.
    Band {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        fill: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub shapes: Vec<Shape>,
    /// One data unit spans the same pixels on both axes.
    pub equal_aspect: bool,
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }

    fn sx(&self, d: f64) -> f64 {
        d / (self.xmax - self.xmin) * self.w
    }

    fn sy(&self, d: f64) -> f64 {
        d / (self.ymax - self.ymin) * self.h
    }
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        let c = 0.5 * (lo + hi);
        let half = c.abs().max(1.0) * 0.5;
        return (c - half, c + half);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut add = |x: f64, y: f64| {
        if x.is_finite() && y.is_finite() {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
    };
    for s in &panel.series {
        for &(x, y) in &s.points {
            add(x, y);
        }
    }
    for sh in &panel.shapes {
        match *sh {
            Shape::Circle { cx, cy, r, .. } => {
                add(cx - r, cy - r);
                add(cx + r, cy + r);
            }
            Shape::Band { x0, x1, y0, y1, .. } => {
                add(x0, y0);
                add(x1, y1);
            }
        }
    }
    let (xmin, xmax) = padded(b.0, b.1);
    let (ymin, ymax) = padded(b.2, b.3);
    (xmin, xmax, ymin, ymax)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" { "0".into() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, x0: f64, width: f64) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = bounds(panel);
    let (w, h) = (width - MARGIN_LEFT - MARGIN_RIGHT, HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
    if panel.equal_aspect {
        let scale = ((xmax - xmin) / w).max((ymax - ymin) / h);
        let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
        (xmin, xmax) = (cx - 0.5 * scale * w, cx + 0.5 * scale * w);
        (ymin, ymax) = (cy - 0.5 * scale * h, cy + 0.5 * scale * h);
    }
    let f = Frame {
        x0: x0 + MARGIN_LEFT,
        y0: MARGIN_TOP,
        w,
        h,
        xmin,
        xmax,
        ymin,
        ymax,
    };
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#ffffff" stroke="#444444"/>"##,
        f.x0, f.y0, f.w, f.h
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        f.x0 + f.w / 2.0,
        escape(&panel.title)
    );

    // ticks
    let xs = nice_step(xmax - xmin);
    let mut t = (xmin / xs).ceil() * xs;
    while t <= xmax + 1e-9 * xs {
        let p = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{p:.2}" y1="{:.2}" x2="{p:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{p:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"##,
            f.y0,
            f.y0 + f.h,
            f.y0 + f.h + 14.0,
            fmt_tick(t, xs)
        );
        t += xs;
    }
    let ys = nice_step(ymax - ymin);
    let mut t = (ymin / ys).ceil() * ys;
    while t <= ymax + 1e-9 * ys {
        let p = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{p:.2}" x2="{:.2}" y2="{p:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
            f.x0,
            f.x0 + f.w,
            f.x0 - 4.0,
            p + 4.0,
            fmt_tick(t, ys)
        );
        t += ys;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        f.x0 + f.w / 2.0,
        HEIGHT - 8.0,
        escape(&panel.x_label)
    );
    let (lx, ly) = (x0 + 14.0, f.y0 + f.h / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        escape(&panel.y_label)
    );

    let clip = format!("clip{}", x0 as i64);
    let _ = writeln!(
        out,
        r#"<clipPath id="{clip}"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath><g clip-path="url(#{clip})">"#,
        f.x0, f.y0, f.w, f.h
    );
    for sh in &panel.shapes {
        match sh {
            Shape::Circle {
                cx,
                cy,
                r,
                fill,
                stroke,
                dashed,
            } => {
                let dash = if *dashed { r#" stroke-dasharray="4 3""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" fill="{fill}" stroke="{stroke}"{dash}/>"#,
                    f.px(*cx),
                    f.py(*cy),
                    f.sx(*r),
                    f.sy(*r)
                );
            }
            Shape::Band { x0, x1, y0, y1, fill } => {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    f.px(*x0),
                    f.py(y0.max(*y1)),
                    f.sx(x1 - x0),
                    f.sy((y1 - y0).abs())
                );
            }
        }
    }
    for s in &panel.series {
        if s.scatter {
            for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
                    f.px(x),
                    f.py(y),
                    s.color
                );
            }
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            pts.join(" "),
            s.color
        );
    }
    let _ = writeln!(out, "</g>");

    // legend
    let mut ly = f.y0 + 14.0;
    for s in panel.series.iter().filter(|s| !s.label.is_empty()) {
        let lx = f.x0 + f.w - 150.0;
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            s.color,
            lx + 25.0,
            ly,
            escape(&s.label)
        );
        ly += 14.0;
    }
}

/// Lay the panels out side by side on a fixed canvas.
pub fn render(panels: &[Panel]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fafafa"/>"##);
    let w = WIDTH / panels.len().max(1) as f64;
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, i as f64 * w, w);
    }
    out.push_str("</svg>\n");
    out
}
