//! Minimal deterministic SVG rendering: a document builder, a data→screen
//! frame with axes, and the training-curve plot. Level-set rendering lives
//! in [`crate::levelset`] and draws through the same primitives.
//!
//! All coordinates are printed with fixed two-decimal precision, so a plot
//! is a pure function of its input data.

use std::fmt::Write as _;

/// Screen-space SVG document under construction.
pub struct SvgDoc {
    width: f64,
    height: f64,
    body: String,
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

impl SvgDoc {
    pub fn new(width: f64, height: f64) -> SvgDoc {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r##"<rect x="0" y="0" width="{}" height="{}" fill="#ffffff"/>"##,
            px(width),
            px(height)
        );
        SvgDoc {
            width,
            height,
            body,
        }
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"##,
            px(a.0),
            px(a.1),
            px(b.0),
            px(b.1),
            px(width)
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|p| format!("{},{}", px(p.0), px(p.1))).collect();
        let _ = writeln!(
            self.body,
            r##"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{}"/>"##,
            coords.join(" "),
            px(width)
        );
    }

    pub fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        if pts.len() < 3 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|p| format!("{},{}", px(p.0), px(p.1))).collect();
        let _ = writeln!(
            self.body,
            r##"<polygon points="{}" fill="{fill}" fill-opacity="{}" stroke="none"/>"##,
            coords.join(" "),
            px(opacity)
        );
    }

    /// `anchor` is an SVG text-anchor: start | middle | end.
    pub fn text(&mut self, at: (f64, f64), anchor: &str, size: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r##"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="{}">{s}</text>"##,
            px(at.0),
            px(at.1),
            px(size)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n{}</svg>\n",
            px(self.width),
            px(self.height),
            px(self.width),
            px(self.height),
            self.body
        )
    }
}

/// Affine data→screen mapping over a plot box with margins, plus axes.
pub struct Frame {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Frame {
    /// Frame spanning `width × height` screen units with default margins.
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), width: f64, height: f64) -> Frame {
        Frame {
            x_range: widen_if_degenerate(x_range),
            y_range: widen_if_degenerate(y_range),
            left: 58.0,
            top: 34.0,
            right: width - 18.0,
            bottom: height - 44.0,
        }
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (
            self.left + fx * (self.right - self.left),
            self.bottom - fy * (self.bottom - self.top),
        )
    }

    /// Plot box, 5 ticks per axis with labels, axis titles, and a title line.
    pub fn draw_axes(&self, doc: &mut SvgDoc, title: &str, x_label: &str, y_label: &str) {
        let axis = "#444444";
        doc.line((self.left, self.bottom), (self.right, self.bottom), axis, 1.0);
        doc.line((self.left, self.bottom), (self.left, self.top), axis, 1.0);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x_range.0 + f * (self.x_range.1 - self.x_range.0);
            let yv = self.y_range.0 + f * (self.y_range.1 - self.y_range.0);
            let (sx, _) = self.map(xv, self.y_range.0);
            let (_, sy) = self.map(self.x_range.0, yv);
            doc.line((sx, self.bottom), (sx, self.bottom + 4.0), axis, 1.0);
            doc.text((sx, self.bottom + 16.0), "middle", 10.0, &fmt_tick(xv));
            doc.line((self.left - 4.0, sy), (self.left, sy), axis, 1.0);
            doc.text((self.left - 7.0, sy + 3.5), "end", 10.0, &fmt_tick(yv));
        }
        let cx = (self.left + self.right) / 2.0;
        doc.text((cx, self.top - 12.0), "middle", 13.0, title);
        doc.text((cx, self.bottom + 34.0), "middle", 11.0, x_label);
        doc.text((14.0, self.top - 12.0), "start", 11.0, y_label);
    }
}

fn widen_if_degenerate((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// Tick label: plain decimal in a comfortable range, scientific outside it.
fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Multi-seed training-curve plot: per-epoch min/max band plus the mean
/// curve. Every series must have the same length.
pub fn curves_svg(title: &str, y_label: &str, series: &[Vec<f64>]) -> String {
    assert!(!series.is_empty(), "curves_svg needs at least one series");
    let epochs = series[0].len();
    assert!(series.iter().all(|s| s.len() == epochs));
    let mut mean = Vec::with_capacity(epochs);
    let mut lo = Vec::with_capacity(epochs);
    let mut hi = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let vals: Vec<f64> = series.iter().map(|s| s[e]).collect();
        mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
        lo.push(vals.iter().cloned().fold(f64::INFINITY, f64::min));
        hi.push(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let y_min = lo.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let y_max = hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (560.0, 360.0);
    let mut doc = SvgDoc::new(w, h);
    let frame = Frame::new((0.0, (epochs - 1) as f64), (y_min, y_max), w, h);
    frame.draw_axes(&mut doc, title, "epoch", y_label);

    let band: Vec<(f64, f64)> = (0..epochs)
        .map(|e| frame.map(e as f64, hi[e]))
        .chain((0..epochs).rev().map(|e| frame.map(e as f64, lo[e])))
        .collect();
    doc.polygon(&band, "#7098c0", 0.35);
    let line: Vec<(f64, f64)> = (0..epochs).map(|e| frame.map(e as f64, mean[e])).collect();
    doc.polyline(&line, "#2060a8", 1.6);
    doc.finish()
}
