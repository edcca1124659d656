//! Dependency-light SVG plots. CSV files are the contract; these are viewing
//! conveniences: the step plot of `lambda -> C(selected)` and the
//! risk-complexity cloud with the selected model highlighted.

use super::experiment::RecordRow;
use crate::error::Result;
use crate::select::SelectionPath;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 56.0;

struct Canvas {
    body: String,
}

impl Canvas {
    fn new() -> Self {
        let mut body = String::new();
        body.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
        ));
        Canvas { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str, width: f64) {
        self.body.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
             stroke=\"{color}\" stroke-width=\"{width}\"/>\n"
        ));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, color: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{color}\"/>\n"
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" \
             font-family=\"sans-serif\">{content}</text>\n"
        ));
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.body.push_str("</svg>\n");
        std::fs::write(path, self.body)?;
        Ok(())
    }
}

fn log_axis(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    let t = (v.max(lo).ln() - lo.ln()) / (hi.ln() - lo.ln()).max(1e-300);
    out_lo + t * (out_hi - out_lo)
}

fn linear_axis(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    let t = (v - lo) / (hi - lo).max(1e-300);
    out_lo + t * (out_hi - out_lo)
}

/// Step plot of the selected complexity against the penalty weight (log x).
pub fn render_path_svg(path: &Path, sel: &SelectionPath, rows: &[&RecordRow]) -> Result<()> {
    let mut canvas = Canvas::new();
    let c_max = rows.iter().map(|r| r.complexity).max().unwrap_or(1) as f64;
    let positive: Vec<f64> = sel.breakpoints.iter().copied().filter(|&b| b > 0.0).collect();
    let (lo, hi) = if positive.is_empty() {
        (1e-8, 1.0)
    } else {
        let lo = positive.first().copied().unwrap() / 10.0;
        let hi = positive.last().copied().unwrap() * 10.0;
        (lo, hi)
    };
    let x_of = |l: f64| log_axis(l.max(lo), lo, hi, MARGIN, W - MARGIN);
    let y_of = |c: f64| linear_axis(c, 0.0, c_max * 1.05, H - MARGIN, MARGIN);

    canvas.line(MARGIN, H - MARGIN, W - MARGIN, H - MARGIN, "black", 1.0);
    canvas.line(MARGIN, H - MARGIN, MARGIN, MARGIN, "black", 1.0);
    canvas.text(W / 2.0 - 30.0, H - 16.0, 13.0, "lambda (log)");
    canvas.text(8.0, MARGIN - 12.0, 13.0, "C(selected)");

    for i in 0..sel.chosen.len() {
        let x1 = if i == 0 { lo } else { sel.breakpoints[i - 1] };
        let x2 = if i < sel.breakpoints.len() {
            sel.breakpoints[i]
        } else {
            hi
        };
        let y = y_of(sel.complexities[i] as f64);
        canvas.line(x_of(x1), y, x_of(x2), y, "steelblue", 2.0);
        if i < sel.breakpoints.len() {
            let xb = x_of(sel.breakpoints[i]);
            canvas.line(
                xb,
                y,
                xb,
                y_of(sel.complexities[i + 1] as f64),
                "steelblue",
                1.0,
            );
        }
    }
    // Mark the largest complexity jump.
    if !sel.breakpoints.is_empty() {
        if let Ok(lcj) = crate::select::complexity_jump(sel) {
            let x = x_of(lcj);
            canvas.line(x, MARGIN, x, H - MARGIN, "red", 1.0);
            canvas.text(x + 4.0, MARGIN + 14.0, 12.0, "lambda_cj");
        }
    }
    canvas.finish(path)
}

/// Scatter of test risk against complexity (log y), selected model in red.
pub fn render_cloud_svg(path: &Path, rows: &[&RecordRow], selected_id: u64) -> Result<()> {
    let mut canvas = Canvas::new();
    let c_max = rows.iter().map(|r| r.complexity).max().unwrap_or(1) as f64;
    let risks: Vec<f64> = rows.iter().map(|r| r.risk.max(1e-300)).collect();
    let r_lo = risks.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    let r_hi = risks.iter().cloned().fold(0.0, f64::max) * 2.0;
    let x_of = |c: f64| linear_axis(c, 0.0, c_max * 1.05, MARGIN, W - MARGIN);
    let y_of = |r: f64| log_axis(r, r_lo.max(1e-300), r_hi.max(1e-299), H - MARGIN, MARGIN);

    canvas.line(MARGIN, H - MARGIN, W - MARGIN, H - MARGIN, "black", 1.0);
    canvas.line(MARGIN, H - MARGIN, MARGIN, MARGIN, "black", 1.0);
    canvas.text(W / 2.0 - 14.0, H - 16.0, 13.0, "C_m");
    canvas.text(8.0, MARGIN - 12.0, 13.0, "risk (log)");

    for r in rows {
        let color = if r.id == selected_id { "red" } else { "steelblue" };
        let radius = if r.id == selected_id { 4.0 } else { 2.0 };
        canvas.circle(x_of(r.complexity as f64), y_of(r.risk.max(1e-300)), radius, color);
    }
    canvas.finish(path)
}
