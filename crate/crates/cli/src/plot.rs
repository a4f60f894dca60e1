//! Minimal SVG line plots: first column on x, every other column as a line.

use std::fmt::Write;

use mvperiodic_core::experiments::Series;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        if hi - lo < 1e-300 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Axis { lo, hi, log }
    }

    /// Position in [0, 1], or `None` when the value cannot be drawn.
    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let decades = (self.lo as i64..=self.hi as i64).collect::<Vec<_>>();
            let stride = (decades.len() / 8).max(1);
            decades.iter().step_by(stride).map(|&e| (10f64.powi(e as i32), format!("1e{e}"))).collect()
        } else {
            (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).map(|v| (v, format!("{v:.3}"))).collect()
        }
    }
}

/// Renders `series` as a standalone SVG document.
pub fn render(series: &Series) -> String {
    let x = Axis::fit(series.rows.iter().map(|r| r[0]), false);
    let y = Axis::fit(series.rows.iter().flat_map(|r| r[1..].iter().copied()), series.log_y);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |u: f64| MARGIN + u * pw;
    let py = |u: f64| HEIGHT - MARGIN - u * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, series.name);
    let _ = writeln!(svg, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, label) in x.ticks() {
        if let Some(u) = x.unit(v) {
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, px(u), HEIGHT - MARGIN + 16.0);
        }
    }
    for (v, label) in y.ticks() {
        if let Some(u) = y.unit(v) {
            let _ = writeln!(svg, r##"<line x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, WIDTH - MARGIN, py(u), py(u));
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, MARGIN - 4.0, py(u) + 4.0);
        }
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, series.columns[0]);
    for (c, name) in series.columns.iter().enumerate().skip(1) {
        let color = COLORS[(c - 1) % COLORS.len()];
        let points: Vec<String> = series
            .rows
            .iter()
            .filter_map(|r| Some(format!("{:.1},{:.1}", px(x.unit(r[0])?), py(y.unit(r[c])?))))
            .collect();
        if points.is_empty() {
            continue;
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 14.0 * c as f64;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{name}</text>"#, WIDTH - MARGIN - 6.0);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axis_skips_non_positive_values() {
        let mut s = Series::new("gap", &["t", "gap"], true);
        s.push(vec![0.0, 1.0]);
        s.push(vec![1.0, 0.0]);
        s.push(vec![2.0, 1e-3]);
        let svg = render(&s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("1e-3") && svg.contains("1e0"));
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
