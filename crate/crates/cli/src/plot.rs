//! Static SVG line plots and regime bands. Nothing fancy: fixed canvas,
//! linear axes, a legend in the top-right corner.

use std::fmt::Write as _;

use crawler_core::model::ContactState;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        // flat data still needs a visible span
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = LEFT + f * pw;
        let py = TOP + ph - f * ph;
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            tick(x.0 + f * (x.1 - x.0))
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick(y.0 + f * (y.1 - y.0))
        );
        if i > 0 && i < 4 {
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/>"##,
                LEFT + pw
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-3 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of one or more series sharing the axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xr = range(series.iter().flat_map(|s| s.x.iter().copied()));
    let yr = range(series.iter().flat_map(|s| s.y.iter().copied()));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, xr, yr);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (&x, &y) in s.x.iter().zip(s.y) {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let px = LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
            let py = TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;
            let _ = write!(points, "{px:.2},{py:.2} ");
        }
        let dash = if i % 2 == 1 { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            points.trim_end()
        );
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = LEFT + pw - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 30.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

pub struct Band<'a> {
    pub label: String,
    pub t: &'a [f64],
    pub states: &'a [ContactState],
}

fn state_color(s: ContactState) -> &'static str {
    match s {
        ContactState::Stick => "#bbbbbb",
        ContactState::SlipPlus => "#1f77b4",
        ContactState::SlipMinus => "#ff7f0e",
    }
}

/// One horizontal band per row, coloured by contact state over time.
pub fn regime_bands(title: &str, rows: &[Band]) -> String {
    let xr = range(rows.iter().flat_map(|r| r.t.iter().copied()));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let row_h = ph / rows.len().max(1) as f64;
    let px = |t: f64| LEFT + (t - xr.0) / (xr.1 - xr.0) * pw;
    for (i, row) in rows.iter().enumerate() {
        let y0 = TOP + i as f64 * row_h;
        let mut start = 0;
        for j in 1..=row.states.len() {
            if j == row.states.len() || row.states[j] != row.states[start] {
                let end = j.min(row.t.len() - 1);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    px(row.t[start]),
                    y0 + 4.0,
                    (px(row.t[end]) - px(row.t[start])).max(0.5),
                    row_h - 8.0,
                    state_color(row.states[start])
                );
                start = j;
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y0 + row_h / 2.0 + 4.0,
            escape(&row.label)
        );
    }
    for (k, s) in [ContactState::Stick, ContactState::SlipPlus, ContactState::SlipMinus].into_iter().enumerate() {
        let lx = LEFT + 120.0 * k as f64;
        let ly = HEIGHT - 22.0;
        let _ = writeln!(out, r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="{}"/>"#, ly - 9.0, state_color(s));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 20.0, s.label());
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">t = {} .. {}</text>"#, WIDTH - RIGHT, HEIGHT - 13.0, tick(xr.0), tick(xr.1));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 1.0, 1.0];
        let svg = line_plot("flat <y>", "t", "y", &[Series { label: "a".into(), x: &x, y: &y }]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("flat &lt;y&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn bands_merge_runs() {
        use ContactState::*;
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        let s = [Stick, Stick, SlipPlus, SlipPlus, Stick];
        let svg = regime_bands("r", &[Band { label: "body1".into(), t: &t, states: &s }]);
        // three runs plus three legend swatches plus background
        assert_eq!(svg.matches("<rect").count(), 3 + 3 + 1);
    }
}
