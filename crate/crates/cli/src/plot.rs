//! Standalone SVG charts for training curves and mode summaries.

use std::fmt::Write as _;

pub const SMOOTHING_ALPHA: f64 = 0.99;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// `s_0 = x_0`, `s_t = α s_{t−1} + (1 − α) x_t`.
pub fn exponential_smoothing(xs: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        let s = if t == 0 { x } else { alpha * out[t - 1] + (1.0 - alpha) * x };
        out.push(s);
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_min: f64, y_max: f64) {
    let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y_min + (y_max - y_min) * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            trim_number(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn polyline(class: &str, color: &str, xs: &[f64], ys: &[f64]) -> String {
    let pts: Vec<String> = xs.iter().zip(ys).map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    format!(r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "))
}

/// Raw and smoothed series against `steps`.
pub fn line_chart_svg(title: &str, steps: &[f64], raw: &[f64], smoothed: &[f64]) -> String {
    let lo = raw.iter().chain(smoothed).copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().chain(smoothed).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    };
    let x_lo = steps.first().copied().unwrap_or(0.0);
    let x_hi = steps.last().copied().unwrap_or(1.0);
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px: Vec<f64> = steps.iter().map(|s| LEFT + plot_w * (s - x_lo) / x_span).collect();
    let py = |v: &[f64]| v.iter().map(|y| HEIGHT - BOTTOM - plot_h * (y - lo) / (hi - lo)).collect::<Vec<_>>();

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "environment steps", "mean episode return", lo, hi);
    let _ = writeln!(out, "{}", polyline("raw", "#9ecae1", &px, &py(raw)));
    let _ = writeln!(out, "{}", polyline("smoothed", "#08519c", &px, &py(smoothed)));
    out.push_str("</svg>\n");
    out
}

/// One bar per label; heights are proportional to the values.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let top = values.iter().copied().fold(0.0f64, f64::max);
    let scale_max = if top > 0.0 { top } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / labels.len().max(1) as f64;
    let bar_w = 0.6 * slot;

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "mode", "average debris visited", 0.0, scale_max);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = plot_h * v.max(0.0) / scale_max;
        let x = LEFT + slot * i as f64 + 0.2 * slot;
        let y = HEIGHT - BOTTOM - h;
        let _ = writeln!(
            out,
            r##"<rect class="bar" data-label="{}" x="{x:.3}" y="{y:.3}" width="{bar_w:.3}" height="{h:.6}" fill="#3182bd"/>"##,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            x + bar_w / 2.0,
            HEIGHT - BOTTOM + 16.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            x + bar_w / 2.0,
            y - 4.0,
            trim_number(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn smoothing_recurrence() {
        let s = exponential_smoothing(&[10.0, 20.0, 20.0], 0.99);
        assert_eq!(s[0], 10.0);
        assert!((s[1] - 10.1).abs() < 1e-12);
        assert!((s[2] - (0.99 * 10.1 + 0.2)).abs() < 1e-12);
        assert!(exponential_smoothing(&[], 0.5).is_empty());
    }

    #[test]
    fn constant_series_is_flat() {
        let raw = vec![4.0; 6];
        let sm = exponential_smoothing(&raw, SMOOTHING_ALPHA);
        assert!(sm.iter().all(|&x| x == 4.0));
        let steps: Vec<f64> = (1..=6).map(|k| k as f64 * 2048.0).collect();
        let svg = line_chart_svg("t", &steps, &raw, &sm);
        let line = svg.lines().find(|l| l.contains("class=\"smoothed\"")).unwrap();
        let pts = &line[line.find("points=\"").unwrap() + 8..line.rfind('"').unwrap()];
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn bar_heights_are_proportional() {
        let svg = bar_chart_svg("m", &["a".into(), "b".into()], &[10.0, 20.0]);
        let bars: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"bar\"")).collect();
        assert_eq!(bars.len(), 2);
        let (ha, hb) = (attr(bars[0], "height"), attr(bars[1], "height"));
        assert!((hb / ha - 2.0).abs() < 1e-9);
        // bars share a baseline
        assert!((attr(bars[0], "y") + ha - attr(bars[1], "y") - hb).abs() < 1e-6);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = bar_chart_svg("<x>", &["a&b".into()], &[1.0]);
        assert!(svg.contains("&lt;x&gt;") && svg.contains("a&amp;b"));
    }
}
