//! Minimal SVG charts: line charts with error bars and grouped bar charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Fixed color per objective tag; ID is always green.
pub fn objective_color(tag: &str) -> &'static str {
    match tag {
        "ID" => "#2ca02c",
        "BC" => "#1f77b4",
        "FD-e" => "#ff7f0e",
        "FD-i" => "#d62728",
        "Cont" => "#9467bd",
        "Scratch" => "#7f7f7f",
        "States" => "#111111",
        _ => "#8c564b",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    /// `(x, mean, standard error)`.
    pub points: Vec<(f64, f64, f64)>,
    /// Draw as a horizontal line at the first point's mean, spanning the axis.
    pub horizontal: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_max: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        writeln!(out, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0).unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label))
        .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 15.0;
        writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#, y - 10.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name)).unwrap();
    }
}

/// Line chart over a log-spaced x axis (sizes span decades).
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().filter(|s| !s.horizontal).flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo.max(1e-12).ln(), hi.max(1e-12).ln()) } else { (0.0, 1.0) };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y_max = series.iter().flat_map(|s| s.points.iter().map(|p| p.1 + p.2)).fold(1.0f64, |a, b| {
        if b.is_finite() {
            a.max(b)
        } else {
            a
        }
    });
    let px = |x: f64| LEFT + 20.0 + (W - RIGHT - LEFT - 40.0) * (x.max(1e-12).ln() - lo) / span;
    let py = |y: f64| (H - BOTTOM) - (H - BOTTOM - TOP) * (y / y_max);

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, y_label, y_max);
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(|a, b| a.total_cmp(b));
    ticks.dedup();
    for x in ticks {
        writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - BOTTOM + 16.0).unwrap();
    }
    for s in series {
        if s.horizontal {
            if let Some(&(_, m, _)) = s.points.first() {
                writeln!(out, r#"<line x1="{LEFT}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="{}" stroke-dasharray="6 4" stroke-width="2"/>"#, py(m), W - RIGHT, py(m), s.color).unwrap();
            }
            continue;
        }
        let path: Vec<String> = s.points.iter().map(|&(x, m, _)| format!("{:.1},{:.1}", px(x), py(m))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), s.color)
            .unwrap();
        for &(x, m, se) in &s.points {
            let (cx, top, bot) = (px(x), py(m + se), py((m - se).max(0.0)));
            writeln!(out, r#"<line x1="{cx:.1}" y1="{top:.1}" x2="{cx:.1}" y2="{bot:.1}" stroke="{}"/>"#, s.color)
                .unwrap();
            writeln!(out, r#"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="{}"/>"#, py(m), s.color).unwrap();
        }
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|s| (s.name.as_str(), s.color.as_str())).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// `(label, color, mean, se)`.
pub type Bar = (String, String, f64, f64);

/// One group per entry of `groups`.
pub fn bar_chart(title: &str, y_label: &str, groups: &[(String, Vec<Bar>)]) -> String {
    let y_max = groups.iter().flat_map(|(_, bars)| bars.iter().map(|b| b.2 + b.3)).fold(1.0f64, |a, b| {
        if b.is_finite() {
            a.max(b)
        } else {
            a
        }
    });
    let py = |y: f64| (H - BOTTOM) - (H - BOTTOM - TOP) * (y / y_max);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "", y_label, y_max);
    let slot = (W - RIGHT - LEFT - 20.0) / groups.len().max(1) as f64;
    let mut legend_entries: Vec<(String, String)> = Vec::new();
    for (g, (name, bars)) in groups.iter().enumerate() {
        let x0 = LEFT + 10.0 + slot * g as f64;
        let bw = (slot - 10.0) / bars.len().max(1) as f64;
        for (i, (label, color, mean, se)) in bars.iter().enumerate() {
            let x = x0 + bw * i as f64;
            writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                py(*mean),
                bw - 2.0,
                (H - BOTTOM) - py(*mean)
            )
            .unwrap();
            let cx = x + (bw - 2.0) / 2.0;
            writeln!(
                out,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                py(mean + se),
                py((mean - se).max(0.0))
            )
            .unwrap();
            if !legend_entries.iter().any(|(l, _)| l == label) {
                legend_entries.push((label.clone(), color.clone()));
            }
        }
        writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + (slot - 10.0) / 2.0,
            H - BOTTOM + 16.0,
            escape(name)
        )
        .unwrap();
    }
    let entries: Vec<(&str, &str)> = legend_entries.iter().map(|(l, c)| (l.as_str(), c.as_str())).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
