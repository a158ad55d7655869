//! Static SVG line charts of RMSE curves, one panel per target.

use std::fmt::Write;

use crate::harness::RmseRow;
use crate::sim::Target;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one panel per target with one polyline per label. Rows with NaN
/// RMSE are skipped.
pub fn render_rmse_chart(rows: &[RmseRow], title: &str) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let legend_h = 18.0 * labels.len() as f64;
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + legend_h + 24.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));

    for (p, target) in Target::ALL.iter().enumerate() {
        let x0 = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let pts: Vec<&RmseRow> = rows
            .iter()
            .filter(|r| r.target == *target && r.rmse.is_finite())
            .collect();
        let x_max = pts.iter().map(|r| r.sims).max().unwrap_or(1).max(1) as f64;
        let y_max = pts.iter().map(|r| r.rmse).fold(0.0, f64::max);
        let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
        let sx = |v: f64| x0 + v / x_max * PANEL_W;
        let sy = |v: f64| y0 + PANEL_H - v / y_max * PANEL_H;

        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 8.0,
            target.name()
        );
        for k in 0..=4 {
            let fx = k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
                x0 + fx * PANEL_W,
                y0 + PANEL_H + 14.0,
                fx * x_max
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3e}</text>"#,
                x0 - 4.0,
                y0 + PANEL_H - fx * PANEL_H + 4.0,
                fx * y_max
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">simulations</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 30.0
        );
        for (i, label) in labels.iter().enumerate() {
            let line: Vec<String> = pts
                .iter()
                .filter(|r| r.label == *label)
                .map(|r| format!("{:.1},{:.1}", sx(r.sims as f64), sy(r.rmse)))
                .collect();
            if line.len() > 1 {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    PALETTE[i % PALETTE.len()],
                    line.join(" ")
                );
            }
        }
    }
    let ly = MARGIN + PANEL_H + 48.0;
    for (i, label) in labels.iter().enumerate() {
        let y = ly + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
            MARGIN + 24.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, MARGIN + 30.0, y + 4.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}
