//! Minimal SVG charts for audit reports.

use std::fmt::Write;

use anno_audit_core::biasaudit::{significance_stars, BiasTestResult, CoefficientComparison};

const ROW: f64 = 18.0;
const LABEL_W: f64 = 260.0;
const PLOT_W: f64 = 360.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="8" y="16" font-size="13">{}</text>"#, escape(title));
}

/// Horizontal bars of log F per (source, code); zero F is drawn as an
/// empty row.
pub fn log_f_chart(results: &[BiasTestResult<f64>]) -> String {
    let finite: Vec<f64> = results.iter().map(|r| r.log_f).filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(0.0_f64, f64::min);
    let hi = finite.iter().copied().fold(0.0_f64, f64::max).max(lo + 1.0);
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * PLOT_W;
    let height = 40.0 + ROW * results.len() as f64;
    let mut out = String::new();
    header(&mut out, LABEL_W + PLOT_W + 80.0, height, "log F by code and source");
    let _ = writeln!(
        out,
        r##"<line x1="{0:.1}" y1="24" x2="{0:.1}" y2="{1:.1}" stroke="#444"/>"##,
        x(0.0),
        height - 8.0
    );
    for (i, r) in results.iter().enumerate() {
        let y = 28.0 + ROW * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{} / {}</text>"#,
            LABEL_W - 6.0,
            y + 11.0,
            escape(&r.source_id),
            escape(&r.code_name)
        );
        if r.log_f.is_finite() {
            let (a, b) = (x(0.0).min(x(r.log_f)), x(0.0).max(x(r.log_f)));
            let _ = writeln!(
                out,
                r##"<rect x="{a:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#4a78a8"/>"##,
                (b - a).max(0.5),
                ROW - 4.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                b + 4.0,
                y + 11.0,
                significance_stars(r.table.fit.f_pvalue)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Point estimates with 95% intervals for refugee and eld_sex, one row per
/// source.
pub fn coefficient_chart(c: &CoefficientComparison<f64>) -> String {
    let rows: Vec<(String, f64, f64, f64)> = c
        .sources
        .iter()
        .flat_map(|s| {
            [("refugee", &s.refugee), ("eld_sex", &s.eld_sex)]
                .map(|(t, e)| (format!("{} / {t}", s.source_id), e.coefficient, e.ci_low, e.ci_high))
        })
        .collect();
    let lo = rows.iter().map(|r| r.2).fold(0.0_f64, f64::min);
    let hi = rows.iter().map(|r| r.3).fold(0.0_f64, f64::max);
    let span = (hi - lo).max(1e-9);
    let x = |v: f64| LABEL_W + (v - lo) / span * PLOT_W;
    let height = 40.0 + ROW * rows.len() as f64;
    let mut out = String::new();
    header(
        &mut out,
        LABEL_W + PLOT_W + 40.0,
        height,
        &format!("Coefficients for {}", c.code_name),
    );
    let _ = writeln!(
        out,
        r##"<line x1="{0:.1}" y1="24" x2="{0:.1}" y2="{1:.1}" stroke="#999" stroke-dasharray="3,3"/>"##,
        x(0.0),
        height - 8.0
    );
    for (i, (label, est, l, h)) in rows.iter().enumerate() {
        let y = 28.0 + ROW * i as f64 + 7.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            y + 4.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#333"/>"##,
            x(*l),
            x(*h)
        );
        let _ = writeln!(out, r##"<circle cx="{:.1}" cy="{y:.1}" r="3" fill="#c0392b"/>"##, x(*est));
    }
    out.push_str("</svg>\n");
    out
}
