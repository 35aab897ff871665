//! Render result rows: CSV with a fixed column order, JSON, and a small
//! self-contained SVG plot of mean ± 2·se against the swept parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Result};

use super::{OutputFormat, ResultRow};

/// Column order of the CSV rendering, fixed for downstream tooling.
pub const CSV_COLUMNS: [&str; 9] =
    ["estimand", "x", "params", "mean", "se", "trials", "seed0", "config_digest", "wall_ms"];

/// Render rows as CSV in [`CSV_COLUMNS`] order.  Floats use the shortest
/// decimal form that parses back to the same bits, so
/// `parse_csv(&to_csv(rows)?)` reproduces the rows exactly; no rows means
/// header only.  Text fields must not contain commas or line breaks.
pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        for field in [&r.estimand, &r.params, &r.config_digest] {
            if field.contains(',') || field.contains('\n') {
                return Err(invalid(format!("CSV field contains a delimiter: {field:?}")));
            }
        }
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.estimand, r.x, r.params, r.mean, r.se, r.trials, r.seed0, r.config_digest, r.wall_ms
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Parse the output of [`to_csv`] back into rows.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| invalid("empty CSV input"))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(invalid(format!("unexpected CSV header: {header}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_COLUMNS.len() {
            return Err(invalid(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                CSV_COLUMNS.len(),
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| invalid(format!("line {}: bad number {:?}", lineno + 2, fields[i])))
        };
        let u = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| invalid(format!("line {}: bad integer {:?}", lineno + 2, fields[i])))
        };
        rows.push(ResultRow {
            estimand: fields[0].to_string(),
            x: f(1)?,
            params: fields[2].to_string(),
            mean: f(3)?,
            se: f(4)?,
            trials: u(5)?,
            seed0: u(6)?,
            config_digest: fields[7].to_string(),
            wall_ms: u(8)?,
        });
    }
    Ok(rows)
}

/// Pretty-printed JSON array of the rows, trailing newline included.
pub fn to_json(rows: &[ResultRow]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_json(text: &str) -> Result<Vec<ResultRow>> {
    Ok(serde_json::from_str(text)?)
}

const SVG_WIDTH: f64 = 720.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Plot mean ± 2·se against `x`, one series per estimand.  Rows whose
/// mean is not finite are skipped; an empty or all-skipped input is an
/// error, since a blank plot silently hides a failed run.
pub fn to_svg(rows: &[ResultRow], title: &str) -> Result<String> {
    let mut series: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        if r.mean.is_finite() && r.se.is_finite() && r.x.is_finite() {
            series.entry(&r.estimand).or_default().push((r.x, r.mean, r.se));
        }
    }
    if series.is_empty() {
        return Err(invalid("plot needs at least one row with finite values"));
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (x, mean, se) in series.values().flatten() {
        x_lo = x_lo.min(*x);
        x_hi = x_hi.max(*x);
        y_lo = y_lo.min(mean - 2.0 * se);
        y_hi = y_hi.max(mean + 2.0 * se);
    }
    // Degenerate ranges still deserve a visible axis span.
    if x_hi - x_lo < 1e-12 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let x_pad = 0.04 * (x_hi - x_lo);
    let y_pad = 0.06 * (y_hi - y_lo);
    let (x_lo, x_hi) = (x_lo - x_pad, x_hi + x_pad);
    let (y_lo, y_hi) = (y_lo - y_pad, y_hi + y_pad);

    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        SVG_WIDTH / 2.0,
        escape_xml(title)
    );

    // Axes with five ticks each.
    let axis = "stroke=\"#333\" stroke-width=\"1\"";
    let _ = writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" {axis}/>"#,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" {axis}/>"#,
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" {axis}/>"#,
            px(xv),
            MARGIN_TOP + plot_h,
            px(xv),
            MARGIN_TOP + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            MARGIN_TOP + plot_h + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" {axis}/>"#,
            MARGIN_LEFT - 5.0,
            py(yv),
            MARGIN_LEFT,
            py(yv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            MARGIN_LEFT - 8.0,
            py(yv) + 4.0,
            tick_label(yv)
        );
    }

    for (si, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if points.len() > 1 {
            let path: Vec<String> =
                points.iter().map(|(x, m, _)| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for (x, mean, se) in points {
            let (cx, lo, hi) = (px(*x), py(mean - 2.0 * se), py(mean + 2.0 * se));
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="{color}" stroke-width="1"/>"#
            );
            for end in [lo, hi] {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{end:.2}" x2="{:.2}" y2="{end:.2}" stroke="{color}" stroke-width="1"/>"#,
                    cx - 3.0,
                    cx + 3.0
                );
            }
            let _ = writeln!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                py(*mean)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            MARGIN_LEFT + 10.0,
            MARGIN_TOP + 16.0 + 16.0 * si as f64,
            escape_xml(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e6).contains(&a) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render rows in the requested format.  The SVG title names the estimand
/// and the config digest so a plot stays traceable to its run.
pub fn render(rows: &[ResultRow], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => to_csv(rows),
        OutputFormat::Json => to_json(rows),
        OutputFormat::Svg => {
            let title = rows
                .first()
                .map(|r| format!("{} (config {})", r.estimand, r.config_digest))
                .unwrap_or_default();
            to_svg(rows, &title)
        }
    }
}

/// Render and write to `path`.
pub fn write_rows(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<()> {
    let text = render(rows, format)?;
    std::fs::write(path, text)?;
    Ok(())
}
