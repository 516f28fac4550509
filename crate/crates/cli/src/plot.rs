//! Metrics CSV parsing and self-contained SVG line charts.

use std::fmt::Write as _;

use crate::CliError;

/// One curve: `(x, y, ±band)` points under a legend label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

/// Reads `(step, eval_mean, eval_std)` from a trainer metrics CSV.
pub fn parse_metrics_csv(text: &str, label: &str) -> Result<Series, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| CliError::Format("line 1: missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter().position(|c| c.trim() == name).ok_or_else(|| {
            CliError::Format(format!("line {}: header lacks column {name}", hline + 1))
        })
    };
    let (is, im, isd) = (find("step")?, find("eval_mean")?, find("eval_std")?);
    let mut points = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(CliError::Format(format!(
                "line {}: {} fields, header has {}",
                i + 1,
                fields.len(),
                cols.len()
            )));
        }
        let num = |k: usize| {
            fields[k].trim().parse::<f64>().map_err(|_| {
                CliError::Format(format!("line {}: bad number {:?}", i + 1, fields[k]))
            })
        };
        points.push((num(is)?, num(im)?, num(isd)?));
    }
    if points.is_empty() {
        return Err(CliError::Format("no eval rows".into()));
    }
    Ok(Series {
        label: label.to_string(),
        points,
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line chart with a ±band per series; `log_x` uses a base-10 x axis.
pub fn render_svg(
    series: &[Series],
    x_label: &str,
    y_label: &str,
    log_x: bool,
) -> Result<String, CliError> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(CliError::Format("nothing to plot".into()));
    }
    let fx = |x: f64| if log_x { x.log10() } else { x };
    if series
        .iter()
        .flat_map(|s| &s.points)
        .any(|p| !(fx(p.0).is_finite() && p.1.is_finite() && p.2.is_finite()))
    {
        return Err(CliError::Format(
            "non-finite point (log-scale x needs x > 0)".into(),
        ));
    }
    let pts = || series.iter().flat_map(|s| &s.points);
    let span = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = span(
        pts().map(|p| fx(p.0)).fold(f64::INFINITY, f64::min),
        pts().map(|p| fx(p.0)).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        pts().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min),
        pts().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max),
    );
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 20.0, 20.0, 50.0);
    let sx = |x: f64| left + (fx(x) - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (ax0, ax1, ay0, ay1) = (left, w - right, top, h - bottom);
    let _ = writeln!(
        out,
        r#"<line x1="{ax0}" y1="{ay1}" x2="{ax1}" y2="{ay1}" stroke="black"/><line x1="{ax0}" y1="{ay0}" x2="{ax0}" y2="{ay1}" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let xt = if log_x {
            format!("1e{xv:.1}")
        } else {
            format!("{xv:.4}")
        };
        let px = ax0 + f * (ax1 - ax0);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ay1 + 16.0,
            xt.trim_end_matches('0').trim_end_matches('.')
        );
        let yv = y0 + f * (y1 - y0);
        let py = ay1 - f * (ay1 - ay0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{yv:.1}</text>"#,
            ax0 - 6.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (ax0 + ax1) / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = s.points.iter().map(|p| (sx(p.0), sy(p.1 + p.2)));
        let lower = s.points.iter().rev().map(|p| (sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let d: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| {
                format!(
                    "{}{:.2},{:.2}",
                    if k == 0 { 'M' } else { 'L' },
                    sx(p.0),
                    sy(p.1)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<path class="series" d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.join(" ")
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            ax1 - 150.0,
            ly - 4.0,
            ax1 - 130.0,
            ly - 4.0,
            ax1 - 125.0,
            ly,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
