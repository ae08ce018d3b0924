//! Minimal SVG line plots: stacked panels sharing a time axis, with
//! horizontal limit lines and shaded fault intervals.

use std::fmt::Write as _;

use super::trace::{col, Trace};
use super::Limits;
use crate::control::M_MAX;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
/// Points kept per series after min/max decimation.
const MAX_POINTS: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub hlines: Vec<f64>,
    pub shade: Vec<(f64, f64)>,
}

/// Panels for DC-link voltage, grid-current norm and modulation norm of each
/// labelled trace. Fault intervals come from the first trace.
pub fn standard_panels(traces: &[(String, Trace)], limits: &Limits) -> Vec<Panel> {
    let shade: Vec<(f64, f64)> = traces
        .first()
        .map(|(_, t)| t.faults.iter().map(|f| (f.t_start, f.t_end)).collect())
        .unwrap_or_default();
    let mk = |title: &str, y_label: &str, hlines: Vec<f64>, f: &dyn Fn(&Trace) -> Vec<f64>| Panel {
        title: title.into(),
        y_label: y_label.into(),
        series: traces
            .iter()
            .map(|(label, t)| Series {
                label: label.clone(),
                x: t.time(),
                y: f(t),
            })
            .collect(),
        hlines,
        shade: shade.clone(),
    };
    vec![
        mk("DC-link voltage", "v_dc (V)", vec![limits.v_dc_lo, limits.v_dc_hi], &|t| t.column(col::V_DC)),
        mk("Grid current norm", "|i_g| (A)", vec![limits.i_max], &|t| t.i_norm()),
        mk("Modulation norm", "|m_g|", vec![M_MAX], &|t| t.m_norm()),
    ]
}

pub fn render_svg(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let (ml, mr, mt, mb) = (70.0, 20.0, 28.0, 36.0);
    let legend_h = 22.0;
    let height = legend_h + panel_height * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some(first) = panels.first() {
        let mut x = ml;
        for (k, ser) in first.series.iter().enumerate() {
            let c = PALETTE[k % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<line x1="{x}" y1="12" x2="{}" y2="12" stroke="{c}" stroke-width="2"/><text x="{}" y="16">{}</text>"#,
                x + 18.0,
                x + 22.0,
                escape(&ser.label)
            );
            x += 30.0 + 7.0 * ser.label.len() as f64;
        }
    }

    for (pi, p) in panels.iter().enumerate() {
        let top = legend_h + pi as f64 * panel_height + mt;
        let ph = panel_height - mt - mb;
        let pw = width - ml - mr;
        let (x0, x1) = range(p.series.iter().flat_map(|s| s.x.iter().copied()), &[]);
        let (y0, y1) = range(p.series.iter().flat_map(|s| s.y.iter().copied()), &p.hlines);
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

        let _ = writeln!(s, r#"<g>"#);
        let _ = writeln!(s, r#"<text x="{ml}" y="{}" font-weight="bold">{}</text>"#, top - 8.0, escape(&p.title));
        for &(a, b) in &p.shade {
            let (a, b) = (a.max(x0), b.min(x1));
            if b > a {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{ph:.2}" fill="#999" fill-opacity="0.18"/>"##,
                    sx(a),
                    sx(b) - sx(a)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<rect x="{ml}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let yv = y0 + (y1 - y0) * k as f64 / 4.0;
            let xv = x0 + (x1 - x0) * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                ml - 4.0,
                sy(yv) + 4.0,
                tick(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                top + ph + 14.0,
                tick(xv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            escape(&p.y_label)
        );
        for &hl in &p.hlines {
            let _ = writeln!(
                s,
                r#"<line x1="{ml}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="5,4"/>"#,
                sy(hl),
                ml + pw,
                sy(hl)
            );
        }
        for (k, ser) in p.series.iter().enumerate() {
            let pts = decimate(&ser.x, &ser.y, MAX_POINTS);
            let mut d = String::new();
            let mut pen = false;
            for (x, y) in pts {
                if !x.is_finite() || !y.is_finite() {
                    pen = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, sx(x), sy(y));
                pen = true;
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
                d.trim_end(),
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">t (s)</text>"#, ml + pw, top + ph + 28.0);
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn range(vals: impl Iterator<Item = f64>, extra: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.chain(extra.iter().copied()).filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
    (lo - pad, hi + pad)
}

/// Keeps the first, min, max and last point of each bucket.
fn decimate(x: &[f64], y: &[f64], max: usize) -> Vec<(f64, f64)> {
    let n = x.len().min(y.len());
    if n <= max {
        return x.iter().copied().zip(y.iter().copied()).collect();
    }
    let buckets = max / 4;
    let mut out = Vec::with_capacity(max);
    for b in 0..buckets {
        let lo = b * n / buckets;
        let hi = ((b + 1) * n / buckets).max(lo + 1);
        let mut idx = vec![lo, hi - 1];
        let seg = &y[lo..hi];
        let fin = |v: &f64| if v.is_finite() { *v } else { f64::NAN };
        if let Some((i, _)) = seg.iter().map(fin).enumerate().filter(|(_, v)| !v.is_nan()).min_by(|a, b| a.1.total_cmp(&b.1)) {
            idx.push(lo + i);
        }
        if let Some((i, _)) = seg.iter().map(fin).enumerate().filter(|(_, v)| !v.is_nan()).max_by(|a, b| a.1.total_cmp(&b.1)) {
            idx.push(lo + i);
        }
        idx.sort_unstable();
        idx.dedup();
        out.extend(idx.into_iter().map(|i| (x[i], y[i])));
    }
    out
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(n: usize) -> Panel {
        let x: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        Panel {
            title: "v<dc>".into(),
            y_label: "V".into(),
            series: vec![Series {
                label: "base".into(),
                y: x.iter().map(|t| t.sin()).collect(),
                x,
            }],
            hlines: vec![0.5],
            shade: vec![(0.1, 0.2)],
        }
    }

    #[test]
    fn svg_has_paths_lines_and_shading() {
        let svg = render_svg(&[panel(100), panel(100)], 800.0, 220.0);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        assert_eq!(svg.matches("fill-opacity").count(), 2);
        assert!(svg.contains("v&lt;dc&gt;"));
    }

    #[test]
    fn decimation_keeps_extremes() {
        let x: Vec<f64> = (0..100_000).map(|k| k as f64).collect();
        let mut y = vec![0.0; x.len()];
        y[54_321] = 7.0;
        y[12_345] = -3.0;
        let d = decimate(&x, &y, 1000);
        assert!(d.len() <= 1000);
        assert!(d.contains(&(54_321.0, 7.0)));
        assert!(d.contains(&(12_345.0, -3.0)));
    }
}
