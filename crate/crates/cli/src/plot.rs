//! `plot`: CSV curves to a standalone SVG.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use crate::error::{CliError, CliResult};
use crate::inputs::{read_text, write_text};
use crate::manifest::{manifest_path, RunManifest};

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// CSV files; the first column is x, every further column one curve.
    #[arg(long, num_args = 1.., required = true)]
    pub curves: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Curves of one CSV. With a single y column the curve is named `name`,
/// otherwise `name:column`.
pub fn parse_curves(name: &str, text: &str) -> CliResult<(String, Vec<Curve>)> {
    let bad = |msg: String| CliError::input(format!("{name}: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty CSV".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < 2 {
        return Err(bad("need an x column and at least one y column".into()));
    }
    let mut curves: Vec<Curve> = header[1..]
        .iter()
        .map(|col| Curve {
            label: if header.len() == 2 {
                name.to_string()
            } else {
                format!("{name}:{col}")
            },
            points: Vec::new(),
        })
        .collect();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} cells, expected {}",
                i + 2,
                cells.len(),
                header.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("row {}: '{s}' is not a number", i + 2)))
        };
        let x = num(cells[0])?;
        for (curve, cell) in curves.iter_mut().zip(&cells[1..]) {
            // empty cells leave a gap in that curve only
            if !cell.is_empty() {
                curve.points.push((x, num(cell)?));
            }
        }
    }
    curves.retain(|c| !c.points.is_empty());
    if curves.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok((header[0].to_string(), curves))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One `<polyline>` per curve, axes with five ticks each, and a legend.
pub fn render_svg(curves: &[Curve], title: &str, x_label: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let all = curves.iter().flat_map(|c| &c.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph
    );
    for k in 0..5 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            sx(xv),
            top + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#,
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = top + 10.0 + 18.0 * i as f64;
        let x = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn cmd_plot(a: &PlotArgs, argv: &[String]) -> CliResult<()> {
    let mut curves = Vec::new();
    let mut x_label = String::new();
    for path in &a.curves {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (x, mut c) = parse_curves(&name, &read_text(path)?)?;
        if x_label.is_empty() {
            x_label = x;
        }
        curves.append(&mut c);
    }
    let svg = render_svg(&curves, a.title.as_deref().unwrap_or(""), &x_label);
    write_text(&a.out, &svg)?;

    let mut manifest = RunManifest::new("plot", argv);
    for p in &a.curves {
        manifest.input(p);
    }
    manifest.set("title", a.title.clone()).output(&a.out);
    manifest.write(&manifest_path(&a.out, false))?;
    println!("wrote {} curves to {}", curves.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_curve_one_polyline() {
        let (x, c) = parse_curves("pr", "recall,precision\n0.0,1.0\n0.5,0.8\n1.0,0.4\n").unwrap();
        assert_eq!(x, "recall");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].label, "pr");
        let svg = render_svg(&c, "t", &x);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches(r#"class="legend-entry""#).count(), 1);
    }

    #[test]
    fn multi_column_csv_gives_several_curves() {
        let (_, c) = parse_curves("sweep", "param,a,b\n0.3,1,2\n0.4,,3\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].label, "sweep:a");
        assert_eq!(c[0].points.len(), 1);
        assert_eq!(c[1].points.len(), 2);
        let svg = render_svg(&c, "", "param");
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn malformed_csv() {
        assert!(parse_curves("e", "").is_err());
        assert!(parse_curves("e", "x,y\n").is_err());
        assert!(parse_curves("e", "x\n1\n").is_err());
        assert!(parse_curves("e", "x,y\n1,2,3\n").is_err());
        assert!(parse_curves("e", "x,y\n1,abc\n").is_err());
    }

    #[test]
    fn labels_are_escaped() {
        let c = vec![Curve {
            label: "a<b&c".into(),
            points: vec![(0.0, 0.0)],
        }];
        let svg = render_svg(&c, "", "");
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
