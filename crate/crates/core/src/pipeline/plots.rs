//! Dependency-free SVG plots: a d̃_z heatmap and the SDR–recovery trade-off
//! scatter with zone bands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::report::ReportBundle;
use super::PipelineError;
use crate::inventory::{Format, TraitDomain};
use crate::metrics::{RECOVERY_ACCEPTABLE, RECOVERY_STRONG, SDR_MEDIUM, SDR_NEGLIGIBLE};

pub const HEATMAP_SVG: &str = "heatmap_dz.svg";
pub const TRADEOFF_SVG: &str = "tradeoff.svg";

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";
const ZONE_GREEN: &str = "#d9f0d3";
const ZONE_AMBER: &str = "#fdf0c2";
const ZONE_RED: &str = "#f6d2d2";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn plot_error(message: impl Into<String>) -> PipelineError {
    PipelineError::Stage { stage: "plot", message: message.into() }
}

/// Diverging white-to-red (positive) / white-to-blue (negative) fill, saturating at |v| = 1.5.
fn diverging(v: f64) -> String {
    let t = (v.abs() / 1.5).min(1.0);
    let mix = |full: f64| (255.0 + (full - 255.0) * t).round() as u8;
    if v >= 0.0 {
        format!("#{:02x}{:02x}{:02x}", mix(202.0), mix(0.0), mix(32.0))
    } else {
        format!("#{:02x}{:02x}{:02x}", mix(5.0), mix(113.0), mix(176.0))
    }
}

/// Heatmap of direction-corrected d̃_z: one row per (respondent, format), one
/// column per trait.
pub fn heatmap_svg(b: &ReportBundle) -> Result<String, PipelineError> {
    if b.effects.is_empty() {
        return Err(plot_error("empty report: nothing to plot"));
    }
    let (label_w, cell_w, cell_h, top) = (200.0, 64.0, 30.0, 56.0);
    let width = label_w + cell_w * 5.0 + 200.0;
    let height = top + cell_h * b.effects.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" {FONT} font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">Direction-corrected d̃_z (fake-good − honest)</text>", width / 2.0);
    for (j, t) in TraitDomain::ALL.iter().enumerate() {
        let x = label_w + cell_w * (j as f64 + 0.5);
        let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>", top - 8.0, t.label());
    }
    for (i, e) in b.effects.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{} / {}</text>",
            label_w - 8.0,
            y + cell_h / 2.0 + 4.0,
            esc(&e.respondent_id),
            e.format
        );
        for (j, t) in e.traits.iter().enumerate() {
            let x = label_w + cell_w * j as f64;
            let (fill, text, ink) = match t.d_tilde.value {
                Some(v) => (diverging(v), format!("{v:.2}"), if v.abs() > 0.9 { "white" } else { "black" }),
                None => ("#e0e0e0".to_string(), "n/a".to_string(), "black"),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_w}\" height=\"{cell_h}\" fill=\"{fill}\" stroke=\"white\"/><text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{text}</text>",
                x + cell_w / 2.0,
                y + cell_h / 2.0 + 4.0
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{}\" font-size=\"10\" fill=\"#555\">red: shift toward the desirable pole; blue: away; grey: undefined (no spread)</text>",
        height - 14.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

struct Point<'a> {
    respondent: &'a str,
    format: Format,
    x: f64,
    y: f64,
    null_shift: bool,
}

fn plottable(b: &ReportBundle) -> Vec<Point<'_>> {
    b.tradeoff
        .iter()
        .filter_map(|t| {
            let y = t.point.mean_r.value?;
            let x = match t.point.aggregate_d_tilde.value {
                Some(x) => x,
                None if t.null_shift => 0.0,
                None => return None,
            };
            Some(Point { respondent: &t.point.respondent_id, format: t.point.format, x, y, null_shift: t.null_shift })
        })
        .collect()
}

/// Aggregate d̃_z (x) against honest-condition mean recovery r (y). Background
/// bands mark |d̃_z| ≤ 0.2 / ≤ 0.5 / beyond; dashed lines mark r = 0.5 and 0.7.
/// Grey segments connect the formats of one respondent.
pub fn tradeoff_svg(b: &ReportBundle) -> Result<String, PipelineError> {
    let pts = plottable(b);
    if pts.is_empty() {
        return Err(plot_error("empty report: no trade-off point has both a defined d̃_z and r"));
    }
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (64.0, 130.0, 40.0, 56.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let xmin = pts.iter().map(|p| p.x).fold(-0.1f64, f64::min) - 0.1;
    let xmax = pts.iter().map(|p| p.x).fold(1.0f64, f64::max) + 0.1;
    let ymin = pts.iter().map(|p| p.y).fold(0.0f64, f64::min);
    let ymax = 1.0f64.max(pts.iter().map(|p| p.y).fold(0.0, f64::max));
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + (ymax - y) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" {FONT} font-size=\"12\">");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">SDR–recovery trade-off across response formats</text>", ml + pw / 2.0);

    // |d̃_z| zone bands, clipped to the plotted range.
    let bands = [
        (-SDR_NEGLIGIBLE, SDR_NEGLIGIBLE, ZONE_GREEN),
        (SDR_NEGLIGIBLE, SDR_MEDIUM, ZONE_AMBER),
        (-SDR_MEDIUM, -SDR_NEGLIGIBLE, ZONE_AMBER),
        (SDR_MEDIUM, f64::INFINITY, ZONE_RED),
        (f64::NEG_INFINITY, -SDR_MEDIUM, ZONE_RED),
    ];
    for (lo, hi, fill) in bands {
        let (lo, hi) = (lo.max(xmin), hi.min(xmax));
        if hi > lo {
            let _ = writeln!(s, "<rect x=\"{}\" y=\"{mt}\" width=\"{}\" height=\"{ph}\" fill=\"{fill}\"/>", sx(lo), sx(hi) - sx(lo));
        }
    }
    for r in [RECOVERY_ACCEPTABLE, RECOVERY_STRONG] {
        if r > ymin && r < ymax {
            let _ = writeln!(
                s,
                "<line x1=\"{ml}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#777\" stroke-dasharray=\"5,4\"/><text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">r = {r:.2}</text>",
                ml + pw,
                ml + pw - 4.0,
                sy(r) - 4.0,
                y = sy(r)
            );
        }
    }
    let _ = writeln!(s, "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>");

    // ticks
    let step = if xmax - xmin > 3.0 { 1.0 } else { 0.5 };
    let mut x = (xmin / step).ceil() * step;
    while x <= xmax + 1e-9 {
        let x0 = if x.abs() < 1e-9 { 0.0 } else { x };
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x0:.1}</text>", sx(x), mt + ph + 16.0);
        x += step;
    }
    let mut y = (ymin / 0.25).ceil() * 0.25;
    while y <= ymax + 1e-9 {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y:.2}</text>", ml - 6.0, sy(y) + 4.0);
        y += 0.25;
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">aggregate d̃_z</text>", ml + pw / 2.0, h - 16.0);
    let _ = writeln!(
        s,
        "<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">mean recovery r (honest)</text>",
        mt + ph / 2.0
    );

    // grey connectors between formats of the same respondent
    let mut by_respondent: BTreeMap<&str, Vec<&Point>> = BTreeMap::new();
    for p in &pts {
        by_respondent.entry(p.respondent).or_default().push(p);
    }
    for group in by_respondent.values_mut() {
        group.sort_by_key(|p| p.format.as_str());
        for pair in group.windows(2) {
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-width=\"1.5\"/>",
                sx(pair[0].x),
                sy(pair[0].y),
                sx(pair[1].x),
                sy(pair[1].y)
            );
        }
    }
    for p in &pts {
        let (cx, cy) = (sx(p.x), sy(p.y));
        let fill = if p.null_shift { "white" } else { "#333" };
        match p.format {
            Format::Likert => {
                let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"5\" fill=\"{fill}\" stroke=\"#333\"/>");
            }
            Format::Gfc => {
                let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{fill}\" stroke=\"#333\"/>", cx - 5.0, cy - 5.0);
            }
        }
        // labels near the right edge go on the left of the marker
        let (lx, anchor) = if cx + 8.0 + 6.0 * p.respondent.len() as f64 > ml + pw { (cx - 8.0, "end") } else { (cx + 8.0, "start") };
        let _ = writeln!(s, "<text x=\"{lx}\" y=\"{}\" font-size=\"10\" text-anchor=\"{anchor}\">{}</text>", cy - 6.0, esc(p.respondent));
    }

    // legend
    let lx = ml + pw + 14.0;
    let legend = [
        (format!("<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#333\"/>", lx + 5.0, mt + 10.0), "Likert"),
        (format!("<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"#333\"/>", mt + 25.0), "GFC"),
        (format!("<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"white\" stroke=\"#333\"/>", mt + 45.0), "null shift"),
        (format!("<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{ZONE_GREEN}\"/>", mt + 65.0), "|d̃| ≤ 0.2"),
        (format!("<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{ZONE_AMBER}\"/>", mt + 85.0), "|d̃| ≤ 0.5"),
        (format!("<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{ZONE_RED}\"/>", mt + 105.0), "|d̃| > 0.5"),
    ];
    for (i, (shape, label)) in legend.iter().enumerate() {
        let _ = writeln!(s, "{shape}<text x=\"{}\" y=\"{}\">{label}</text>", lx + 16.0, mt + 14.0 + 20.0 * i as f64);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders both plots and writes them to `dir`. Nothing is written if either
/// plot cannot be drawn.
pub fn emit_plots(b: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let heat = heatmap_svg(b)?;
    let trade = tradeoff_svg(b)?;
    std::fs::create_dir_all(dir).map_err(|e| plot_error(e.to_string()))?;
    let mut out = Vec::new();
    for (name, svg) in [(HEATMAP_SVG, heat), (TRADEOFF_SVG, trade)] {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(|e| plot_error(e.to_string()))?;
        out.push(path);
    }
    Ok(out)
}
