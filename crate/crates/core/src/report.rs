//! SVG rendering of segment maps, transition matrices and trajectory classes.

use std::fmt::Write;

use ndarray::Array2;

use crate::som::Topology;
use crate::trajectory::ClassReport;
use crate::ward::Segmentation;

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
    "#86bcb6", "#d37295",
];

fn color(segment: usize) -> &'static str {
    PALETTE[(segment - 1) % PALETTE.len()]
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Map units colored by segment with the member count of each unit. Strings
/// are drawn as a single row.
pub fn segment_map_svg(topology: &Topology, segmentation: &Segmentation, unit_counts: &[usize]) -> String {
    let (rows, cols) = match *topology {
        Topology::Grid { rows, cols } => (rows, cols),
        Topology::String { length } => (1, length),
    };
    let cell = 56.0;
    let margin = 20.0;
    let legend = 28.0 * segmentation.k.div_ceil(4) as f64;
    let width = cols as f64 * cell + 2.0 * margin;
    let height = rows as f64 * cell + 2.0 * margin + legend;
    let mut out = String::new();
    header(&mut out, width, height);
    for u in 0..topology.unit_count() {
        let (r, c) = (u / cols, u % cols);
        let x = margin + c as f64 * cell;
        let y = margin + r as f64 * cell;
        let fill = segmentation.unit_to_segment[u].map_or("#eeeeee", color);
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{fill}" stroke="#333" stroke-width="0.5"/>"##
        );
        let label = segmentation.unit_to_segment[u].map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{label}</text>"#,
            x + cell / 2.0,
            y + cell / 2.0
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" fill="#222">n={}</text>"##,
            x + cell / 2.0,
            y + cell - 6.0,
            unit_counts.get(u).copied().unwrap_or(0)
        );
    }
    let top = margin * 1.5 + rows as f64 * cell;
    for s in 1..=segmentation.k {
        let x = margin + ((s - 1) % 4) as f64 * 140.0;
        let y = top + ((s - 1) / 4) as f64 * 28.0;
        let weight = segmentation.segment_weights.get(s - 1).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="14" height="14" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">segment {s} ({weight:.0})</text>"#,
            color(s),
            x + 20.0,
            y + 12.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heat map of a stochastic matrix with cell values in percent.
pub fn matrix_heatmap_svg(p: &Array2<f64>, title: &str) -> String {
    let k = p.nrows();
    let cell = 52.0;
    let margin = 40.0;
    let size = k as f64 * cell + 2.0 * margin;
    let mut out = String::new();
    header(&mut out, size, size + 20.0);
    let _ = writeln!(out, r#"<text x="{margin:.1}" y="24" font-size="14">{}</text>"#, escape(title));
    for i in 0..k {
        let y = margin + 10.0 + i as f64 * cell;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">C{}</text>"#,
            margin - 4.0,
            y + cell / 2.0 + 4.0,
            i + 1
        );
        for j in 0..k {
            let x = margin + j as f64 * cell;
            let v = p[[i, j]].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v.sqrt())).round() as u8;
            let text = if v > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="rgb({shade},{shade},255)" stroke="#999" stroke-width="0.5"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" fill="{text}">{:.1}</text>"##,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                100.0 * p[[i, j]]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Small multiples of trajectory classes: one row per initial segment with
/// its population share on the left, then one small panel per string unit
/// showing the code vector over the years and the unit frequency below it.
pub fn trajectory_classes_svg(report: &ClassReport, k: usize) -> String {
    let units = report.groups.iter().map(|g| g.code_vectors.len()).max().unwrap_or(0).max(1);
    let panel_w = 84.0;
    let panel_h = 70.0;
    let gap = 6.0;
    let left = 90.0;
    let top = 36.0;
    let row_h = panel_h + 26.0;
    let width = left + units as f64 * (panel_w + gap) + 10.0;
    let height = top + report.groups.len() as f64 * row_h + 10.0;
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r#"<text x="10" y="20" font-size="13">Trajectory classes by initial segment, {}–{}</text>"#,
        report.start_year,
        report.start_year + report.horizon as i32 - 1
    );
    let span = (k.max(2) - 1) as f64;
    for (gi, group) in report.groups.iter().enumerate() {
        let y0 = top + gi as f64 * row_h;
        let _ = writeln!(
            out,
            r#"<text x="10" y="{:.1}" font-size="12" fill="{}">C{} {:.1}%</text>"#,
            y0 + panel_h / 2.0,
            color(group.initial_segment),
            group.initial_segment,
            100.0 * group.share
        );
        if !group.trained {
            let _ = writeln!(
                out,
                r##"<text x="{left:.1}" y="{:.1}" font-size="11" fill="#888">not classified ({} paths)</text>"##,
                y0 + panel_h / 2.0,
                group.members
            );
            continue;
        }
        for (u, code) in group.code_vectors.iter().enumerate() {
            let x0 = left + u as f64 * (panel_w + gap);
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.1}" y="{y0:.1}" width="{panel_w:.1}" height="{panel_h:.1}" fill="none" stroke="#bbb" stroke-width="0.5"/>"##
            );
            let steps = (code.len().max(2) - 1) as f64;
            let points: Vec<String> = code
                .iter()
                .enumerate()
                .map(|(t, &v)| {
                    let x = x0 + 4.0 + (panel_w - 8.0) * t as f64 / steps;
                    let y = y0 + 4.0 + (panel_h - 8.0) * (v - 1.0) / span;
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                points.join(" "),
                color(group.initial_segment)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
                x0 + panel_w / 2.0,
                y0 + panel_h + 13.0,
                group.frequencies.get(u).copied().unwrap_or(0)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
