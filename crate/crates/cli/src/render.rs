//! Timeline pictures: an SVG Gantt chart and a plain-text grid.

use std::fmt::Write as _;

use vocabpipe::sim::{Stream, Timeline};
use vocabpipe::PassKind;

const PX_PER_UNIT: f64 = 24.0;
const ROW: f64 = 28.0;
const SUB_ROW: f64 = 8.0;
const GAP: f64 = 6.0;
const LEFT: f64 = 40.0;
const TOP: f64 = 10.0;

fn color(kind: PassKind, chunk: usize) -> &'static str {
    match (kind, chunk) {
        (PassKind::F, 0) => "#4e79a7",
        (PassKind::F, _) => "#a0cbe8",
        (PassKind::B, 0) => "#59a14f",
        (PassKind::B, _) => "#8cd17d",
        (PassKind::S, _) => "#f28e2b",
        (PassKind::T, _) => "#e15759",
        (PassKind::InF, _) => "#b07aa1",
        (PassKind::InB, _) => "#d4a6c8",
        _ => "#79706e",
    }
}

const LEGEND: [(PassKind, usize, &str); 9] = [
    (PassKind::F, 0, "F"),
    (PassKind::F, 1, "F chunk 1"),
    (PassKind::B, 0, "B"),
    (PassKind::B, 1, "B chunk 1"),
    (PassKind::S, 0, "S"),
    (PassKind::T, 0, "T"),
    (PassKind::InF, 0, "input F"),
    (PassKind::InB, 0, "input B"),
    (PassKind::C0, 0, "collective"),
];

/// One row per device with collectives on a thin row underneath.
pub fn svg(timeline: &Timeline) -> String {
    let p = timeline.devices.len();
    let band = ROW + SUB_ROW + GAP;
    let width = LEFT + timeline.makespan * PX_PER_UNIT + 20.0;
    let legend_y = TOP + p as f64 * band + 10.0;
    let height = legend_y + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="monospace" font-size="10">"#
    );
    for d in 0..p {
        let y = TOP + d as f64 * band;
        let _ = writeln!(out, r#"<text x="4" y="{:.1}">d{d}</text>"#, y + ROW / 2.0 + 4.0);
        for r in &timeline.devices[d] {
            let x = LEFT + r.start * PX_PER_UNIT;
            let w = (r.duration() * PX_PER_UNIT).max(0.5);
            let (ry, rh) = match r.stream {
                Stream::Compute if !r.pass.kind.is_collective() => (y, ROW),
                _ => (y + ROW, SUB_ROW),
            };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{ry:.1}" width="{w:.2}" height="{rh:.1}" fill="{}" stroke="white" stroke-width="0.5"><title>{} m{} [{:.3}, {:.3}]</title></rect>"#,
                color(r.pass.kind, r.pass.chunk),
                r.pass.label(),
                r.pass.microbatch,
                r.start,
                r.end
            );
            if rh == ROW && w >= 12.0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.1}" fill="white">{}</text>"#,
                    x + 2.0,
                    ry + ROW / 2.0 + 4.0,
                    r.pass.microbatch
                );
            }
        }
    }
    let mut x = LEFT;
    for (kind, chunk, name) in LEGEND {
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{legend_y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            color(kind, chunk),
            x + 16.0,
            legend_y + 10.0
        );
        x += 16.0 + 8.0 * name.len() as f64 + 14.0;
    }
    out.push_str("</svg>\n");
    out
}

fn glyph(kind: PassKind, chunk: usize) -> char {
    match (kind, chunk) {
        (PassKind::F, 0) => 'F',
        (PassKind::F, _) => 'f',
        (PassKind::B, 0) => 'B',
        (PassKind::B, _) => 'b',
        (PassKind::S, _) => 'S',
        (PassKind::T, _) => 'T',
        (PassKind::InF, _) => 'i',
        (PassKind::InB, _) => 'j',
        _ => 'c',
    }
}

/// Each column covers `resolution` time units and shows the compute pass
/// running at its midpoint; `.` is idle.
pub fn grid(timeline: &Timeline, resolution: f64) -> String {
    let cols = (timeline.makespan / resolution).ceil() as usize;
    let mut out = String::new();
    let _ = writeln!(out, "# one column = {resolution} time units; F/B chunk 0, f/b chunk 1, i/j input, c collective");
    for (d, records) in timeline.devices.iter().enumerate() {
        let mut row = vec!['.'; cols];
        for r in records.iter().filter(|r| r.stream == Stream::Compute) {
            let first = (r.start / resolution - 0.5).ceil().max(0.0) as usize;
            let mut c = first;
            while c < cols && (c as f64 + 0.5) * resolution < r.end {
                row[c] = glyph(r.pass.kind, r.pass.chunk);
                c += 1;
            }
        }
        let _ = writeln!(out, "d{d:<3}{}", row.into_iter().collect::<String>());
    }
    out
}
