//! Navigation map snapshots as a character grid or an SVG document.
//!
//! Text grids use one character per cell, top row = highest y. Symbols:
//! `*` estimate, `o` true device position, `S` sensor, `+ - |` zone
//! borders, `.` empty. Where several land in one cell the earlier symbol
//! in that list wins.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::geometry::Point2D;
use crate::protocol::BtAddress;
use crate::sim::World;

/// SVG scale.
pub const PX_PER_METER: f64 = 10.0;

/// Everything drawn for one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapSnapshot {
    pub t_ms: u64,
    pub truth: Vec<(BtAddress, Point2D)>,
    pub estimates: Vec<(BtAddress, Point2D)>,
    /// Detection rows per sensor, from the store.
    pub counts: BTreeMap<String, usize>,
}

struct Grid {
    cols: usize,
    rows: usize,
    cell: f64,
    origin: Point2D,
    chars: Vec<u8>,
}

impl Grid {
    fn col(&self, x: f64) -> usize {
        let c = ((x - self.origin.x) / self.cell).floor().max(0.0) as usize;
        c.min(self.cols - 1)
    }

    fn row(&self, y: f64) -> usize {
        let r = ((y - self.origin.y) / self.cell).floor().max(0.0) as usize;
        r.min(self.rows - 1)
    }

    /// Last column touched by a right edge at `x`.
    fn last_col(&self, x: f64) -> usize {
        let c = ((x - self.origin.x) / self.cell).ceil() as isize - 1;
        (c.max(0) as usize).min(self.cols - 1)
    }

    fn last_row(&self, y: f64) -> usize {
        let r = ((y - self.origin.y) / self.cell).ceil() as isize - 1;
        (r.max(0) as usize).min(self.rows - 1)
    }

    fn set(&mut self, col: usize, row: usize, ch: u8) {
        let line = self.rows - 1 - row;
        self.chars[line * self.cols + col] = ch;
    }

    fn plot(&mut self, p: &Point2D, ch: u8) {
        let (c, r) = (self.col(p.x), self.row(p.y));
        self.set(c, r, ch);
    }
}

fn count_cells(extent: f64, cell: f64) -> usize {
    let ratio = extent / cell;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 * nearest.max(1.0) {
        (nearest as usize).max(1)
    } else {
        (ratio.ceil() as usize).max(1)
    }
}

fn legend(world: &World, counts: &BTreeMap<String, usize>) -> Vec<String> {
    world
        .sensors()
        .iter()
        .map(|s| {
            let n = counts.get(&s.id).copied().unwrap_or(0);
            let noun = if n == 1 { "detection" } else { "detections" };
            format!("{}: {n} {noun}", s.id)
        })
        .collect()
}

/// Renders `snap` with `width_chars` columns across the world bounds, or
/// one column per meter when `None`.
pub fn render_text(world: &World, snap: &MapSnapshot, width_chars: Option<usize>) -> String {
    let b = world.bounds();
    let cell = match width_chars {
        Some(w) if w > 0 => b.width() / w as f64,
        _ => 1.0,
    };
    let cols = count_cells(b.width(), cell);
    let rows = count_cells(b.height(), cell);
    let mut grid = Grid {
        cols,
        rows,
        cell,
        origin: b.min,
        chars: vec![b'.'; cols * rows],
    };
    for zone in world.zones() {
        let (c0, c1) = (grid.col(zone.rect.min.x), grid.last_col(zone.rect.max.x));
        let (r0, r1) = (grid.row(zone.rect.min.y), grid.last_row(zone.rect.max.y));
        for c in c0..=c1 {
            grid.set(c, r0, b'-');
            grid.set(c, r1, b'-');
        }
        for r in r0..=r1 {
            grid.set(c0, r, b'|');
            grid.set(c1, r, b'|');
        }
        for (c, r) in [(c0, r0), (c0, r1), (c1, r0), (c1, r1)] {
            grid.set(c, r, b'+');
        }
    }
    for s in world.sensors() {
        grid.plot(&s.pos, b'S');
    }
    for (_, p) in &snap.truth {
        grid.plot(p, b'o');
    }
    for (_, p) in &snap.estimates {
        grid.plot(p, b'*');
    }

    let mut out = String::with_capacity((cols + 1) * rows + 64);
    for line in grid.chars.chunks(cols) {
        out.push_str(std::str::from_utf8(line).expect("ascii grid"));
        out.push('\n');
    }
    for l in legend(world, &snap.counts) {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Same content as [`render_text`] at [`PX_PER_METER`].
pub fn render_svg(world: &World, snap: &MapSnapshot) -> String {
    let b = world.bounds();
    let w = b.width() * PX_PER_METER;
    let h = b.height() * PX_PER_METER;
    let px = |p: &Point2D| ((p.x - b.min.x) * PX_PER_METER, (b.max.y - p.y) * PX_PER_METER);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#ffffff"/>"##);
    for zone in world.zones() {
        let (x, y) = px(&Point2D::new(zone.rect.min.x, zone.rect.max.y));
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#555555"/>"##,
            zone.rect.width() * PX_PER_METER,
            zone.rect.height() * PX_PER_METER
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" fill="#555555">{}</text>"##,
            x + 3.0,
            y + 12.0,
            escape_xml(&zone.id)
        );
    }
    for (s, label) in world.sensors().iter().zip(legend(world, &snap.counts)) {
        let (x, y) = px(&s.pos);
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="6.0" height="6.0" fill="#1f77b4"><title>{}</title></rect>"##,
            x - 3.0,
            y - 3.0,
            escape_xml(&label)
        );
    }
    for (addr, p) in &snap.truth {
        let (x, y) = px(p);
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="3.0" fill="none" stroke="#2ca02c"><title>{addr}</title></circle>"##
        );
    }
    for (addr, p) in &snap.estimates {
        let (x, y) = px(p);
        let _ = writeln!(
            out,
            r##"<path d="M{:.1} {y:.1}H{:.1}M{x:.1} {:.1}V{:.1}" stroke="#d62728"><title>{addr}</title></path>"##,
            x - 4.0,
            x + 4.0,
            y - 4.0,
            y + 4.0
        );
    }
    for (i, label) in legend(world, &snap.counts).iter().enumerate() {
        let _ = writeln!(
            out,
            r##"<text x="4.0" y="{:.1}" font-size="10" fill="#000000">{}</text>"##,
            h - 4.0 - 12.0 * i as f64,
            escape_xml(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
