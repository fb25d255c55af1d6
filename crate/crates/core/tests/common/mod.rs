#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bluetrack_core::config::{load_scenario, ScenarioConfig, WorldConfig};
use bluetrack_core::geometry::{Point2D, Rect};
use bluetrack_core::positioning::DistanceEstimate;
use bluetrack_core::sim::{build_world, DeviceSpec, RadioParams, SensorSpec, Waypoint, World, ZoneSpec};
use bluetrack_core::BtAddress;

/// Weighted sum of squared range residuals, the objective trilateration
/// minimizes.
pub fn range_objective(anchors: &[DistanceEstimate], p: &Point2D) -> f64 {
    anchors
        .iter()
        .map(|a| {
            let r = a.anchor.distance(p) - a.distance_m;
            a.weight * r * r
        })
        .sum()
}

fn grid_min(anchors: &[DistanceEstimate], region: Rect, step: f64) -> Point2D {
    let nx = ((region.width() / step).round() as usize).max(1);
    let ny = ((region.height() / step).round() as usize).max(1);
    let mut best = (f64::INFINITY, region.min);
    for i in 0..=nx {
        let x = region.min.x + i as f64 * step;
        for j in 0..=ny {
            let p = Point2D::new(x, region.min.y + j as f64 * step);
            let f = range_objective(anchors, &p);
            if f < best.0 {
                best = (f, p);
            }
        }
    }
    best.1
}

/// Brute-force minimizer of [`range_objective`]: an exhaustive 0.01 m
/// grid over `region`, then a 0.001 m grid over the coarse winner's
/// neighborhood.
pub fn grid_oracle(anchors: &[DistanceEstimate], region: Rect) -> Point2D {
    let coarse = grid_min(anchors, region, 0.01);
    let fine = Rect::new(coarse.x - 0.02, coarse.y - 0.02, coarse.x + 0.02, coarse.y + 0.02);
    grid_min(anchors, fine, 0.001)
}

/// A box certain to contain the global minimizer of [`range_objective`].
///
/// With `f` the objective at the anchor centroid, every residual at the
/// minimizer is at most `sqrt(f / w_i)`, so the minimizer lies within
/// `d_i + sqrt(f / w_i)` of every positively weighted anchor.
pub fn search_region(anchors: &[DistanceEstimate]) -> Rect {
    let n = anchors.len() as f64;
    let centroid = Point2D::new(
        anchors.iter().map(|a| a.anchor.x).sum::<f64>() / n,
        anchors.iter().map(|a| a.anchor.y).sum::<f64>() / n,
    );
    let f = range_objective(anchors, &centroid);
    let mut region = Rect::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
    for a in anchors.iter().filter(|a| a.weight > 0.0) {
        let r = a.distance_m + (f / a.weight).sqrt();
        region = Rect::new(
            region.min.x.max(a.anchor.x - r),
            region.min.y.max(a.anchor.y - r),
            region.max.x.min(a.anchor.x + r),
            region.max.y.min(a.anchor.y + r),
        );
    }
    region
}

pub fn addr(n: u32) -> BtAddress {
    let b = n.to_be_bytes();
    BtAddress([0x00, 0x1A, b[0], b[1], b[2], b[3]])
}

pub fn sensor(id: &str, x: f64, y: f64, zone: &str) -> SensorSpec {
    SensorSpec {
        id: id.into(),
        pos: Point2D::new(x, y),
        zone: zone.into(),
        scan_interval_s: 10.0,
        message_template: "You are in {zone}".into(),
    }
}

pub fn static_device(n: u32, p: Point2D) -> DeviceSpec {
    DeviceSpec {
        addr: addr(n),
        friendly_name: format!("phone {n}"),
        discoverable: true,
        accepts_push: true,
        trajectory: vec![Waypoint { t: 0.0, pos: p }],
    }
}

/// Four sensors on the corners of a `w` by `h` room with one device.
pub fn corner_world(w: f64, h: f64, device: Point2D, radio: RadioParams) -> World {
    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
    build_world(&WorldConfig {
        bounds: Some(Rect::new(0.0, 0.0, w, h)),
        radio,
        sensors: corners
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| sensor(&format!("S{}", i + 1), x, y, "Room"))
            .collect(),
        zones: vec![ZoneSpec { id: "Room".into(), rect: Rect::new(0.0, 0.0, w, h) }],
        devices: vec![static_device(1, device)],
    })
    .expect("valid corner world")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_paths() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = fs::read_dir(fixtures_dir())
        .expect("fixtures dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "scn"))
        .collect();
    paths.sort();
    paths
}

pub fn fixture(name: &str) -> ScenarioConfig {
    load_scenario(&fixtures_dir().join(name)).expect("fixture loads")
}

/// Relative path to contents for every file under `root`.
pub fn snapshot_dir(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).expect("read dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(root).expect("under root").to_path_buf();
            if p.is_dir() {
                out.insert(rel.join(""), Vec::new());
                walk(root, &p, out);
            } else {
                out.insert(rel, fs::read(&p).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
