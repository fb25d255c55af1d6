//! Location-map fingerprinting.
//!
//! The map is a grid of cells over the world bounds. Each cell stores the
//! RSSI every sensor is expected to see from the cell centroid. A query
//! vector is matched to the cell nearest to it in signal space.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Point2D, Rect};
use crate::sim::World;

use super::{LocationEstimate, Method, PositioningError};

/// Expected value for sensors that do not hear a cell, and the value
/// imputed for sensors missing from a query.
pub const MAP_FLOOR_DBM: f64 = -100.0;

/// Refuse to build grids larger than this many cells.
const MAX_CELLS: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MapCell {
    pub index: usize,
    pub rect: Rect,
    pub centroid: Point2D,
    /// Expected RSSI per sensor, aligned with [`LocationMap::sensors`].
    pub rssi: Vec<f64>,
}

impl MapCell {
    pub fn half_diagonal(&self) -> f64 {
        self.rect.diagonal() / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMap {
    bounds: Rect,
    cell_size: f64,
    cols: usize,
    rows: usize,
    sensors: Vec<String>,
    cells: Vec<MapCell>,
}

/// Observed RSSI per sensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleVector {
    pub values: BTreeMap<String, f64>,
    pub timestamp_ms: u64,
}

impl SampleVector {
    /// Parses `"S1:-55,S2:-61"`.
    pub fn parse(s: &str, timestamp_ms: u64) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (id, v) = part
                .split_once(':')
                .ok_or_else(|| format!("expected sensor:rssi, got {part:?}"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("bad rssi in {part:?}"))?;
            if !(-120.0..=0.0).contains(&v) {
                return Err(format!("rssi {v} outside [-120, 0]"));
            }
            if values.insert(id.trim().to_string(), v).is_some() {
                return Err(format!("sensor {:?} given twice", id.trim()));
            }
        }
        Ok(Self {
            values,
            timestamp_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMatch {
    pub estimate: LocationEstimate,
    pub cell_index: usize,
    /// Euclidean distance in dB between the query and the cell vector.
    pub signal_distance_db: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("location map line {line}: {reason}")]
pub struct MapParseError {
    pub line: usize,
    pub reason: String,
}

/// Number of cells of size `cell` needed to cover `extent`, treating
/// near-integral ratios as exact.
fn cell_count(extent: f64, cell: f64) -> usize {
    let ratio = extent / cell;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest.max(1.0) as usize
    } else {
        ratio.ceil() as usize
    }
}

impl LocationMap {
    fn grid(
        bounds: Rect,
        cell_size: f64,
        sensors: Vec<String>,
        mut fill: impl FnMut(&Point2D) -> Vec<f64>,
    ) -> Result<Self, PositioningError> {
        if !(cell_size.is_finite() && cell_size > 0.0) || !bounds.is_valid() {
            return Err(PositioningError::InvalidCellSize(cell_size));
        }
        let cols = cell_count(bounds.width(), cell_size);
        let rows = cell_count(bounds.height(), cell_size);
        if cols.saturating_mul(rows) > MAX_CELLS {
            return Err(PositioningError::InvalidCellSize(cell_size));
        }
        let mut cells = Vec::with_capacity(cols * rows);
        for row in 0..rows {
            for col in 0..cols {
                let min_x = bounds.min.x + col as f64 * cell_size;
                let min_y = bounds.min.y + row as f64 * cell_size;
                let max_x = if col + 1 == cols { bounds.max.x } else { (min_x + cell_size).min(bounds.max.x) };
                let max_y = if row + 1 == rows { bounds.max.y } else { (min_y + cell_size).min(bounds.max.y) };
                let rect = Rect::new(min_x, min_y, max_x, max_y);
                let centroid = rect.center();
                let rssi = fill(&centroid);
                cells.push(MapCell {
                    index: row * cols + col,
                    rect,
                    centroid,
                    rssi,
                });
            }
        }
        Ok(Self {
            bounds,
            cell_size,
            cols,
            rows,
            sensors,
            cells,
        })
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Grid dimensions as (columns, rows).
    pub fn dims(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    pub fn cells(&self) -> &[MapCell] {
        &self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn expected(&self, cell: usize, sensor_id: &str) -> Option<f64> {
        let k = self.sensors.iter().position(|s| s == sensor_id)?;
        self.cells.get(cell).map(|c| c.rssi[k])
    }

    /// Index of the cell containing `p`, clamping points outside the
    /// bounds onto the border cells.
    pub fn cell_index_at(&self, p: &Point2D) -> usize {
        let col = ((p.x - self.bounds.min.x) / self.cell_size).floor();
        let row = ((p.y - self.bounds.min.y) / self.cell_size).floor();
        let col = (col.max(0.0) as usize).min(self.cols - 1);
        let row = (row.max(0.0) as usize).min(self.rows - 1);
        row * self.cols + col
    }

    /// Text form: a header line followed by one
    /// `cell_index,cx,cy,<sensor:rssi>...` line per cell.
    pub fn to_text(&self) -> String {
        let b = self.bounds;
        let mut out = format!(
            "locmap cell_size={} bounds={},{},{},{} sensors={}\n",
            self.cell_size,
            b.min.x,
            b.min.y,
            b.max.x,
            b.max.y,
            self.sensors.join(",")
        );
        for cell in &self.cells {
            let _ = write!(out, "{},{},{}", cell.index, cell.centroid.x, cell.centroid.y);
            for (id, v) in self.sensors.iter().zip(&cell.rssi) {
                let _ = write!(out, ",{id}:{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MapParseError> {
        let err = |line: usize, reason: String| MapParseError { line, reason };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty map".into()))?;
        let rest = header
            .strip_prefix("locmap ")
            .ok_or_else(|| err(1, "missing locmap header".into()))?;
        let mut cell_size = None;
        let mut bounds = None;
        let mut sensors = None;
        for field in rest.split(' ') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(1, format!("bad header field {field:?}")))?;
            match key {
                "cell_size" => {
                    cell_size = Some(value.parse::<f64>().map_err(|_| err(1, "bad cell_size".into()))?)
                }
                "bounds" => {
                    let v: Vec<f64> = value
                        .split(',')
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(1, "bad bounds".into()))?;
                    if v.len() != 4 {
                        return Err(err(1, "bounds need 4 numbers".into()));
                    }
                    bounds = Some(Rect::new(v[0], v[1], v[2], v[3]));
                }
                "sensors" => {
                    sensors = Some(
                        value
                            .split(',')
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect::<Vec<_>>(),
                    )
                }
                other => return Err(err(1, format!("unknown header field {other:?}"))),
            }
        }
        let (Some(cell_size), Some(bounds), Some(sensors)) = (cell_size, bounds, sensors) else {
            return Err(err(1, "header needs cell_size, bounds and sensors".into()));
        };
        let mut grid = Self::grid(bounds, cell_size, sensors, |_| Vec::new())
            .map_err(|e| err(1, e.to_string()))?;
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let cell = grid
                .cells
                .get_mut(i)
                .ok_or_else(|| err(lineno, "more cells than the grid holds".into()))?;
            let mut fields = line.split(',');
            let index: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(lineno, "bad cell index".into()))?;
            if index != cell.index {
                return Err(err(lineno, format!("expected cell {}, got {index}", cell.index)));
            }
            let mut coord = || -> Result<f64, MapParseError> {
                fields
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(lineno, "bad centroid".into()))
            };
            let (cx, cy) = (coord()?, coord()?);
            if (cx - cell.centroid.x).abs() > 1e-9 || (cy - cell.centroid.y).abs() > 1e-9 {
                return Err(err(lineno, "centroid does not match grid".into()));
            }
            let mut values = Vec::with_capacity(grid.sensors.len());
            for (k, field) in fields.enumerate() {
                let (id, v) = field
                    .split_once(':')
                    .ok_or_else(|| err(lineno, format!("bad entry {field:?}")))?;
                if grid.sensors.get(k).map(String::as_str) != Some(id) {
                    return Err(err(lineno, format!("unexpected sensor {id:?}")));
                }
                values.push(v.parse().map_err(|_| err(lineno, format!("bad rssi {v:?}")))?);
            }
            if values.len() != grid.sensors.len() {
                return Err(err(lineno, "missing sensor entries".into()));
            }
            cell.rssi = values;
            seen += 1;
        }
        if seen != grid.cells.len() {
            return Err(err(seen + 2, format!("expected {} cells, found {seen}", grid.cells.len())));
        }
        Ok(grid)
    }
}

/// Calibrates a map from the noiseless channel model. Cells a sensor
/// cannot hear get [`MAP_FLOOR_DBM`].
pub fn build_location_map(world: &World, cell_size_m: f64) -> Result<LocationMap, PositioningError> {
    let radio = world.radio();
    let sensors: Vec<String> = world.sensors().iter().map(|s| s.id.clone()).collect();
    LocationMap::grid(world.bounds(), cell_size_m, sensors, |c| {
        world
            .sensors()
            .iter()
            .map(|s| {
                let mean = radio.mean_rssi(s.pos.distance(c));
                if mean < radio.detect_threshold_dbm {
                    MAP_FLOOR_DBM
                } else {
                    mean
                }
            })
            .collect()
    })
}

/// Best-matching cell for `v`: smallest Euclidean distance in dB over the
/// map's sensors, ties to the lowest cell index.
pub fn fingerprint_locate(map: &LocationMap, v: &SampleVector) -> Result<FingerprintMatch, PositioningError> {
    if map.is_empty() {
        return Err(PositioningError::EmptyMap);
    }
    let query: Vec<f64> = map
        .sensors
        .iter()
        .map(|s| v.values.get(s).copied().unwrap_or(MAP_FLOOR_DBM))
        .collect();
    let mut best = (0usize, f64::INFINITY);
    for (i, cell) in map.cells.iter().enumerate() {
        let d2: f64 = cell
            .rssi
            .iter()
            .zip(&query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    let cell = &map.cells[best.0];
    Ok(FingerprintMatch {
        estimate: LocationEstimate {
            pos: cell.centroid,
            accuracy_m: cell.half_diagonal(),
            method: Method::Fingerprint,
            timestamp_ms: v.timestamp_ms,
            zone: None,
        },
        cell_index: cell.index,
        signal_distance_db: best.1.sqrt(),
    })
}
