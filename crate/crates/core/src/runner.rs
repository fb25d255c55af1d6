//! Scenario event loop.
//!
//! Each tick runs, in order: every due sensor (by id) scans, encodes its
//! report and hands the bytes to the store; the store commits; every
//! device seen in the committed reports (by address) is located and its
//! trajectory updated; finally a map snapshot is taken if one is due.
//! The whole run is a function of the scenario and the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, PositioningMode, ScenarioConfig};
use crate::geometry::Point2D;
use crate::metrics::{compute_metrics, EstimateRecord, Metrics};
use crate::positioning::{
    build_location_map, fingerprint_locate, fuse, median, AnchoredRow, LocationEstimate,
    LocationMap, PositioningError, SampleVector, Trajectory, ZoneTransition,
};
use crate::protocol::{encode_report, BtAddress, EncodeError};
use crate::render::{render_svg, render_text, MapSnapshot};
use crate::sensor::{to_millis, PushMessage, SensorError, SensorState};
use crate::sim::{build_world, stream_rng, zone_containing, World};
use crate::store::{csv_field, RejectReason, Store, StoreError};

pub const DEFAULT_SNAPSHOT_EVERY_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapFormat {
    #[default]
    Text,
    Svg,
    Both,
}

impl std::str::FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "svg" => Ok(Self::Svg),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown map format {other:?}")),
        }
    }
}

/// Command-line overrides for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mode: Option<PositioningMode>,
    /// Seconds between map snapshots; 0 disables them.
    pub snapshot_every_s: f64,
    pub map_format: MapFormat,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            mode: None,
            snapshot_every_s: DEFAULT_SNAPSHOT_EVERY_S,
            map_format: MapFormat::Text,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("output directory {} is not empty", .0.display())]
    OutputNotEmpty(PathBuf),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Positioning(#[from] PositioningError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t_ms: u64,
    pub text: Option<String>,
    pub svg: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    /// Raw protocol bytes of every report, in emission order.
    pub reports: Vec<Vec<u8>>,
    pub estimates: Vec<EstimateRecord>,
    pub pushes: Vec<PushMessage>,
    pub transitions: Vec<ZoneTransition>,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Metrics,
    pub detections_reported: usize,
    pub rows_committed: usize,
    pub reports_committed: usize,
    pub rejected: Vec<(String, RejectReason)>,
}

impl RunOutputs {
    /// Consecutive-duplicate-free sequence of fused zones for `addr`.
    pub fn zone_sequence(&self, addr: &BtAddress) -> Vec<Option<String>> {
        let mut seq: Vec<Option<String>> = Vec::new();
        for rec in self.estimates.iter().filter(|r| r.addr == *addr) {
            if seq.last() != Some(&rec.estimate.zone) {
                seq.push(rec.estimate.zone.clone());
            }
        }
        seq
    }
}

fn anchored_rows(world: &World, rows: Vec<crate::store::DetectionRow>) -> Vec<AnchoredRow> {
    rows.into_iter()
        .filter_map(|row| {
            let sensor = world.sensor(&row.sensor_id).ok()?;
            Some(AnchoredRow {
                anchor: sensor.pos,
                zone: sensor.zone.clone(),
                row,
            })
        })
        .collect()
}

fn locate_fingerprint(
    map: &LocationMap,
    world: &World,
    rows: &[AnchoredRow],
    t_ms: u64,
) -> Result<LocationEstimate, PositioningError> {
    let mut by_sensor: BTreeMap<&str, (Point2D, &str, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        by_sensor
            .entry(&r.row.sensor_id)
            .or_insert_with(|| (r.anchor, &r.zone, Vec::new()))
            .2
            .push(r.row.rssi_dbm);
    }
    if by_sensor.is_empty() {
        return Err(PositioningError::NoObservations);
    }
    let mut v = SampleVector {
        values: BTreeMap::new(),
        timestamp_ms: t_ms,
    };
    for (id, (_, _, vals)) in by_sensor.iter_mut() {
        v.values.insert(id.to_string(), median(vals));
    }
    let mut est = fingerprint_locate(map, &v)?.estimate;
    est.zone = match zone_containing(world.zones(), &est.pos) {
        Some(z) => Some(z.id.clone()),
        None => by_sensor
            .values()
            .map(|(a, z, _)| (a.distance(&est.pos), *z))
            .reduce(|best, cur| if cur.0 < best.0 { cur } else { best })
            .map(|(_, z)| z.to_string()),
    };
    Ok(est)
}

/// Runs the scenario against `store` without writing any other files.
pub fn simulate(
    world: &World,
    config: &ScenarioConfig,
    opts: &RunOptions,
    store: &mut Store,
) -> Result<RunOutputs, RunError> {
    let run = &config.run;
    let seed = opts.seed.unwrap_or(run.seed);
    let mode = opts.mode.unwrap_or(run.mode);
    let map = match mode {
        PositioningMode::Fingerprint => Some(build_location_map(world, run.cell_size_m)?),
        PositioningMode::Fusion => None,
    };

    let mut sensors: Vec<SensorState> = world.sensors().iter().cloned().map(SensorState::new).collect();
    let mut rngs: Vec<_> = (0..sensors.len()).map(|i| stream_rng(seed, i as u64)).collect();
    let mut trajectories: BTreeMap<BtAddress, Trajectory> = BTreeMap::new();
    let mut latest: BTreeMap<BtAddress, Point2D> = BTreeMap::new();
    let mut out = RunOutputs::default();

    let ticks = (run.duration_s / run.tick_s + 1e-9).floor() as u64;
    let mut next_snapshot = 0.0;
    for k in 0..=ticks {
        let t = k as f64 * run.tick_s;
        let t_ms = to_millis(t);

        for i in 0..sensors.len() {
            if !sensors[i].is_due(t) {
                continue;
            }
            let (next, report, pushes) = sensors[i].run_scan_cycle(world, t, &mut rngs[i])?;
            sensors[i] = next;
            let bytes = encode_report(&report)?;
            out.detections_reported += report.detections.len();
            store.ingest(&report.sensor_id, &bytes, t_ms)?;
            out.reports.push(bytes);
            for push in pushes {
                // One message per (device, zone) across all sensors.
                for other in sensors.iter_mut() {
                    if other.spec.zone == push.zone {
                        other.mark_pushed(push.addr, &push.zone);
                    }
                }
                out.pushes.push(push);
            }
        }

        let summary = store.commit()?;
        out.rows_committed += summary.rows;
        out.reports_committed += summary.committed;
        out.rejected.extend(summary.rejected);

        let from_ms = t_ms.saturating_sub(run.fusion.max_sample_age_ms);
        for addr in &summary.addrs {
            let rows = anchored_rows(world, store.query_detections(addr, from_ms, t_ms)?);
            let located = match &map {
                None => fuse(&rows, &run.fusion, world.radio(), world.zones(), t_ms),
                Some(map) => locate_fingerprint(map, world, &rows, t_ms),
            };
            let estimate = match located {
                Ok(e) => e,
                Err(PositioningError::NoObservations) => continue,
                Err(e) => return Err(e.into()),
            };
            let history = trajectories
                .remove(addr)
                .unwrap_or_else(|| Trajectory::new(*addr));
            let (history, transition) = history.track(estimate.clone())?;
            trajectories.insert(*addr, history);
            out.transitions.extend(transition);
            latest.insert(*addr, estimate.pos);
            out.estimates.push(EstimateRecord {
                addr: *addr,
                estimate,
            });
        }

        if opts.snapshot_every_s > 0.0 && t + 1e-9 >= next_snapshot {
            while next_snapshot <= t + 1e-9 {
                next_snapshot += opts.snapshot_every_s;
            }
            let snap = MapSnapshot {
                t_ms,
                truth: world.devices().iter().map(|d| (d.addr, d.position_at(t))).collect(),
                estimates: latest.iter().map(|(a, p)| (*a, *p)).collect(),
                counts: store.retrieve_counts(),
            };
            out.snapshots.push(Snapshot {
                t_ms,
                text: matches!(opts.map_format, MapFormat::Text | MapFormat::Both)
                    .then(|| render_text(world, &snap, None)),
                svg: matches!(opts.map_format, MapFormat::Svg | MapFormat::Both)
                    .then(|| render_svg(world, &snap)),
            });
        }
    }
    out.metrics = compute_metrics(&out.estimates, world, store.retrieve_counts());
    Ok(out)
}

pub fn estimates_csv(estimates: &[EstimateRecord]) -> String {
    let mut out = String::from("timestamp_ms,addr,x,y,accuracy_m,method,zone\n");
    for r in estimates {
        let e = &r.estimate;
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{},{}\n",
            e.timestamp_ms,
            r.addr,
            e.pos.x,
            e.pos.y,
            e.accuracy_m,
            e.method,
            e.zone.as_deref().unwrap_or("")
        ));
    }
    out
}

pub fn pushes_csv(pushes: &[PushMessage]) -> String {
    let mut out = String::from("timestamp_ms,sensor_id,addr,text\n");
    for p in pushes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.timestamp_ms,
            p.sensor_id,
            p.addr,
            csv_field(&p.text)
        ));
    }
    out
}

pub fn transitions_csv(transitions: &[ZoneTransition]) -> String {
    let mut out = String::from("timestamp_ms,addr,from,to\n");
    for t in transitions {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.timestamp_ms,
            t.addr,
            t.from.as_deref().unwrap_or(""),
            t.to.as_deref().unwrap_or("")
        ));
    }
    out
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io { path, source })
}

/// Validates the scenario, runs it and writes every output under
/// `out_dir`, which must be absent or empty.
pub fn run_scenario(
    config: &ScenarioConfig,
    opts: &RunOptions,
    out_dir: &Path,
) -> Result<RunOutputs, RunError> {
    let world = build_world(&config.world)?;
    if out_dir.exists() {
        let mut entries = fs::read_dir(out_dir).map_err(|source| RunError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        if entries.next().is_some() {
            return Err(RunError::OutputNotEmpty(out_dir.to_path_buf()));
        }
    }
    let maps_dir = out_dir.join("maps");
    fs::create_dir_all(&maps_dir).map_err(|source| RunError::Io {
        path: maps_dir.clone(),
        source,
    })?;
    let mut store = Store::open(out_dir.join("store"))?;
    let outputs = simulate(&world, config, opts, &mut store)?;

    write(out_dir.join("reports.log"), outputs.reports.concat())?;
    write(out_dir.join("estimates.csv"), estimates_csv(&outputs.estimates))?;
    write(out_dir.join("pushes.csv"), pushes_csv(&outputs.pushes))?;
    write(out_dir.join("transitions.csv"), transitions_csv(&outputs.transitions))?;
    write(out_dir.join("metrics.csv"), outputs.metrics.to_csv())?;
    write(out_dir.join("detections.csv"), outputs.metrics.detections_csv())?;
    for snap in &outputs.snapshots {
        if let Some(text) = &snap.text {
            write(maps_dir.join(format!("map_{:09}.txt", snap.t_ms)), text)?;
        }
        if let Some(svg) = &snap.svg {
            write(maps_dir.join(format!("map_{:09}.svg", snap.t_ms)), svg)?;
        }
    }
    Ok(outputs)
}
