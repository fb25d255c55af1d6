//! Combines the detections of one device into a single position fix.

use std::collections::BTreeMap;

use crate::geometry::Point2D;
use crate::sim::{zone_containing, RadioParams, ZoneSpec};
use crate::store::DetectionRow;

use super::{
    estimate_distance, median, proximity_locate, trilaterate_with, DistanceEstimate,
    LocationEstimate, Method, PositioningError, ProximitySample, DEFAULT_COLLINEARITY_TOL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Distinct sensors needed before trilateration is attempted.
    pub min_anchors: usize,
    /// Rows older than this relative to the fusion time are ignored.
    pub max_sample_age_ms: u64,
    pub collinearity_tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            min_anchors: 3,
            max_sample_age_ms: 15_000,
            collinearity_tol: DEFAULT_COLLINEARITY_TOL,
        }
    }
}

/// A stored detection together with the detecting sensor's position and
/// zone.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredRow {
    pub row: DetectionRow,
    pub anchor: Point2D,
    pub zone: String,
}

struct SensorAggregate<'a> {
    anchor: Point2D,
    zone: &'a str,
    rssi: Vec<f64>,
}

/// Fuses the fresh rows of one device at time `t_ms`.
///
/// Rows are aggregated to one median RSSI per sensor. With at least
/// `min_anchors` sensors and usable geometry the result is a
/// trilateration fix, otherwise the strongest sensor's position.
pub fn fuse(
    rows: &[AnchoredRow],
    cfg: &FusionConfig,
    radio: &RadioParams,
    zones: &[ZoneSpec],
    t_ms: u64,
) -> Result<LocationEstimate, PositioningError> {
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.row.addr != first.row.addr) {
            return Err(PositioningError::MixedDevices);
        }
    }
    let oldest = t_ms.saturating_sub(cfg.max_sample_age_ms);
    let mut per_sensor: BTreeMap<&str, SensorAggregate> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| (oldest..=t_ms).contains(&r.row.timestamp_ms))
    {
        per_sensor
            .entry(r.row.sensor_id.as_str())
            .or_insert_with(|| SensorAggregate {
                anchor: r.anchor,
                zone: &r.zone,
                rssi: Vec::new(),
            })
            .rssi
            .push(r.row.rssi_dbm);
    }
    if per_sensor.is_empty() {
        return Err(PositioningError::NoObservations);
    }
    let samples: Vec<ProximitySample> = per_sensor
        .iter_mut()
        .map(|(id, agg)| ProximitySample {
            sensor_id: id.to_string(),
            anchor: agg.anchor,
            zone: agg.zone.to_string(),
            rssi_dbm: median(&mut agg.rssi),
        })
        .collect();

    let mut estimate = None;
    if samples.len() >= cfg.min_anchors.max(3) {
        let anchors = samples
            .iter()
            .map(|s| {
                Ok(DistanceEstimate::new(
                    s.sensor_id.clone(),
                    s.anchor,
                    estimate_distance(s.rssi_dbm, radio)?,
                ))
            })
            .collect::<Result<Vec<_>, PositioningError>>()?;
        match trilaterate_with(&anchors, cfg.collinearity_tol) {
            Ok(fix) => {
                estimate = Some(LocationEstimate {
                    pos: fix.pos,
                    accuracy_m: fix.rms_residual_m,
                    method: Method::Trilateration,
                    timestamp_ms: t_ms,
                    zone: None,
                })
            }
            Err(PositioningError::DegenerateGeometry { .. } | PositioningError::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let mut estimate = match estimate {
        Some(e) => e,
        None => proximity_locate(&samples, radio, t_ms)?,
    };
    estimate.zone = Some(match zone_containing(zones, &estimate.pos) {
        Some(z) => z.id.clone(),
        None => nearest_zone(&samples, &estimate.pos),
    });
    Ok(estimate)
}

/// Zone of the sensor closest to `p`; ties to the smaller sensor id
/// (samples are in id order).
fn nearest_zone(samples: &[ProximitySample], p: &Point2D) -> String {
    samples
        .iter()
        .map(|s| (s.anchor.distance(p), s))
        .reduce(|best, cur| if cur.0 < best.0 { cur } else { best })
        .map(|(_, s)| s.zone.clone())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::protocol::BtAddress;

    const DEV: BtAddress = BtAddress([1, 2, 3, 4, 5, 6]);

    fn row(sensor: &str, anchor: (f64, f64), zone: &str, ts: u64, rssi: f64) -> AnchoredRow {
        AnchoredRow {
            row: DetectionRow {
                sensor_id: sensor.into(),
                seq: 1,
                timestamp_ms: ts,
                addr: DEV,
                rssi_dbm: rssi,
                friendly_name: "phone".into(),
            },
            anchor: Point2D::new(anchor.0, anchor.1),
            zone: zone.into(),
        }
    }

    fn zones() -> Vec<ZoneSpec> {
        vec![
            ZoneSpec { id: "A".into(), rect: Rect::new(0.0, 0.0, 5.0, 10.0) },
            ZoneSpec { id: "B".into(), rect: Rect::new(5.0, 0.0, 10.0, 10.0) },
        ]
    }

    fn noiseless_rows(truth: Point2D, ts: u64) -> Vec<AnchoredRow> {
        let radio = RadioParams::default();
        [("S1", (0.0, 0.0), "A"), ("S2", (10.0, 0.0), "B"), ("S3", (0.0, 10.0), "A")]
            .iter()
            .map(|&(id, a, z)| {
                let d = Point2D::new(a.0, a.1).distance(&truth);
                row(id, a, z, ts, radio.mean_rssi(d))
            })
            .collect()
    }

    #[test]
    fn three_sensors_trilaterate_exactly() {
        let truth = Point2D::new(6.0, 3.5);
        let est = fuse(&noiseless_rows(truth, 1000), &FusionConfig::default(), &RadioParams::default(), &zones(), 1000).unwrap();
        assert_eq!(est.method, Method::Trilateration);
        assert!(est.pos.distance(&truth) < 1e-6);
        assert_eq!(est.zone.as_deref(), Some("B"));
        assert_eq!(est.timestamp_ms, 1000);
    }

    #[test]
    fn single_sensor_falls_back_to_proximity() {
        let rows = vec![row("S2", (10.0, 0.0), "B", 0, -55.0)];
        let est = fuse(&rows, &FusionConfig::default(), &RadioParams::default(), &zones(), 0).unwrap();
        assert_eq!(est.method, Method::Proximity);
        assert_eq!(est.pos, Point2D::new(10.0, 0.0));
        // (10, 0) is outside every half-open zone; nearest sensor is S2.
        assert_eq!(est.zone.as_deref(), Some("B"));
    }

    #[test]
    fn stale_rows_ignored() {
        let rows = noiseless_rows(Point2D::new(2.0, 2.0), 1000);
        let cfg = FusionConfig::default();
        assert_eq!(
            fuse(&rows, &cfg, &RadioParams::default(), &zones(), 1000 + cfg.max_sample_age_ms + 1),
            Err(PositioningError::NoObservations)
        );
        assert!(fuse(&rows, &cfg, &RadioParams::default(), &zones(), 1000 + cfg.max_sample_age_ms).is_ok());
        assert_eq!(
            fuse(&[], &cfg, &RadioParams::default(), &zones(), 0),
            Err(PositioningError::NoObservations)
        );
    }

    #[test]
    fn collinear_sensors_fall_back() {
        let rows = vec![
            row("S1", (0.0, 5.0), "A", 0, -50.0),
            row("S2", (4.0, 5.0), "A", 0, -45.0),
            row("S3", (8.0, 5.0), "B", 0, -52.0),
        ];
        let est = fuse(&rows, &FusionConfig::default(), &RadioParams::default(), &zones(), 0).unwrap();
        assert_eq!(est.method, Method::Proximity);
        assert_eq!(est.pos, Point2D::new(4.0, 5.0));
    }

    #[test]
    fn median_per_sensor_resists_outlier() {
        let truth = Point2D::new(3.0, 4.0);
        let mut rows = noiseless_rows(truth, 1000);
        rows.extend(noiseless_rows(truth, 2000));
        let mut outlier = rows[0].clone();
        outlier.row.timestamp_ms = 3000;
        outlier.row.rssi_dbm = -90.0;
        rows.push(outlier);
        rows.push(noiseless_rows(truth, 4000).remove(0));
        let est = fuse(&rows, &FusionConfig::default(), &RadioParams::default(), &zones(), 4000).unwrap();
        assert!(est.pos.distance(&truth) < 1e-6);
    }

    #[test]
    fn mixed_devices_rejected() {
        let mut rows = noiseless_rows(Point2D::new(1.0, 1.0), 0);
        rows[1].row.addr = BtAddress([9; 6]);
        assert_eq!(
            fuse(&rows, &FusionConfig::default(), &RadioParams::default(), &zones(), 0),
            Err(PositioningError::MixedDevices)
        );
    }
}
