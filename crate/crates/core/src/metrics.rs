//! Localization error against simulated ground truth.

use std::collections::BTreeMap;

use crate::positioning::LocationEstimate;
use crate::protocol::BtAddress;
use crate::sim::World;

/// An estimate as logged by the runner.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub addr: BtAddress,
    pub estimate: LocationEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorSummary {
    pub estimates: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub p95_error_m: f64,
    /// Fraction of estimates whose zone matches the true zone.
    pub zone_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub per_device: BTreeMap<BtAddress, ErrorSummary>,
    pub overall: ErrorSummary,
    pub detection_counts: BTreeMap<String, usize>,
}

/// Nearest-rank percentile of sorted data, `q` in (0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(errors: &mut [f64], zone_hits: usize) -> ErrorSummary {
    if errors.is_empty() {
        return ErrorSummary::default();
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        (errors[n / 2 - 1] + errors[n / 2]) / 2.0
    };
    ErrorSummary {
        estimates: n,
        mean_error_m: errors.iter().sum::<f64>() / n as f64,
        median_error_m: median,
        p95_error_m: percentile(errors, 0.95),
        zone_accuracy: zone_hits as f64 / n as f64,
    }
}

/// Position error of each estimate is its distance to the device's true
/// position at the estimate timestamp; the true zone is the zone that
/// contains that position.
pub fn compute_metrics(
    estimates: &[EstimateRecord],
    world: &World,
    detection_counts: BTreeMap<String, usize>,
) -> Metrics {
    let mut per_device: BTreeMap<BtAddress, (Vec<f64>, usize)> = BTreeMap::new();
    let mut all = Vec::with_capacity(estimates.len());
    let mut all_hits = 0;
    for rec in estimates {
        let Ok(device) = world.device(&rec.addr) else {
            continue;
        };
        let truth = device.position_at(rec.estimate.timestamp_ms as f64 / 1000.0);
        let error = rec.estimate.pos.distance(&truth);
        let true_zone = world.zone_at(&truth).map(|z| z.id.as_str());
        let hit = usize::from(rec.estimate.zone.as_deref() == true_zone);
        let entry = per_device.entry(rec.addr).or_default();
        entry.0.push(error);
        entry.1 += hit;
        all.push(error);
        all_hits += hit;
    }
    Metrics {
        per_device: per_device
            .into_iter()
            .map(|(addr, (mut errs, hits))| (addr, summarize(&mut errs, hits)))
            .collect(),
        overall: summarize(&mut all, all_hits),
        detection_counts,
    }
}

impl Metrics {
    /// CSV with one row per device and a final `ALL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("addr,estimates,mean_error_m,median_error_m,p95_error_m,zone_accuracy\n");
        let rows = self
            .per_device
            .iter()
            .map(|(a, s)| (a.to_string(), s))
            .chain(std::iter::once(("ALL".to_string(), &self.overall)));
        for (label, s) in rows {
            out.push_str(&format!(
                "{label},{},{:.6},{:.6},{:.6},{:.6}\n",
                s.estimates, s.mean_error_m, s.median_error_m, s.p95_error_m, s.zone_accuracy
            ));
        }
        out
    }

    pub fn detections_csv(&self) -> String {
        let mut out = String::from("sensor_id,rows\n");
        for (id, n) in &self.detection_counts {
            out.push_str(&format!("{id},{n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::geometry::{Point2D, Rect};
    use crate::positioning::Method;
    use crate::sim::{build_world, DeviceSpec, Waypoint, ZoneSpec};

    const DEV: BtAddress = BtAddress([7; 6]);

    fn world() -> World {
        build_world(&WorldConfig {
            bounds: Some(Rect::new(0.0, 0.0, 20.0, 10.0)),
            zones: vec![
                ZoneSpec { id: "A".into(), rect: Rect::new(0.0, 0.0, 10.0, 10.0) },
                ZoneSpec { id: "B".into(), rect: Rect::new(10.0, 0.0, 20.0, 10.0) },
            ],
            devices: vec![DeviceSpec {
                addr: DEV,
                friendly_name: "p".into(),
                discoverable: true,
                accepts_push: true,
                trajectory: vec![Waypoint::new(0.0, 2.0, 5.0), Waypoint::new(10.0, 12.0, 5.0)],
            }],
            ..Default::default()
        })
        .unwrap()
    }

    fn rec(x: f64, y: f64, t_ms: u64, zone: &str) -> EstimateRecord {
        EstimateRecord {
            addr: DEV,
            estimate: LocationEstimate {
                pos: Point2D::new(x, y),
                accuracy_m: 0.0,
                method: Method::Trilateration,
                timestamp_ms: t_ms,
                zone: Some(zone.into()),
            },
        }
    }

    #[test]
    fn exact_estimates() {
        let m = compute_metrics(&[rec(2.0, 5.0, 0, "A"), rec(7.0, 5.0, 5000, "A"), rec(12.0, 5.0, 10000, "B")], &world(), BTreeMap::new());
        let s = m.per_device[&DEV];
        assert_eq!(s.estimates, 3);
        assert_eq!((s.mean_error_m, s.median_error_m, s.p95_error_m), (0.0, 0.0, 0.0));
        assert_eq!(s.zone_accuracy, 1.0);
        assert_eq!(m.overall, s);
    }

    #[test]
    fn single_estimate_three_meters_off() {
        let m = compute_metrics(&[rec(5.0, 5.0, 0, "A")], &world(), BTreeMap::new());
        let s = m.overall;
        assert_eq!((s.mean_error_m, s.median_error_m, s.p95_error_m), (3.0, 3.0, 3.0));
    }

    #[test]
    fn wrong_zone_counts_against_accuracy() {
        // Truth at t=9 s is (11, 5), inside B.
        let m = compute_metrics(&[rec(9.0, 5.0, 9000, "A"), rec(2.0, 5.0, 0, "A")], &world(), BTreeMap::new());
        assert_eq!(m.overall.zone_accuracy, 0.5);
    }

    #[test]
    fn percentile_nearest_rank() {
        let data: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&data, 0.95), 19.0);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
    }

    #[test]
    fn csv_shapes() {
        let m = compute_metrics(&[rec(5.0, 5.0, 0, "A")], &world(), BTreeMap::from([("S1".to_string(), 4)]));
        assert_eq!(
            m.to_csv(),
            "addr,estimates,mean_error_m,median_error_m,p95_error_m,zone_accuracy\n\
             07:07:07:07:07:07,1,3.000000,3.000000,3.000000,1.000000\n\
             ALL,1,3.000000,3.000000,3.000000,1.000000\n"
        );
        assert_eq!(m.detections_csv(), "sensor_id,rows\nS1,4\n");
    }
}
