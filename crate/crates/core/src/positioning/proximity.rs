use crate::geometry::Point2D;
use crate::sim::RadioParams;

use super::{estimate_distance, LocationEstimate, Method, PositioningError};

#[derive(Debug, Clone, PartialEq)]
pub struct ProximitySample {
    pub sensor_id: String,
    pub anchor: Point2D,
    pub zone: String,
    pub rssi_dbm: f64,
}

/// Places the device at the sensor that hears it loudest. Ties go to the
/// lexicographically smallest sensor id.
pub fn proximity_locate(
    samples: &[ProximitySample],
    radio: &RadioParams,
    timestamp_ms: u64,
) -> Result<LocationEstimate, PositioningError> {
    let best = samples
        .iter()
        .filter(|s| s.rssi_dbm.is_finite())
        .reduce(|best, s| {
            if s.rssi_dbm > best.rssi_dbm
                || (s.rssi_dbm == best.rssi_dbm && s.sensor_id < best.sensor_id)
            {
                s
            } else {
                best
            }
        })
        .ok_or(PositioningError::NoObservations)?;
    Ok(LocationEstimate {
        pos: best.anchor,
        accuracy_m: estimate_distance(best.rssi_dbm, radio)?,
        method: Method::Proximity,
        timestamp_ms,
        zone: Some(best.zone.clone()),
    })
}
