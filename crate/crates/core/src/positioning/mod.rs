//! Location computation: RSSI to distance, trilateration, proximity,
//! fingerprint matching, fusion and trajectory tracking.

mod distance;
mod fingerprint;
mod fusion;
mod proximity;
mod tracking;
mod trilateration;

use std::fmt;

use thiserror::Error;

use crate::geometry::Point2D;

pub use distance::estimate_distance;
pub use fingerprint::{
    build_location_map, fingerprint_locate, FingerprintMatch, LocationMap, MapCell, MapParseError,
    SampleVector, MAP_FLOOR_DBM,
};
pub use fusion::{fuse, AnchoredRow, FusionConfig};
pub use proximity::{proximity_locate, ProximitySample};
pub use tracking::{Segment, Trajectory, ZoneTransition};
pub use trilateration::{
    smallest_singular_value, trilaterate, trilaterate_with, DistanceEstimate, Trilateration,
    DEFAULT_COLLINEARITY_TOL, MAX_ITERATIONS, STEP_TOLERANCE_M,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Trilateration,
    Proximity,
    Fingerprint,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Trilateration => "Trilateration",
            Method::Proximity => "Proximity",
            Method::Fingerprint => "Fingerprint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Trilateration" => Ok(Method::Trilateration),
            "Proximity" => Ok(Method::Proximity),
            "Fingerprint" => Ok(Method::Fingerprint),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// A position fix for one device.
///
/// `accuracy_m` depends on the method: RMS range residual for
/// trilateration, estimated distance to the sensor for proximity, half the
/// cell diagonal for fingerprinting.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEstimate {
    pub pos: Point2D,
    pub accuracy_m: f64,
    pub method: Method,
    pub timestamp_ms: u64,
    pub zone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PositioningError {
    #[error("invalid radio parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 3 anchors, got {found}")]
    InsufficientAnchors { found: usize },
    #[error("anchor {0:?} given more than once")]
    DuplicateAnchor(String),
    #[error("invalid range measurement from anchor {0:?}")]
    InvalidMeasurement(String),
    #[error("anchors are collinear (smallest singular value {smallest_singular_value:e})")]
    DegenerateGeometry { smallest_singular_value: f64 },
    #[error("solver did not converge (last step {last_step_m:e} m)")]
    NoConvergence { last_step_m: f64 },
    #[error("no usable observations")]
    NoObservations,
    #[error("rows belong to more than one device")]
    MixedDevices,
    #[error("location map is empty")]
    EmptyMap,
    #[error("invalid cell size {0}")]
    InvalidCellSize(f64),
    #[error("timestamp {got} ms is not after {last} ms")]
    NonMonotoneTimestamp { last: u64, got: u64 },
}

/// Median of a non-empty slice; the mean of the two middle values for
/// even lengths. Reorders the slice.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
