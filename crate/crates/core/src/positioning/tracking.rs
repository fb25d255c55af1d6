use crate::protocol::BtAddress;

use super::{LocationEstimate, PositioningError};

/// Motion between two consecutive estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub speed_mps: f64,
    /// Degrees counter-clockwise from +x, in [0, 360).
    pub course_deg: f64,
}

/// Emitted when consecutive estimates disagree on the zone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneTransition {
    pub addr: BtAddress,
    pub timestamp_ms: u64,
    pub from: Option<String>,
    pub to: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub addr: BtAddress,
    estimates: Vec<LocationEstimate>,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn new(addr: BtAddress) -> Self {
        Self {
            addr,
            estimates: Vec::new(),
            segments: Vec::new(),
        }
    }

    pub fn estimates(&self) -> &[LocationEstimate] {
        &self.estimates
    }

    /// `segments()[i]` joins `estimates()[i]` and `estimates()[i + 1]`.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn last(&self) -> Option<&LocationEstimate> {
        self.estimates.last()
    }

    /// Appends `e`, returning the extended trajectory and the zone
    /// transition it caused, if any.
    pub fn track(
        mut self,
        e: LocationEstimate,
    ) -> Result<(Trajectory, Option<ZoneTransition>), PositioningError> {
        let mut transition = None;
        if let Some(prev) = self.estimates.last() {
            if e.timestamp_ms <= prev.timestamp_ms {
                return Err(PositioningError::NonMonotoneTimestamp {
                    last: prev.timestamp_ms,
                    got: e.timestamp_ms,
                });
            }
            let dt = (e.timestamp_ms - prev.timestamp_ms) as f64 / 1000.0;
            let (dx, dy) = (e.pos.x - prev.pos.x, e.pos.y - prev.pos.y);
            let course = dy.atan2(dx).to_degrees();
            self.segments.push(Segment {
                speed_mps: dx.hypot(dy) / dt,
                course_deg: if course < 0.0 { course + 360.0 } else { course },
            });
            if prev.zone != e.zone {
                transition = Some(ZoneTransition {
                    addr: self.addr,
                    timestamp_ms: e.timestamp_ms,
                    from: prev.zone.clone(),
                    to: e.zone.clone(),
                });
            }
        }
        self.estimates.push(e);
        Ok((self, transition))
    }
}
