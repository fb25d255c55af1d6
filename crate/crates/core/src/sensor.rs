//! Sensor node: periodic inquiry scans, report framing and push messages.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::protocol::{BtAddress, ScanReport};
use crate::sim::{SensorSpec, SimError, World};

/// A text message pushed to a device that accepted the connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushMessage {
    pub sensor_id: String,
    pub addr: BtAddress,
    pub zone: String,
    pub text: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("scan not due: now {now}s, next scan at {next_scan_at}s")]
    NotDue { now: f64, next_scan_at: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Mutable per-sensor state. Owned by one logical actor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub spec: SensorSpec,
    pub next_scan_at: f64,
    /// Sequence number of the last completed scan; 0 before the first.
    pub seq: u64,
    /// (device, zone) pairs already messaged.
    pub pushed: BTreeSet<(BtAddress, String)>,
}

/// Milliseconds for a simulation time in seconds, rounded to nearest.
pub fn to_millis(t: f64) -> u64 {
    (t * 1000.0).round().max(0.0) as u64
}

impl SensorState {
    /// Fresh state with the first scan due at t = 0.
    pub fn new(spec: SensorSpec) -> Self {
        Self {
            spec,
            next_scan_at: 0.0,
            seq: 0,
            pushed: BTreeSet::new(),
        }
    }

    pub fn is_due(&self, now: f64) -> bool {
        now >= self.next_scan_at
    }

    pub fn schedule_next_scan(&self, now: f64) -> f64 {
        now + self.spec.scan_interval_s
    }

    /// Records that `addr` was already messaged for `zone`, e.g. by
    /// another sensor covering the same zone.
    pub fn mark_pushed(&mut self, addr: BtAddress, zone: &str) {
        self.pushed.insert((addr, zone.to_string()));
    }

    /// Runs one inquiry scan at time `t` and returns the new state, the
    /// report to send and the push messages for newly seen devices.
    pub fn run_scan_cycle<R: Rng + ?Sized>(
        &self,
        world: &World,
        t: f64,
        rng: &mut R,
    ) -> Result<(SensorState, ScanReport, Vec<PushMessage>), SensorError> {
        if !self.is_due(t) {
            return Err(SensorError::NotDue {
                now: t,
                next_scan_at: self.next_scan_at,
            });
        }
        let detections = world.sample_inquiry(&self.spec.id, t, rng)?;
        let timestamp_ms = to_millis(t);
        let mut next = self.clone();
        next.seq += 1;
        next.next_scan_at = self.schedule_next_scan(t);

        let text = self.spec.render_message();
        let mut pushes = Vec::new();
        for det in &detections {
            let device = world.device(&det.addr)?;
            if !device.accepts_push {
                continue;
            }
            if next.pushed.insert((det.addr, self.spec.zone.clone())) {
                pushes.push(PushMessage {
                    sensor_id: self.spec.id.clone(),
                    addr: det.addr,
                    zone: self.spec.zone.clone(),
                    text: text.clone(),
                    timestamp_ms,
                });
            }
        }
        let report = ScanReport {
            sensor_id: self.spec.id.clone(),
            seq: next.seq,
            timestamp_ms,
            detections,
        };
        Ok((next, report, pushes))
    }
}
