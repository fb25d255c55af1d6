//! Simulated environment: sensors, devices, zones and the radio channel.
//!
//! The channel is log-distance path loss with additive Gaussian
//! shadowing. Every random draw comes from a caller-supplied stream, so a
//! world plus a seed fully determines every observation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{ConfigError, WorldConfig};
use crate::geometry::{Point2D, Rect};
use crate::protocol::{self, BtAddress, Detection, MAX_RSSI_DBM, MIN_RSSI_DBM};

/// Random stream type used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Independent stream `stream` derived from a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// RSSI at the reference distance, dBm.
    pub p0_dbm: f64,
    /// Reference distance, meters.
    pub d0_m: f64,
    pub path_loss_exponent: f64,
    /// Shadowing standard deviation, dB.
    pub noise_sigma_db: f64,
    /// Weakest RSSI still reported by a scan (inclusive).
    pub detect_threshold_dbm: f64,
    /// Probability that an in-range device answers a given inquiry.
    pub detect_prob: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            p0_dbm: -40.0,
            d0_m: 1.0,
            path_loss_exponent: 2.0,
            noise_sigma_db: 0.0,
            detect_threshold_dbm: -60.0,
            detect_prob: 1.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.p0_dbm.is_finite() {
            return Err("p0_dbm must be finite".into());
        }
        if !(self.d0_m.is_finite() && self.d0_m > 0.0) {
            return Err("d0_m must be > 0".into());
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent > 0.0) {
            return Err("path_loss_exponent must be > 0".into());
        }
        if !(self.noise_sigma_db.is_finite() && self.noise_sigma_db >= 0.0) {
            return Err("noise_sigma_db must be >= 0".into());
        }
        if !self.detect_threshold_dbm.is_finite() {
            return Err("detect_threshold_dbm must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return Err("detect_prob must be in [0, 1]".into());
        }
        Ok(())
    }

    /// Noiseless RSSI at `distance_m`; distances below `d0_m` are clamped.
    pub fn mean_rssi(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.d0_m);
        self.p0_dbm - 10.0 * self.path_loss_exponent * (d / self.d0_m).log10()
    }

    /// Distance at which the noiseless RSSI reaches the detection threshold.
    pub fn nominal_range_m(&self) -> f64 {
        self.d0_m
            * 10f64.powf((self.p0_dbm - self.detect_threshold_dbm) / (10.0 * self.path_loss_exponent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub pos: Point2D,
}

impl Waypoint {
    pub const fn new(t: f64, x: f64, y: f64) -> Self {
        Self {
            t,
            pos: Point2D::new(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub addr: BtAddress,
    pub friendly_name: String,
    pub discoverable: bool,
    pub accepts_push: bool,
    pub trajectory: Vec<Waypoint>,
}

impl DeviceSpec {
    /// Piecewise-linear position along the trajectory, holding the end
    /// points outside the scripted time span.
    pub fn position_at(&self, t: f64) -> Point2D {
        let wps = &self.trajectory;
        let after = wps.partition_point(|w| w.t <= t);
        if after == 0 {
            return wps[0].pos;
        }
        if after == wps.len() {
            return wps[wps.len() - 1].pos;
        }
        let (a, b) = (&wps[after - 1], &wps[after]);
        a.pos.lerp(&b.pos, (t - a.t) / (b.t - a.t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub id: String,
    pub pos: Point2D,
    pub zone: String,
    pub scan_interval_s: f64,
    /// Push text with `{zone}` and `{sensor}` placeholders.
    pub message_template: String,
}

impl SensorSpec {
    pub fn render_message(&self) -> String {
        self.message_template
            .replace("{zone}", &self.zone)
            .replace("{sensor}", &self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSpec {
    pub id: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("unknown device {0}")]
    UnknownDevice(BtAddress),
}

/// Validated, immutable scene. Sensors are kept in id order and devices
/// in address order.
#[derive(Debug, Clone)]
pub struct World {
    sensors: Vec<SensorSpec>,
    devices: Vec<DeviceSpec>,
    zones: Vec<ZoneSpec>,
    radio: RadioParams,
    bounds: Rect,
    sensor_index: HashMap<String, usize>,
    device_index: HashMap<BtAddress, usize>,
}

fn is_token(s: &str) -> bool {
    protocol::is_valid_sensor_id(s)
}

pub fn build_world(config: &WorldConfig) -> Result<World, ConfigError> {
    config
        .radio
        .validate()
        .map_err(|m| ConfigError::new("radio", m))?;

    let bounds = match config.bounds {
        Some(b) => b,
        None => config
            .zones
            .iter()
            .map(|z| z.rect)
            .reduce(|a, b| {
                Rect::new(
                    a.min.x.min(b.min.x),
                    a.min.y.min(b.min.y),
                    a.max.x.max(b.max.x),
                    a.max.y.max(b.max.y),
                )
            })
            .ok_or_else(|| ConfigError::new("run.bounds", "bounds required when no zones are given"))?,
    };
    if !bounds.is_valid() {
        return Err(ConfigError::new("run.bounds", "min must be < max on both axes"));
    }

    for (i, zone) in config.zones.iter().enumerate() {
        if !is_token(&zone.id) {
            return Err(ConfigError::new(format!("zone[{i}].id"), format!("invalid zone id {:?}", zone.id)));
        }
        if !zone.rect.is_valid() {
            return Err(ConfigError::new(format!("zone[{i}].rect"), "min must be < max on both axes"));
        }
        for (j, other) in config.zones[..i].iter().enumerate() {
            if other.id == zone.id {
                return Err(ConfigError::new(format!("zone[{i}].id"), format!("duplicate zone id {:?}", zone.id)));
            }
            if other.rect.overlaps(&zone.rect) {
                return Err(ConfigError::new(
                    format!("zone[{i}].rect"),
                    format!("zone {:?} overlaps zone[{j}] {:?}", zone.id, other.id),
                ));
            }
        }
    }

    let mut sensor_index = HashMap::new();
    for (i, s) in config.sensors.iter().enumerate() {
        if !is_token(&s.id) {
            return Err(ConfigError::new(format!("sensor[{i}].id"), format!("invalid sensor id {:?}", s.id)));
        }
        if sensor_index.insert(s.id.clone(), i).is_some() {
            return Err(ConfigError::new(format!("sensor[{i}].id"), format!("duplicate sensor id {:?}", s.id)));
        }
        if !s.pos.is_finite() || !bounds.contains(&s.pos) {
            return Err(ConfigError::new(format!("sensor[{i}].pos"), "position outside bounds"));
        }
        if !config.zones.iter().any(|z| z.id == s.zone) {
            return Err(ConfigError::new(format!("sensor[{i}].zone"), format!("unknown zone {:?}", s.zone)));
        }
        if !(s.scan_interval_s.is_finite() && s.scan_interval_s > 0.0) {
            return Err(ConfigError::new(format!("sensor[{i}].scan_interval_s"), "scan interval must be > 0"));
        }
        if s.render_message().is_empty() {
            return Err(ConfigError::new(format!("sensor[{i}].message"), "message template renders empty"));
        }
    }

    let mut device_index = HashMap::new();
    for (i, d) in config.devices.iter().enumerate() {
        if device_index.insert(d.addr, i).is_some() {
            return Err(ConfigError::new(format!("device[{i}].addr"), format!("duplicate device address {}", d.addr)));
        }
        protocol::validate_friendly_name(&d.friendly_name)
            .map_err(|e| ConfigError::new(format!("device[{i}].name"), format!("invalid friendly name: {e}")))?;
        if d.trajectory.is_empty() {
            return Err(ConfigError::new(format!("device[{i}].wp"), "trajectory needs at least one waypoint"));
        }
        for (k, wp) in d.trajectory.iter().enumerate() {
            let path = format!("device[{i}].wp[{k}]");
            if !wp.t.is_finite() {
                return Err(ConfigError::new(path, "waypoint time must be finite"));
            }
            if k == 0 && wp.t != 0.0 {
                return Err(ConfigError::new(path, "first waypoint must be at t = 0"));
            }
            if k > 0 && wp.t <= d.trajectory[k - 1].t {
                return Err(ConfigError::new(path, "non-increasing waypoint time"));
            }
            if !wp.pos.is_finite() || !bounds.contains(&wp.pos) {
                return Err(ConfigError::new(path, "waypoint outside bounds"));
            }
        }
    }

    let mut sensors = config.sensors.clone();
    sensors.sort_by(|a, b| a.id.cmp(&b.id));
    let mut devices = config.devices.clone();
    devices.sort_by_key(|d| d.addr);
    let sensor_index = sensors.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
    let device_index = devices.iter().enumerate().map(|(i, d)| (d.addr, i)).collect();

    Ok(World {
        sensors,
        devices,
        zones: config.zones.clone(),
        radio: config.radio,
        bounds,
        sensor_index,
        device_index,
    })
}

impl World {
    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    pub fn zones(&self) -> &[ZoneSpec] {
        &self.zones
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn sensor(&self, id: &str) -> Result<&SensorSpec, SimError> {
        self.sensor_index
            .get(id)
            .map(|&i| &self.sensors[i])
            .ok_or_else(|| SimError::UnknownSensor(id.to_string()))
    }

    pub fn device(&self, addr: &BtAddress) -> Result<&DeviceSpec, SimError> {
        self.device_index
            .get(addr)
            .map(|&i| &self.devices[i])
            .ok_or(SimError::UnknownDevice(*addr))
    }

    /// Zone whose rectangle contains `p` (half-open on the max edges).
    pub fn zone_at(&self, p: &Point2D) -> Option<&ZoneSpec> {
        zone_containing(&self.zones, p)
    }

    /// Ground-truth position of a device at time `t` (seconds).
    pub fn device_position(&self, addr: &BtAddress, t: f64) -> Result<Point2D, SimError> {
        Ok(self.device(addr)?.position_at(t))
    }

    /// One RSSI observation of `addr` by `sensor` at time `t`, or `None`
    /// when the device does not answer the inquiry.
    ///
    /// Always consumes one normal and one uniform draw from `rng`, so the
    /// stream position does not depend on the outcome.
    pub fn rssi_at<R: Rng + ?Sized>(
        &self,
        sensor: &str,
        addr: &BtAddress,
        t: f64,
        rng: &mut R,
    ) -> Result<Option<f64>, SimError> {
        let sensor = self.sensor(sensor)?;
        let device = self.device(addr)?;
        Ok(self.observe(sensor, device, t, rng))
    }

    fn observe<R: Rng + ?Sized>(
        &self,
        sensor: &SensorSpec,
        device: &DeviceSpec,
        t: f64,
        rng: &mut R,
    ) -> Option<f64> {
        let noise: f64 = rng.sample(StandardNormal);
        let trial: f64 = rng.random();
        if !device.discoverable {
            return None;
        }
        let d = sensor.pos.distance(&device.position_at(t));
        let value = self.radio.mean_rssi(d) + self.radio.noise_sigma_db * noise;
        if value < self.radio.detect_threshold_dbm || trial >= self.radio.detect_prob {
            return None;
        }
        Some(value)
    }

    /// Inquiry scan by `sensor` at time `t`: one detection per answering
    /// device, in address order. RSSI values are clipped to [-120, 0] dBm.
    pub fn sample_inquiry<R: Rng + ?Sized>(
        &self,
        sensor: &str,
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<Detection>, SimError> {
        let sensor = self.sensor(sensor)?;
        Ok(self
            .devices
            .iter()
            .filter_map(|device| {
                self.observe(sensor, device, t, rng).map(|rssi| Detection {
                    addr: device.addr,
                    rssi_dbm: rssi.clamp(MIN_RSSI_DBM, MAX_RSSI_DBM),
                    friendly_name: device.friendly_name.clone(),
                })
            })
            .collect())
    }
}

pub fn zone_containing<'a>(zones: &'a [ZoneSpec], p: &Point2D) -> Option<&'a ZoneSpec> {
    zones.iter().find(|z| z.rect.contains_half_open(p))
}
