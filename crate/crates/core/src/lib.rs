//! Bluetooth mobile-guide simulator and positioning engine.
//!
//! Sensors run periodic inquiry scans over a simulated radio channel and
//! send text reports to a server. The server stages, decodes and stores
//! the detections, estimates device positions by trilateration,
//! fingerprinting or proximity, tracks devices across zones, and pushes a
//! zone message to each device that accepts it.

pub mod config;
pub mod geometry;
pub mod metrics;
pub mod positioning;
pub mod protocol;
pub mod render;
pub mod runner;
pub mod sensor;
pub mod sim;
pub mod store;

pub use geometry::{Point2D, Rect};
pub use protocol::BtAddress;
