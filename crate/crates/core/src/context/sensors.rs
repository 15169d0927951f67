//! Sensor readings as delivered by the collection device.

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Geo,
    Accelerometer,
    AppUsage,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Geo, SensorKind::Accelerometer, SensorKind::AppUsage];

    pub fn as_str(&self) -> &'static str {
        match self {
            SensorKind::Geo => "geo",
            SensorKind::Accelerometer => "accelerometer",
            SensorKind::AppUsage => "app_usage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorValue {
    Geo { latitude: f64, longitude: f64 },
    Accelerometer { x: f64, y: f64, z: f64 },
    AppUsage { app: String, seconds: f64 },
}

impl SensorValue {
    pub fn kind(&self) -> SensorKind {
        match self {
            SensorValue::Geo { .. } => SensorKind::Geo,
            SensorValue::Accelerometer { .. } => SensorKind::Accelerometer,
            SensorValue::AppUsage { .. } => SensorKind::AppUsage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub at: Timestamp,
    pub value: SensorValue,
}

impl SensorReading {
    pub fn geo(at: Timestamp, latitude: f64, longitude: f64) -> Self {
        Self { at, value: SensorValue::Geo { latitude, longitude } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBatch {
    pub participant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_id: Option<String>,
    pub readings: Vec<SensorReading>,
}

impl SensorBatch {
    pub fn new(participant: &str, readings: Vec<SensorReading>) -> Self {
        Self { participant: participant.to_string(), action_id: None, readings }
    }
}
