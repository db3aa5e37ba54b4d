use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Sensing modality.
///
/// Variants are declared in name order so the derived `Ord` matches
/// lexicographic order of [`Modality::name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Depth,
    Doppler,
    Imu,
    Lidar,
    Pose,
    Thermal,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Depth,
        Modality::Doppler,
        Modality::Imu,
        Modality::Lidar,
        Modality::Pose,
        Modality::Thermal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Doppler => "doppler",
            Modality::Imu => "imu",
            Modality::Lidar => "lidar",
            Modality::Pose => "pose",
            Modality::Thermal => "thermal",
        }
    }

    /// Fixed payload arity per timestamp. Doppler frames carry a variable
    /// number of `(range, velocity, intensity)` points, so `None`.
    pub fn payload_arity(self) -> Option<usize> {
        match self {
            Modality::Depth => Some(100),
            Modality::Doppler => None,
            Modality::Imu => Some(6),
            Modality::Lidar => Some(360),
            Modality::Pose => Some(75),
            Modality::Thermal => Some(100),
        }
    }

    /// Nominal sample-rate range in Hz.
    pub fn nominal_rate_range(self) -> (f64, f64) {
        match self {
            Modality::Depth => (8.0, 8.0),
            Modality::Doppler => (5.0, 5.0),
            Modality::Imu => (50.0, 50.0),
            Modality::Lidar => (6.0, 8.0),
            Modality::Pose => (6.0, 8.0),
            Modality::Thermal => (8.0, 8.0),
        }
    }

    /// Rate used by the synthetic generator and as a fallback when a
    /// session directory has no metadata.
    pub fn default_rate_hz(self) -> f64 {
        match self {
            Modality::Depth => 8.0,
            Modality::Doppler => 5.0,
            Modality::Imu => 50.0,
            Modality::Lidar => 7.0,
            Modality::Pose => 7.0,
            Modality::Thermal => 8.0,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality `{0}`")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownModality(s.to_string()))
    }
}
