use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{catalog, GroundTruthSpan, SensorError};

/// How the tracked (right) wrist moves in the pose stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WristMotion {
    Still,
    /// Elliptical oscillation at the profile's hand frequency (pixels).
    Sine { amp_u: f64, amp_v: f64 },
    /// Back-and-forth horizontal reach at constant speed (pixels, px/s).
    Triangle { amp_px: f64, speed_px_s: f64 },
}

/// A localized temperature source switched on during a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    pub temp_c: f64,
}

/// Parametric signal description of one activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    /// Room position (m); defaults to the zone anchor.
    #[serde(default)]
    pub anchor: Option<[f64; 2]>,
    /// Stationary spread of the random walk around the anchor (m).
    #[serde(default)]
    pub wander_m: f64,
    /// Constant walking velocity (m/s) starting at the anchor.
    #[serde(default)]
    pub walk_velocity: Option<[f64; 2]>,
    #[serde(default)]
    pub hand_freq_hz: f64,
    /// Wrist acceleration amplitude (m/s²).
    #[serde(default)]
    pub hand_amp: f64,
    /// Wrist angular-rate amplitude (rad/s).
    #[serde(default)]
    pub gyro_amp: f64,
    /// Radial speed amplitude of moving limbs seen by the radar (m/s).
    #[serde(default)]
    pub limb_speed: f64,
    #[serde(default)]
    pub limb_points: usize,
    #[serde(default = "still")]
    pub wrist_motion: WristMotion,
    #[serde(default)]
    pub hotspot: Option<Hotspot>,
}

fn still() -> WristMotion {
    WristMotion::Still
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            anchor: None,
            wander_m: 0.0,
            walk_velocity: None,
            hand_freq_hz: 0.0,
            hand_amp: 0.0,
            gyro_amp: 0.0,
            limb_speed: 0.0,
            limb_points: 0,
            wrist_motion: WristMotion::Still,
            hotspot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub activity: String,
    pub zone: String,
    pub start_s: f64,
    pub duration_s: f64,
    /// Falls back to the catalog profile of `activity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<MotionProfile>,
}

impl ScriptStep {
    pub fn new(activity: &str, zone: &str, start_s: f64, duration_s: f64) -> Self {
        Self {
            activity: activity.to_string(),
            zone: zone.to_string(),
            start_s,
            duration_s,
            profile: None,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    /// Explicit profile, else the catalog's, with the anchor resolved from
    /// the zone when missing.
    pub fn resolved_profile(&self) -> Result<MotionProfile, SensorError> {
        let mut p = match &self.profile {
            Some(p) => p.clone(),
            None => catalog::catalog_entry(&self.activity)
                .map(|a| a.profile())
                .ok_or_else(|| {
                    SensorError::InvalidScript(format!(
                        "activity `{}` has no profile and is not in the catalog",
                        self.activity
                    ))
                })?,
        };
        if p.anchor.is_none() {
            p.anchor = Some(catalog::zone_anchor(&self.zone).ok_or_else(|| {
                SensorError::InvalidScript(format!("unknown zone `{}` and no anchor given", self.zone))
            })?);
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityScript {
    pub session_id: String,
    pub duration_s: f64,
    pub steps: Vec<ScriptStep>,
}

impl ActivityScript {
    pub fn from_json(text: &str) -> Result<Self, SensorError> {
        serde_json::from_str(text).map_err(|e| SensorError::Malformed {
            file: "<script>".into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SensorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SensorError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            SensorError::Malformed { line, column, message, .. } => SensorError::Malformed {
                file: path.to_path_buf(),
                line,
                column,
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(SensorError::InvalidScript("duration must be positive".into()));
        }
        let mut prev_end = 0.0;
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
                return Err(SensorError::InvalidScript(format!("step {i}: duration must be positive")));
            }
            if !s.start_s.is_finite() || s.start_s < prev_end - 1e-9 {
                return Err(SensorError::InvalidScript(format!("step {i} overlaps the previous step")));
            }
            if s.end_s() > self.duration_s + 1e-9 {
                return Err(SensorError::InvalidScript(format!("step {i} ends after the session")));
            }
            s.resolved_profile()?;
            prev_end = s.end_s();
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthSpan> {
        self.steps
            .iter()
            .map(|s| GroundTruthSpan {
                start_s: s.start_s,
                end_s: s.end_s(),
                activity: s.activity.clone(),
            })
            .collect()
    }

    /// Rebuilds a script from recorded labels, resolving zones through the
    /// activity catalog (unknown activities land in zone "unknown").
    pub fn from_ground_truth(session_id: &str, duration_s: f64, gt: &[GroundTruthSpan]) -> Self {
        Self {
            session_id: session_id.to_string(),
            duration_s,
            steps: gt
                .iter()
                .map(|g| {
                    let zone = catalog::catalog_entry(&g.activity)
                        .map(|a| a.zone.to_string())
                        .unwrap_or_else(|| "unknown".to_string());
                    ScriptStep::new(&g.activity, &zone, g.start_s, g.end_s - g.start_s)
                })
                .collect(),
        }
    }

    /// Step covering `t` (half-open intervals).
    pub fn step_at(&self, t: f64) -> Option<(usize, &ScriptStep)> {
        self.steps
            .iter()
            .enumerate()
            .find(|(_, s)| s.start_s <= t && t < s.end_s())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_steps_rejected() {
        let script = ActivityScript {
            session_id: "s".into(),
            duration_s: 100.0,
            steps: vec![
                ScriptStep::new("idle", "room center", 0.0, 50.0),
                ScriptStep::new("idle", "room center", 40.0, 20.0),
            ],
        };
        assert!(matches!(script.validate(), Err(SensorError::InvalidScript(_))));
    }

    #[test]
    fn parse_error_has_line() {
        let text = "{\n  \"session_id\": \"a\",\n  \"duration_s\": oops\n}";
        match ActivityScript::from_json(text) {
            Err(SensorError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_activity_needs_profile() {
        let mut script = ActivityScript {
            session_id: "s".into(),
            duration_s: 10.0,
            steps: vec![ScriptStep::new("juggling", "sink area", 0.0, 5.0)],
        };
        assert!(script.validate().is_err());
        script.steps[0].profile = Some(MotionProfile::default());
        script.validate().unwrap();
    }
}
