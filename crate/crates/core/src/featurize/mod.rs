//! Sliding-window featurization of raw sensor series.
//!
//! Every modality maps a window of samples `[t_s - length, t_s]` to a fixed
//! length vector. Window anchors are computed in integer microseconds so that
//! membership at the closed boundaries is exact.

mod depth;
mod doppler;
mod imu;
mod lidar;
mod pose;
mod thermal;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sensor::{Sample, SampleSeries, Session};
use crate::Modality;

pub use depth::{depth_baseline, featurize_depth, DEPTH_FEATURES};
pub use doppler::{featurize_doppler, DOPPLER_FEATURES};
pub use imu::{featurize_imu, IMU_FEATURES};
pub use lidar::{featurize_lidar, lidar_baseline, LIDAR_FEATURES};
pub use pose::{featurize_pose, POSE_FEATURES};
pub use thermal::{featurize_thermal, THERMAL_FEATURES};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid window spec: length {length_s} s, stride {stride_s} s")]
    InvalidSpec { length_s: f64, stride_s: f64 },
    #[error("{modality} sample at t={t}: expected {expected} values, found {found}")]
    Arity {
        modality: Modality,
        t: f64,
        expected: String,
        found: usize,
    },
    #[error("{modality} baseline has {found} entries, expected {expected}")]
    Baseline {
        modality: Modality,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_s: f64,
    pub stride_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_s: 5.0,
            stride_s: 0.5,
        }
    }
}

pub(crate) fn to_micros(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

impl WindowSpec {
    pub fn new(length_s: f64, stride_s: f64) -> Result<Self, FeatureError> {
        let spec = Self { length_s, stride_s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.length_s.is_finite()
            && self.stride_s.is_finite()
            && self.stride_s > 0.0
            && to_micros(self.stride_s) > 0
            && self.stride_s <= self.length_s;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::InvalidSpec {
                length_s: self.length_s,
                stride_s: self.stride_s,
            })
        }
    }

    /// Window-end anchors `length, length + stride, ...` not exceeding `duration_s`.
    pub fn anchors(&self, duration_s: f64) -> Vec<f64> {
        let (len, stride, end) = (to_micros(self.length_s), to_micros(self.stride_s), to_micros(duration_s));
        if stride <= 0 || end < len {
            return Vec::new();
        }
        let n = (end - len) / stride + 1;
        (0..n).map(|k| (len + k * stride) as f64 / 1e6).collect()
    }

    /// Number of windows for a recording of `duration_s`.
    pub fn window_count(&self, duration_s: f64) -> usize {
        self.anchors(duration_s).len()
    }
}

/// Thresholds and baseline quantiles used by the featurizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window: WindowSpec,
    pub doppler_stationary_mps: f64,
    pub doppler_fast_mps: f64,
    pub lidar_deviation_m: f64,
    pub lidar_boundary_m: f64,
    /// Lidar measures distance, so the static boundary is a high quantile.
    pub lidar_baseline_quantile: f64,
    pub thermal_human_band_c: [f64; 2],
    pub thermal_appliance_c: f64,
    pub thermal_cold_c: f64,
    pub depth_deviation: f64,
    /// Depth measures closeness, so the static boundary is a low quantile.
    pub depth_baseline_quantile: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            doppler_stationary_mps: 0.05,
            doppler_fast_mps: 0.5,
            lidar_deviation_m: 0.15,
            lidar_boundary_m: 0.2,
            lidar_baseline_quantile: 0.95,
            thermal_human_band_c: [28.0, 36.0],
            thermal_appliance_c: 40.0,
            thermal_cold_c: 18.0,
            depth_deviation: 0.1,
            depth_baseline_quantile: 0.05,
        }
    }
}

/// Output of one per-modality featurizer call.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub values: Vec<f64>,
    pub valid: bool,
}

impl Features {
    pub(crate) fn invalid(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            valid: false,
        }
    }

    /// Marks the vector invalid (and zeroes it) if anything non-finite slipped in.
    pub(crate) fn checked(values: Vec<f64>) -> Self {
        if values.iter().all(|v| v.is_finite()) {
            Self { values, valid: true }
        } else {
            Self::invalid(values.len())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub t_s: f64,
    pub modality: Modality,
    pub values: Vec<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub modality: Modality,
    pub windows: Vec<FeatureWindow>,
    pub feature_names: Vec<String>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn valid_windows(&self) -> impl Iterator<Item = &FeatureWindow> {
        self.windows.iter().filter(|w| w.valid)
    }

    /// Window whose anchor is `t_s` (exact to the microsecond).
    pub fn window_at(&self, t_s: f64) -> Option<&FeatureWindow> {
        let key = to_micros(t_s);
        self.windows
            .binary_search_by_key(&key, |w| to_micros(w.t_s))
            .ok()
            .map(|i| &self.windows[i])
    }

    /// CSV with header `t_s,<feature names>,valid`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["t_s".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("valid".into());
        w.write_record(&header)?;
        for win in &self.windows {
            let mut row = vec![win.t_s.to_string()];
            row.extend(win.values.iter().map(|v| v.to_string()));
            row.push(win.valid.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn feature_names(modality: Modality) -> &'static [&'static str] {
    match modality {
        Modality::Depth => &DEPTH_FEATURES,
        Modality::Doppler => &DOPPLER_FEATURES,
        Modality::Imu => &IMU_FEATURES,
        Modality::Lidar => &LIDAR_FEATURES,
        Modality::Pose => &POSE_FEATURES,
        Modality::Thermal => &THERMAL_FEATURES,
    }
}

/// Samples of `samples` (time-ordered) inside the closed window ending at `t_s`.
pub(crate) fn window_slice<'a>(samples: &'a [Sample], t_s: f64, length_s: f64) -> &'a [Sample] {
    let (hi, lo) = (to_micros(t_s), to_micros(t_s) - to_micros(length_s));
    let start = samples.partition_point(|s| to_micros(s.t) < lo);
    let end = samples.partition_point(|s| to_micros(s.t) <= hi);
    &samples[start..end.max(start)]
}

/// Splits a series into windows anchored up to its last timestamp.
pub fn window_series<'a>(series: &'a SampleSeries, spec: &WindowSpec) -> Vec<(f64, &'a [Sample])> {
    let Some(last) = series.samples.last() else {
        return Vec::new();
    };
    window_series_until(series, spec, last.t)
}

/// Splits a series into windows on the grid of a recording of `duration_s`.
pub fn window_series_until<'a>(series: &'a SampleSeries, spec: &WindowSpec, duration_s: f64) -> Vec<(f64, &'a [Sample])> {
    spec.anchors(duration_s)
        .into_iter()
        .map(|t| (t, window_slice(&series.samples, t, spec.length_s)))
        .collect()
}

/// Per-session static boundary for modalities that need one.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    None,
    Lidar(Vec<f64>),
    Depth(Vec<f64>),
}

pub fn estimate_baseline(series: &SampleSeries, cfg: &FeatureConfig) -> Result<Baseline, FeatureError> {
    Ok(match series.modality {
        Modality::Lidar => Baseline::Lidar(lidar_baseline(&series.samples, cfg.lidar_baseline_quantile)?),
        Modality::Depth => Baseline::Depth(depth_baseline(&series.samples, cfg.depth_baseline_quantile)?),
        _ => Baseline::None,
    })
}

/// Dispatches one window to the featurizer of `modality`.
pub fn featurize_slice(
    modality: Modality,
    slice: &[Sample],
    baseline: &Baseline,
    cfg: &FeatureConfig,
) -> Result<Features, FeatureError> {
    match (modality, baseline) {
        (Modality::Doppler, _) => featurize_doppler(slice, cfg),
        (Modality::Thermal, _) => featurize_thermal(slice, cfg),
        (Modality::Imu, _) => featurize_imu(slice),
        (Modality::Pose, _) => featurize_pose(slice),
        (Modality::Lidar, Baseline::Lidar(b)) => featurize_lidar(slice, b, cfg),
        (Modality::Depth, Baseline::Depth(b)) => featurize_depth(slice, b, cfg),
        (m @ (Modality::Lidar | Modality::Depth), _) => Err(FeatureError::Baseline {
            modality: m,
            expected: m.payload_arity().unwrap_or(0),
            found: 0,
        }),
    }
}

/// Featurizes one series on the grid of a recording of `duration_s`.
pub fn featurize_series(series: &SampleSeries, duration_s: f64, cfg: &FeatureConfig) -> Result<FeatureTable, FeatureError> {
    cfg.window.validate()?;
    let baseline = estimate_baseline(series, cfg)?;
    let windows = window_series_until(series, &cfg.window, duration_s)
        .into_par_iter()
        .map(|(t_s, slice)| {
            let f = featurize_slice(series.modality, slice, &baseline, cfg)?;
            Ok(FeatureWindow {
                t_s,
                modality: series.modality,
                values: f.values,
                valid: f.valid,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(FeatureTable {
        modality: series.modality,
        windows,
        feature_names: feature_names(series.modality).iter().map(|s| s.to_string()).collect(),
    })
}

/// Featurizes every modality of `session` on a shared anchor grid.
pub fn featurize_session(session: &Session, cfg: &FeatureConfig) -> Result<BTreeMap<Modality, FeatureTable>, FeatureError> {
    cfg.window.validate()?;
    session
        .modalities
        .par_iter()
        .map(|(m, s)| Ok((*m, featurize_series(s, session.duration_s, cfg)?)))
        .collect()
}

pub(crate) fn check_arity(modality: Modality, s: &Sample, expected: usize) -> Result<(), FeatureError> {
    if s.values.len() == expected {
        Ok(())
    } else {
        Err(FeatureError::Arity {
            modality,
            t: s.t,
            expected: expected.to_string(),
            found: s.values.len(),
        })
    }
}
