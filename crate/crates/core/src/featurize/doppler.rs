use super::{FeatureConfig, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const DOPPLER_FEATURES: [&str; 15] = [
    "velocity_mean",
    "velocity_std",
    "velocity_min",
    "velocity_max",
    "approaching_fraction",
    "receding_fraction",
    "static_point_fraction",
    "range_mean",
    "range_std",
    "range_extent",
    "velocity_entropy",
    "direction_changes",
    "stationary_frame_fraction",
    "slow_frame_fraction",
    "fast_frame_fraction",
];

const HIST_BINS: usize = 8;
const HIST_LIMIT: f64 = 2.0;

/// Radar frames are flat `[range, velocity, intensity]*` point lists.
pub fn featurize_doppler(slice: &[Sample], cfg: &FeatureConfig) -> Result<Features, FeatureError> {
    for s in slice {
        if s.values.is_empty() || s.values.len() % 3 != 0 {
            return Err(FeatureError::Arity {
                modality: Modality::Doppler,
                t: s.t,
                expected: "a positive multiple of 3".into(),
                found: s.values.len(),
            });
        }
    }
    if slice.len() < 2 {
        return Ok(Features::invalid(DOPPLER_FEATURES.len()));
    }
    let still = cfg.doppler_stationary_mps;
    let fast = cfg.doppler_fast_mps;

    let mut ranges = Vec::new();
    let mut vels = Vec::new();
    let mut frame_means = Vec::with_capacity(slice.len());
    let mut frame_kind = [0usize; 3];
    for s in slice {
        // Point order within a frame carries no meaning.
        let mut pts: Vec<[f64; 2]> = s.values.chunks(3).map(|p| [p[0], p[1]]).filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let v: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        frame_means.push(stats::mean(&v));
        let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let kind = if peak <= still {
            0
        } else if peak < fast {
            1
        } else {
            2
        };
        frame_kind[kind] += 1;
        ranges.extend(pts.iter().map(|p| p[0]));
        vels.extend(v);
    }

    let n = vels.len().max(1) as f64;
    let frac = |f: &dyn Fn(f64) -> bool| vels.iter().filter(|&&v| f(v)).count() as f64 / n;
    let mut hist = [0usize; HIST_BINS];
    for &v in &vels {
        let pos = ((v + HIST_LIMIT) / (2.0 * HIST_LIMIT) * HIST_BINS as f64).floor();
        hist[(pos.max(0.0) as usize).min(HIST_BINS - 1)] += 1;
    }
    let mut flips = 0usize;
    let mut last_sign = 0i8;
    for &m in &frame_means {
        let sign = if m > still {
            1
        } else if m < -still {
            -1
        } else {
            0
        };
        if sign != 0 {
            if last_sign != 0 && sign != last_sign {
                flips += 1;
            }
            last_sign = sign;
        }
    }
    let frames = slice.len() as f64;
    let values = vec![
        stats::mean(&vels),
        stats::std(&vels),
        stats::min(&vels),
        stats::max(&vels),
        frac(&|v| v > still),
        frac(&|v| v < -still),
        frac(&|v| v.abs() <= still),
        stats::mean(&ranges),
        stats::std(&ranges),
        stats::max(&ranges) - stats::min(&ranges),
        stats::entropy(&hist),
        flips as f64,
        frame_kind[0] as f64 / frames,
        frame_kind[1] as f64 / frames,
        frame_kind[2] as f64 / frames,
    ];
    Ok(Features::checked(values))
}
