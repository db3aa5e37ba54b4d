use super::{check_arity, FeatureConfig, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const THERMAL_FEATURES: [&str; 12] = [
    "temp_mean",
    "temp_std",
    "temp_min",
    "temp_max",
    "gradient_mean",
    "hottest_row_mean",
    "hottest_col_mean",
    "human_band_fraction",
    "appliance_fraction",
    "cold_fraction",
    "frame_diff_energy",
    "hottest_drift",
];

const SIDE: usize = 10;

fn hottest(frame: &[f64]) -> (f64, f64) {
    let mut best = 0;
    for (i, v) in frame.iter().enumerate() {
        if *v > frame[best] {
            best = i;
        }
    }
    ((best / SIDE) as f64, (best % SIDE) as f64)
}

/// Mean forward-difference gradient magnitude of a 10x10 frame.
fn gradient(frame: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..SIDE {
        for c in 0..SIDE {
            let v = frame[r * SIDE + c];
            let gx = if c + 1 < SIDE { frame[r * SIDE + c + 1] - v } else { 0.0 };
            let gy = if r + 1 < SIDE { frame[(r + 1) * SIDE + c] - v } else { 0.0 };
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total / (SIDE * SIDE) as f64
}

pub fn featurize_thermal(slice: &[Sample], cfg: &FeatureConfig) -> Result<Features, FeatureError> {
    for s in slice {
        check_arity(Modality::Thermal, s, SIDE * SIDE)?;
    }
    if slice.len() < 2 {
        return Ok(Features::invalid(THERMAL_FEATURES.len()));
    }
    let all: Vec<f64> = slice.iter().flat_map(|s| s.values.iter().copied()).collect();
    let n = all.len() as f64;
    let [lo, hi] = cfg.thermal_human_band_c;
    let frac = |f: &dyn Fn(f64) -> bool| all.iter().filter(|&&v| f(v)).count() as f64 / n;
    let spots: Vec<(f64, f64)> = slice.iter().map(|s| hottest(&s.values)).collect();
    let diff_energy = stats::mean(
        &slice
            .windows(2)
            .map(|w| w[0].values.iter().zip(&w[1].values).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / (SIDE * SIDE) as f64)
            .collect::<Vec<_>>(),
    );
    let drift = stats::mean(
        &spots
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .collect::<Vec<_>>(),
    );
    let values = vec![
        stats::mean(&all),
        stats::std(&all),
        stats::min(&all),
        stats::max(&all),
        stats::mean(&slice.iter().map(|s| gradient(&s.values)).collect::<Vec<_>>()),
        stats::mean(&spots.iter().map(|s| s.0).collect::<Vec<_>>()),
        stats::mean(&spots.iter().map(|s| s.1).collect::<Vec<_>>()),
        frac(&|v| (lo..=hi).contains(&v)),
        frac(&|v| v > cfg.thermal_appliance_c),
        frac(&|v| v < cfg.thermal_cold_c),
        diff_energy,
        drift,
    ];
    Ok(Features::checked(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_frames() {
        let slice: Vec<Sample> = (0..8).map(|k| Sample::new(k as f64 / 8.0, vec![22.0; 100])).collect();
        let f = featurize_thermal(&slice, &FeatureConfig::default()).unwrap();
        assert!(f.valid);
        assert_eq!(f.values[0], 22.0);
        assert_eq!(f.values[1], 0.0);
        assert_eq!(f.values[4], 0.0);
        assert_eq!(&f.values[7..11], &[0.0; 4]);
    }

    #[test]
    fn hot_cell_statistics() {
        let mut a = vec![22.0; 100];
        a[23] = 50.0;
        let mut b = vec![22.0; 100];
        b[27] = 30.0;
        let slice = vec![Sample::new(0.0, a), Sample::new(0.125, b)];
        let f = featurize_thermal(&slice, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values[5], 2.0);
        assert_eq!(f.values[6], 5.0);
        assert_eq!(f.values[7], 1.0 / 200.0);
        assert_eq!(f.values[8], 1.0 / 200.0);
        assert_eq!(f.values[11], 4.0);
        // Two changed cells: (28^2 + 8^2) / 100 per-frame mean squared diff.
        assert!((f.values[10] - (28.0f64.powi(2) + 8.0f64.powi(2)) / 100.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_arity_is_an_error() {
        let slice = vec![Sample::new(0.0, vec![22.0; 99]), Sample::new(0.1, vec![22.0; 99])];
        assert!(featurize_thermal(&slice, &FeatureConfig::default()).is_err());
    }
}
