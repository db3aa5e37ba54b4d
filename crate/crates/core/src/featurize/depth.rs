use super::{check_arity, FeatureConfig, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const DEPTH_FEATURES: [&str; 10] = [
    "deviation_count_mean",
    "deviation_row_mean",
    "deviation_col_mean",
    "deviation_closeness_mean",
    "frame_diff_energy",
    "occupancy_fraction",
    "centroid_displacement",
    "deviation_spread",
    "closeness_max",
    "deviation_count_std",
];

const SIDE: usize = 10;
const CELLS: usize = SIDE * SIDE;

/// Per-cell static boundary: quantile `q` of the observed closeness.
pub fn depth_baseline(samples: &[Sample], q: f64) -> Result<Vec<f64>, FeatureError> {
    for s in samples {
        check_arity(Modality::Depth, s, CELLS)?;
    }
    Ok((0..CELLS)
        .map(|c| {
            let col: Vec<f64> = samples.iter().map(|s| s.values[c]).collect();
            stats::quantile(&col, q).unwrap_or(f64::NAN)
        })
        .collect())
}

pub fn featurize_depth(slice: &[Sample], baseline: &[f64], cfg: &FeatureConfig) -> Result<Features, FeatureError> {
    if baseline.len() != CELLS {
        return Err(FeatureError::Baseline {
            modality: Modality::Depth,
            expected: CELLS,
            found: baseline.len(),
        });
    }
    for s in slice {
        check_arity(Modality::Depth, s, CELLS)?;
    }
    if slice.len() < 2 {
        return Ok(Features::invalid(DEPTH_FEATURES.len()));
    }
    let mut counts = Vec::with_capacity(slice.len());
    let mut centroids: Vec<[f64; 2]> = Vec::new();
    let mut closeness = Vec::new();
    let mut spreads = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    for s in slice {
        let cells: Vec<(usize, f64)> = s
            .values
            .iter()
            .enumerate()
            .filter(|(i, v)| v.is_finite() && baseline[*i].is_finite() && **v > baseline[*i] + cfg.depth_deviation)
            .map(|(i, v)| (i, *v))
            .collect();
        peak = s.values.iter().copied().filter(|v| v.is_finite()).fold(peak, f64::max);
        counts.push(cells.len() as f64);
        if cells.is_empty() {
            continue;
        }
        let n = cells.len() as f64;
        let c = [
            cells.iter().map(|(i, _)| (i / SIDE) as f64).sum::<f64>() / n,
            cells.iter().map(|(i, _)| (i % SIDE) as f64).sum::<f64>() / n,
        ];
        spreads.push(
            cells
                .iter()
                .map(|(i, _)| (((i / SIDE) as f64 - c[0]).powi(2) + ((i % SIDE) as f64 - c[1]).powi(2)).sqrt())
                .sum::<f64>()
                / n,
        );
        closeness.extend(cells.iter().map(|(_, v)| *v));
        centroids.push(c);
    }
    let diff_energy = stats::mean(
        &slice
            .windows(2)
            .map(|w| w[0].values.iter().zip(&w[1].values).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / CELLS as f64)
            .collect::<Vec<_>>(),
    );
    let displacement = match (centroids.first(), centroids.last()) {
        (Some(a), Some(b)) => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt(),
        _ => 0.0,
    };
    let values = vec![
        stats::mean(&counts),
        stats::mean(&centroids.iter().map(|c| c[0]).collect::<Vec<_>>()),
        stats::mean(&centroids.iter().map(|c| c[1]).collect::<Vec<_>>()),
        stats::mean(&closeness),
        diff_energy,
        centroids.len() as f64 / slice.len() as f64,
        displacement,
        stats::mean(&spreads),
        if peak.is_finite() { peak } else { 0.0 },
        stats::std(&counts),
    ];
    Ok(Features::checked(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene() {
        let frames: Vec<Sample> = (0..8).map(|k| Sample::new(k as f64 / 8.0, vec![0.1; CELLS])).collect();
        let base = depth_baseline(&frames, 0.05).unwrap();
        let f = featurize_depth(&frames, &base, &FeatureConfig::default()).unwrap();
        assert!(f.valid);
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[5], 0.0);
    }

    #[test]
    fn person_blob() {
        let mut frames: Vec<Sample> = (0..40).map(|k| Sample::new(k as f64 / 8.0, vec![0.1; CELLS])).collect();
        for f in frames.iter_mut().take(2) {
            f.values[55] = 0.6;
            f.values[56] = 0.8;
        }
        let base = depth_baseline(&frames, 0.05).unwrap();
        let f = featurize_depth(&frames[..2], &base, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values[0], 2.0);
        assert_eq!(f.values[1], 5.0);
        assert_eq!(f.values[2], 5.5);
        assert!((f.values[3] - 0.7).abs() < 1e-12);
        assert_eq!(f.values[8], 0.8);
        assert_eq!(f.values[5], 1.0);
        assert!((f.values[7] - 0.5).abs() < 1e-12);
    }
}
