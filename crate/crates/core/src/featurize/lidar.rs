use super::{check_arity, FeatureConfig, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const LIDAR_FEATURES: [&str; 12] = [
    "deviation_count_mean",
    "centroid_x_mean",
    "centroid_y_mean",
    "centroid_displacement",
    "radial_spread",
    "min_distance",
    "angular_extent_deg",
    "boundary_interactions",
    "centroid_jitter_std",
    "occupancy_fraction",
    "position_x_std",
    "position_y_std",
];

const BEAMS: usize = 360;

/// Per-angle static boundary: quantile `q` of the finite distances.
/// Angles that never returned get NaN and are ignored downstream.
pub fn lidar_baseline(samples: &[Sample], q: f64) -> Result<Vec<f64>, FeatureError> {
    for s in samples {
        check_arity(Modality::Lidar, s, BEAMS)?;
    }
    Ok((0..BEAMS)
        .map(|a| {
            let col: Vec<f64> = samples.iter().map(|s| s.values[a]).collect();
            stats::quantile(&col, q).unwrap_or(f64::NAN)
        })
        .collect())
}

/// Smallest arc (degrees) covering a set of beam angles.
fn angular_extent(mut angles: Vec<usize>) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    angles.sort_unstable();
    let mut max_gap = angles[0] + BEAMS - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    (BEAMS - max_gap) as f64
}

pub fn featurize_lidar(slice: &[Sample], baseline: &[f64], cfg: &FeatureConfig) -> Result<Features, FeatureError> {
    if baseline.len() != BEAMS {
        return Err(FeatureError::Baseline {
            modality: Modality::Lidar,
            expected: BEAMS,
            found: baseline.len(),
        });
    }
    for s in slice {
        check_arity(Modality::Lidar, s, BEAMS)?;
    }
    if slice.len() < 2 {
        return Ok(Features::invalid(LIDAR_FEATURES.len()));
    }
    let mut counts = Vec::with_capacity(slice.len());
    let mut centroids: Vec<[f64; 2]> = Vec::new();
    let mut spreads = Vec::new();
    let mut extents = Vec::new();
    let mut min_dist = f64::INFINITY;
    let mut interactions = 0usize;
    for s in slice {
        let mut pts = Vec::new();
        let mut angles = Vec::new();
        let mut touches = false;
        for (a, (&d, &b)) in s.values.iter().zip(baseline).enumerate() {
            if !d.is_finite() || !b.is_finite() || d >= b - cfg.lidar_deviation_m {
                continue;
            }
            let theta = (a as f64).to_radians();
            pts.push([d * theta.cos(), d * theta.sin()]);
            angles.push(a);
            min_dist = min_dist.min(d);
            touches |= b - d <= cfg.lidar_boundary_m;
        }
        counts.push(pts.len() as f64);
        interactions += touches as usize;
        if pts.is_empty() {
            continue;
        }
        let n = pts.len() as f64;
        let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        spreads.push(pts.iter().map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).sum::<f64>() / n);
        extents.push(angular_extent(angles));
        centroids.push(c);
    }
    let xs: Vec<f64> = centroids.iter().map(|c| c[0]).collect();
    let ys: Vec<f64> = centroids.iter().map(|c| c[1]).collect();
    let steps: Vec<f64> = centroids
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    let displacement = match (centroids.first(), centroids.last()) {
        (Some(a), Some(b)) => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt(),
        _ => 0.0,
    };
    let values = vec![
        stats::mean(&counts),
        stats::mean(&xs),
        stats::mean(&ys),
        displacement,
        stats::mean(&spreads),
        if min_dist.is_finite() { min_dist } else { 0.0 },
        stats::mean(&extents),
        interactions as f64,
        stats::std(&steps),
        centroids.len() as f64 / slice.len() as f64,
        stats::std(&xs),
        stats::std(&ys),
    ];
    Ok(Features::checked(values))
}
