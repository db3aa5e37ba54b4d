use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_arity, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const IMU_FEATURES: [&str; 29] = [
    "ax_mean", "ax_std", "ax_energy",
    "ay_mean", "ay_std", "ay_energy",
    "az_mean", "az_std", "az_energy",
    "gx_mean", "gx_std", "gx_energy",
    "gy_mean", "gy_std", "gy_energy",
    "gz_mean", "gz_std", "gz_energy",
    "acc_mag_mean", "acc_mag_std", "acc_mag_max",
    "gyro_mag_mean", "gyro_mag_std", "gyro_mag_max",
    "acc_mag_zero_crossing_rate",
    "dominant_frequency_hz",
    "acc_corr_xy", "acc_corr_yz", "acc_corr_xz",
];

const MIN_SAMPLES: usize = 10;
const SPECTRUM_BINS: usize = 16;

/// Centre frequency of the coarse spectrum bin holding the most power of the
/// demeaned acceleration axes. Summing per-axis power keeps the estimate
/// independent of how gravity projects onto the device frame.
fn dominant_frequency(axes: &[Vec<f64>; 3], rate_hz: f64) -> f64 {
    let n = axes[0].len();
    if n < 4 || !(rate_hz > 0.0) {
        return 0.0;
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut power = vec![0.0; n / 2 + 1];
    for axis in axes {
        let m = stats::mean(axis);
        let mut buf: Vec<Complex<f64>> = axis.iter().map(|v| Complex::new(v - m, 0.0)).collect();
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    let nyquist = rate_hz / 2.0;
    let mut coarse = [0.0; SPECTRUM_BINS];
    for (k, p) in power.iter().enumerate().skip(1) {
        let f = k as f64 * rate_hz / n as f64;
        let b = ((f / nyquist) * SPECTRUM_BINS as f64).floor() as usize;
        coarse[b.min(SPECTRUM_BINS - 1)] += p;
    }
    let (best, &peak) = coarse
        .iter()
        .enumerate()
        .fold((0, &0.0), |acc, (i, p)| if *p > *acc.1 { (i, p) } else { acc });
    if peak <= 1e-18 {
        return 0.0;
    }
    (best as f64 + 0.5) * nyquist / SPECTRUM_BINS as f64
}

fn zero_crossing_rate(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = stats::mean(xs);
    let crossings = xs
        .windows(2)
        .filter(|w| {
            let (a, b) = (w[0] - m, w[1] - m);
            (a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0)
        })
        .filter(|w| (w[0] - w[1]).abs() > 1e-12)
        .count();
    crossings as f64 / (xs.len() - 1) as f64
}

/// Six-axis samples `[ax, ay, az, gx, gy, gz]`.
pub fn featurize_imu(slice: &[Sample]) -> Result<Features, FeatureError> {
    for s in slice {
        check_arity(Modality::Imu, s, 6)?;
    }
    if slice.len() < MIN_SAMPLES {
        return Ok(Features::invalid(IMU_FEATURES.len()));
    }
    let axis = |i: usize| slice.iter().map(|s| s.values[i]).collect::<Vec<f64>>();
    let cols: Vec<Vec<f64>> = (0..6).map(axis).collect();
    let mut values = Vec::with_capacity(IMU_FEATURES.len());
    for c in &cols {
        values.push(stats::mean(c));
        values.push(stats::std(c));
        values.push(c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64);
    }
    let mag = |off: usize| -> Vec<f64> {
        slice
            .iter()
            .map(|s| (s.values[off].powi(2) + s.values[off + 1].powi(2) + s.values[off + 2].powi(2)).sqrt())
            .collect()
    };
    let acc = mag(0);
    let gyro = mag(3);
    for m in [&acc, &gyro] {
        values.extend([stats::mean(m), stats::std(m), stats::max(m)]);
    }
    values.push(zero_crossing_rate(&acc));
    let span = slice[slice.len() - 1].t - slice[0].t;
    let rate = if span > 0.0 { (slice.len() - 1) as f64 / span } else { 0.0 };
    values.push(dominant_frequency(&[cols[0].clone(), cols[1].clone(), cols[2].clone()], rate));
    values.push(stats::correlation(&cols[0], &cols[1]));
    values.push(stats::correlation(&cols[1], &cols[2]));
    values.push(stats::correlation(&cols[0], &cols[2]));
    Ok(Features::checked(values))
}
