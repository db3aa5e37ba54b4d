use super::{check_arity, FeatureError, Features};
use crate::sensor::Sample;
use crate::{stats, Modality};

pub const POSE_FEATURES: [&str; 16] = [
    "right_wrist_speed_mean",
    "right_wrist_speed_max",
    "left_wrist_speed_mean",
    "left_wrist_speed_max",
    "torso_x_mean",
    "torso_y_mean",
    "torso_speed_mean",
    "hand_torso_distance_mean",
    "hand_torso_distance_std",
    "bbox_area_mean",
    "visibility_fraction",
    "wrist_acceleration_mean",
    "wrist_vertical_extent",
    "low_visibility_frames",
    "torso_displacement",
    "wrist_separation_mean",
];

const KEYPOINTS: usize = 25;
const RIGHT_WRIST: usize = 4;
const LEFT_WRIST: usize = 7;
const TORSO: [usize; 6] = [1, 2, 5, 8, 9, 12];

type Point = Option<[f64; 2]>;

struct Frame {
    t: f64,
    joints: Vec<Point>,
    visible: usize,
}

impl Frame {
    fn parse(s: &Sample) -> Self {
        let joints: Vec<Point> = (0..KEYPOINTS)
            .map(|k| {
                let (x, y, v) = (s.values[2 * k], s.values[2 * k + 1], s.values[2 * KEYPOINTS + k]);
                (v > 0.0 && x.is_finite() && y.is_finite()).then_some([x, y])
            })
            .collect();
        let visible = joints.iter().filter(|j| j.is_some()).count();
        Self { t: s.t, joints, visible }
    }

    fn torso(&self) -> Point {
        let pts: Vec<[f64; 2]> = TORSO.iter().filter_map(|&k| self.joints[k]).collect();
        if pts.is_empty() {
            return None;
        }
        let n = pts.len() as f64;
        Some([pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n])
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Velocity vectors (px/s) of a point track between consecutive frames where
/// it is present in both.
fn velocities(frames: &[Frame], track: impl Fn(&Frame) -> Point) -> Vec<[f64; 2]> {
    frames
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (track(&w[0])?, track(&w[1])?);
            let dt = w[1].t - w[0].t;
            (dt > 0.0).then(|| [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt])
        })
        .collect()
}

fn speeds(v: &[[f64; 2]]) -> Vec<f64> {
    v.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).collect()
}

/// BODY_25 frames: 50 pixel coordinates followed by 25 visibilities.
pub fn featurize_pose(slice: &[Sample]) -> Result<Features, FeatureError> {
    for s in slice {
        check_arity(Modality::Pose, s, 3 * KEYPOINTS)?;
    }
    if slice.len() < 2 {
        return Ok(Features::invalid(POSE_FEATURES.len()));
    }
    let frames: Vec<Frame> = slice.iter().map(Frame::parse).collect();
    let right = speeds(&velocities(&frames, |f| f.joints[RIGHT_WRIST]));
    let left = speeds(&velocities(&frames, |f| f.joints[LEFT_WRIST]));
    let torsos: Vec<[f64; 2]> = frames.iter().filter_map(Frame::torso).collect();
    let torso_speed = speeds(&velocities(&frames, Frame::torso));

    let mut hand_torso = Vec::new();
    let mut areas = Vec::new();
    let mut wrist_ys = Vec::new();
    let mut separation = Vec::new();
    for f in &frames {
        if let Some(c) = f.torso() {
            hand_torso.extend([RIGHT_WRIST, LEFT_WRIST].iter().filter_map(|&k| f.joints[k]).map(|w| dist(w, c)));
        }
        let pts: Vec<[f64; 2]> = f.joints.iter().flatten().copied().collect();
        if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
            areas.push((stats::max(&xs) - stats::min(&xs)) * (stats::max(&ys) - stats::min(&ys)));
        }
        wrist_ys.extend([RIGHT_WRIST, LEFT_WRIST].iter().filter_map(|&k| f.joints[k]).map(|w| w[1]));
        if let (Some(r), Some(l)) = (f.joints[RIGHT_WRIST], f.joints[LEFT_WRIST]) {
            separation.push(dist(r, l));
        }
    }

    let mut accel = Vec::new();
    for k in [RIGHT_WRIST, LEFT_WRIST] {
        // Acceleration from three consecutive frames with the wrist visible.
        for w in frames.windows(3) {
            let (Some(a), Some(b), Some(c)) = (w[0].joints[k], w[1].joints[k], w[2].joints[k]) else {
                continue;
            };
            let (d1, d2) = (w[1].t - w[0].t, w[2].t - w[1].t);
            if d1 <= 0.0 || d2 <= 0.0 {
                continue;
            }
            let v1 = [(b[0] - a[0]) / d1, (b[1] - a[1]) / d1];
            let v2 = [(c[0] - b[0]) / d2, (c[1] - b[1]) / d2];
            accel.push(dist(v2, v1) / (0.5 * (d1 + d2)));
        }
    }

    let total_visible: usize = frames.iter().map(|f| f.visible).sum();
    let low_vis = frames.iter().filter(|f| 2 * f.visible < KEYPOINTS).count();
    let displacement = match (torsos.first(), torsos.last()) {
        (Some(a), Some(b)) => dist(*a, *b),
        _ => 0.0,
    };
    let vertical_extent = if wrist_ys.is_empty() { 0.0 } else { stats::max(&wrist_ys) - stats::min(&wrist_ys) };
    let values = vec![
        stats::mean(&right),
        stats::max(&right),
        stats::mean(&left),
        stats::max(&left),
        stats::mean(&torsos.iter().map(|p| p[0]).collect::<Vec<_>>()),
        stats::mean(&torsos.iter().map(|p| p[1]).collect::<Vec<_>>()),
        stats::mean(&torso_speed),
        stats::mean(&hand_torso),
        stats::std(&hand_torso),
        stats::mean(&areas),
        total_visible as f64 / (frames.len() * KEYPOINTS) as f64,
        stats::mean(&accel),
        vertical_extent,
        low_vis as f64,
        displacement,
        stats::mean(&separation),
    ];
    Ok(Features::checked(values))
}
