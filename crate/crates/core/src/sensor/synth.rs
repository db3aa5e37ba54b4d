//! Parametric per-modality emitters driven by a shared person trajectory.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::script::{MotionProfile, WristMotion};
use super::{ActivityScript, Sample, SampleSeries, SensorError, Session};
use crate::{seed, Modality};

/// Fixed room and sensor layout of the synthetic kitchen (metres).
pub mod geometry {
    pub const ROOM: [f64; 2] = [5.5, 4.0];
    pub const LIDAR: [f64; 2] = [2.6, 1.9];
    /// Radar, depth camera and pose camera share a mount facing +y.
    pub const FRONT_MOUNT: [f64; 2] = [2.75, 0.0];
    pub const BODY_RADIUS: f64 = 0.22;
    pub const RADAR_CLUTTER_RANGE: f64 = 4.0;
    /// Pose camera focal length in pixels.
    pub const POSE_FOCAL_PX: f64 = 260.0;
}

use geometry::*;

const TRACK_HZ: f64 = 50.0;
const WALK_SPEED: f64 = 0.8;

fn quantize(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

struct StepPlan {
    start: f64,
    end: f64,
    profile: MotionProfile,
    anchor: [f64; 2],
    freq: f64,
    amp: f64,
    phase: f64,
}

/// Person state sampled on a fixed 50 Hz grid.
struct Track {
    pos: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    step: Vec<Option<usize>>,
}

impl Track {
    fn index(&self, t: f64) -> usize {
        ((t * TRACK_HZ).round() as usize).min(self.pos.len() - 1)
    }
}

fn plan_steps(script: &ActivityScript, rng: &mut ChaCha8Rng) -> Result<Vec<StepPlan>, SensorError> {
    script
        .steps
        .iter()
        .map(|s| {
            let profile = s.resolved_profile()?;
            let anchor = profile.anchor.expect("resolved profile has an anchor");
            Ok(StepPlan {
                start: s.start_s,
                end: s.end_s(),
                freq: profile.hand_freq_hz * rng.random_range(0.92..1.08),
                amp: rng.random_range(0.88..1.12),
                phase: rng.random_range(0.0..TAU),
                anchor,
                profile,
            })
        })
        .collect()
}

fn build_track(duration: f64, plans: &[StepPlan], rng: &mut ChaCha8Rng) -> Track {
    let n = (duration * TRACK_HZ).round() as usize + 1;
    let dt = 1.0 / TRACK_HZ;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut pos = Vec::with_capacity(n);
    let mut step = Vec::with_capacity(n);
    let mut wander = [0.0f64; 2];
    let theta: f64 = 0.5;
    let home = plans.first().map(|p| p.anchor).unwrap_or([ROOM[0] / 2.0, ROOM[1] / 2.0]);
    let mut last_end_pos = home;
    let mut cursor = 0usize;
    for k in 0..n {
        let t = k as f64 * dt;
        while cursor < plans.len() && t >= plans[cursor].end {
            cursor += 1;
        }
        let current = plans.get(cursor).filter(|p| t >= p.start);
        let p = match current {
            Some(plan) => {
                let sigma = plan.profile.wander_m * (2.0 * theta).sqrt();
                for w in wander.iter_mut() {
                    *w += -theta * *w * dt + sigma * dt.sqrt() * normal.sample(rng);
                }
                let mut p = [plan.anchor[0] + wander[0], plan.anchor[1] + wander[1]];
                if let Some(v) = plan.profile.walk_velocity {
                    p[0] += v[0] * (t - plan.start);
                    p[1] += v[1] * (t - plan.start);
                }
                step.push(Some(cursor));
                last_end_pos = p;
                p
            }
            None => {
                wander = [0.0; 2];
                step.push(None);
                match plans.get(cursor) {
                    Some(next) => {
                        // Walk toward the next anchor and wait there.
                        let prev_end = if cursor == 0 { 0.0 } else { plans[cursor - 1].end };
                        let from = last_end_pos;
                        let d = ((next.anchor[0] - from[0]).powi(2) + (next.anchor[1] - from[1]).powi(2)).sqrt();
                        let travel = d / WALK_SPEED;
                        let frac = if travel <= 0.0 { 1.0 } else { ((t - prev_end) / travel).clamp(0.0, 1.0) };
                        [from[0] + (next.anchor[0] - from[0]) * frac, from[1] + (next.anchor[1] - from[1]) * frac]
                    }
                    None => last_end_pos,
                }
            }
        };
        pos.push([p[0].clamp(0.3, ROOM[0] - 0.3), p[1].clamp(0.3, ROOM[1] - 0.3)]);
    }
    let mut vel = vec![[0.0; 2]; n];
    for k in 0..n {
        let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
        if b > a {
            let span = (b - a) as f64 * dt;
            vel[k] = [(pos[b][0] - pos[a][0]) / span, (pos[b][1] - pos[a][1]) / span];
        }
    }
    Track { pos, vel, step }
}

fn sample_times(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(move |k| micros(k as f64 / rate))
}

/// Generates all six modalities for `script`. Pure in `(script, seed)`.
pub fn generate_synthetic_session(script: &ActivityScript, seed_value: u64) -> Result<Session, SensorError> {
    script.validate()?;
    let root = seed::derive(seed_value, &script.session_id);
    let mut plan_rng = seed::rng(root, "plan");
    let plans = plan_steps(script, &mut plan_rng)?;
    let mut track_rng = seed::rng(root, "track");
    let track = build_track(script.duration_s, &plans, &mut track_rng);
    let ctx = Ctx {
        duration: script.duration_s,
        plans: &plans,
        track: &track,
        root,
    };

    let mut modalities = BTreeMap::new();
    for m in Modality::ALL {
        let series = match m {
            Modality::Doppler => ctx.doppler(),
            Modality::Lidar => ctx.lidar(),
            Modality::Thermal => ctx.thermal(),
            Modality::Imu => ctx.imu(),
            Modality::Pose => ctx.pose(),
            Modality::Depth => ctx.depth(),
        };
        modalities.insert(m, series);
    }
    Ok(Session {
        session_id: script.session_id.clone(),
        duration_s: script.duration_s,
        modalities,
        ground_truth: Some(script.ground_truth()),
    })
}

struct Ctx<'a> {
    duration: f64,
    plans: &'a [StepPlan],
    track: &'a Track,
    root: u64,
}

impl Ctx<'_> {
    fn rng(&self, m: Modality) -> ChaCha8Rng {
        seed::rng(self.root, m.name())
    }

    fn at(&self, t: f64) -> ([f64; 2], [f64; 2], Option<&StepPlan>) {
        let k = self.track.index(t);
        (self.track.pos[k], self.track.vel[k], self.track.step[k].map(|i| &self.plans[i]))
    }

    fn series(&self, m: Modality, mut f: impl FnMut(f64) -> Vec<f64>) -> SampleSeries {
        let rate = m.default_rate_hz();
        let mut s = SampleSeries::new(m, rate);
        s.samples = sample_times(self.duration, rate).map(|t| Sample::new(t, f(t))).collect();
        s
    }

    /// Hand oscillation phase and amplitude scale; walking transitions get a
    /// gait rhythm.
    fn hand(&self, t: f64, plan: Option<&StepPlan>, moving: bool) -> (f64, f64, f64) {
        match plan {
            Some(p) => (TAU * p.freq * (t - p.start) + p.phase, p.amp, p.freq),
            None if moving => (TAU * 1.8 * t, 1.0, 1.8),
            None => (0.0, 0.0, 0.0),
        }
    }

    fn doppler(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Doppler);
        let noise = Normal::new(0.0, 0.01).unwrap();
        self.series(Modality::Doppler, |t| {
            let (p, v, plan) = self.at(t);
            let rel = [p[0] - FRONT_MOUNT[0], p[1] - FRONT_MOUNT[1]];
            let range = (rel[0] * rel[0] + rel[1] * rel[1]).sqrt();
            let radial = (v[0] * rel[0] + v[1] * rel[1]) / range.max(1e-6);
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let moving = plan.is_none() && speed > 0.1;
            let mut out = vec![
                quantize(RADAR_CLUTTER_RANGE + noise.sample(&mut rng) * 0.5, 1e-3),
                0.0,
                0.2,
            ];
            let torso_v = radial + rng.random_range(-0.02..0.02);
            out.extend([
                quantize(range + noise.sample(&mut rng), 1e-3),
                quantize(torso_v, 1e-4),
                quantize(1.0 / (range * range).max(0.1), 1e-4),
            ]);
            let (points, limb_speed) = match plan {
                Some(pl) => (pl.profile.limb_points, pl.profile.limb_speed * pl.amp),
                None if moving => (2, 0.6),
                None => (0, 0.0),
            };
            let (phase, _, _) = self.hand(t, plan, moving);
            for i in 0..points {
                let lv = radial + limb_speed * (phase + i as f64 * PI / 2.0).sin() + rng.random_range(-0.02..0.02);
                let lr = range + rng.random_range(-0.1..0.1);
                out.extend([
                    quantize(lr, 1e-3),
                    quantize(lv, 1e-4),
                    quantize(0.5 / (lr * lr).max(0.1), 1e-4),
                ]);
            }
            out
        })
    }

    fn lidar(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Lidar);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let walls: Vec<f64> = (0..360).map(|a| wall_distance(LIDAR, (a as f64).to_radians())).collect();
        self.series(Modality::Lidar, |t| {
            let (p, _, _) = self.at(t);
            (0..360)
                .map(|a| {
                    if rng.random::<f64>() < 0.003 {
                        return f64::NAN;
                    }
                    let theta = (a as f64).to_radians();
                    let d = circle_hit(LIDAR, theta, p, BODY_RADIUS).map_or(walls[a], |h| h.min(walls[a]));
                    quantize(d + noise.sample(&mut rng), 1e-3)
                })
                .collect()
        })
    }

    fn thermal(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Thermal);
        let offsets: Vec<f64> = (0..100).map(|_| rng.random_range(-0.3..0.3)).collect();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let ambient = 22.0;
        self.series(Modality::Thermal, |t| {
            let (p, _, _) = self.at(t);
            let (pr, pc) = to_cell(p);
            let hotspots: Vec<(f64, f64, f64)> = self
                .plans
                .iter()
                .filter_map(|pl| {
                    let h = pl.profile.hotspot?;
                    let level = if t < pl.start {
                        0.0
                    } else if t <= pl.end {
                        ((t - pl.start) / 8.0).min(1.0)
                    } else {
                        (-(t - pl.end) / 20.0).exp()
                    };
                    (level > 1e-3).then(|| {
                        let (r, c) = to_cell([h.x, h.y]);
                        (r, c, (h.temp_c - ambient) * level)
                    })
                })
                .collect();
            (0..100)
                .map(|i| {
                    let (r, c) = ((i / 10) as f64, (i % 10) as f64);
                    let d2 = (r - pr).powi(2) + (c - pc).powi(2);
                    let mut temp = ambient + offsets[i] + 9.0 * (-d2 / (2.0 * 0.8 * 0.8)).exp();
                    for &(hr, hc, delta) in &hotspots {
                        let d2 = (r - hr).powi(2) + (c - hc).powi(2);
                        temp += delta * (-d2 / (2.0 * 0.5 * 0.5)).exp();
                    }
                    quantize(temp + noise.sample(&mut rng), 0.01)
                })
                .collect()
        })
    }

    fn imu(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Imu);
        let acc_noise = Normal::new(0.0, 0.05).unwrap();
        let gyro_noise = Normal::new(0.0, 0.01).unwrap();
        self.series(Modality::Imu, |t| {
            let (_, v, plan) = self.at(t);
            let moving = plan.is_none() && (v[0] * v[0] + v[1] * v[1]).sqrt() > 0.1;
            let (phase, scale, _) = self.hand(t, plan, moving);
            let (a, g) = match plan {
                Some(p) => (p.profile.hand_amp * scale, p.profile.gyro_amp * scale),
                None if moving => (1.0, 0.3),
                None => (0.0, 0.0),
            };
            let mut out = [
                a * phase.sin(),
                0.6 * a * (phase + PI / 2.0).sin(),
                9.81 + 0.3 * a * (2.0 * phase).sin(),
                g * phase.cos(),
                0.5 * g * (phase + PI / 3.0).sin(),
                0.3 * g * (2.0 * phase).cos(),
            ];
            for (i, x) in out.iter_mut().enumerate() {
                *x += if i < 3 { acc_noise.sample(&mut rng) } else { gyro_noise.sample(&mut rng) };
            }
            out.iter().map(|x| quantize(*x, 1e-4)).collect()
        })
    }

    fn pose(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Pose);
        let noise = Normal::new(0.0, 0.5).unwrap();
        self.series(Modality::Pose, |t| {
            let (p, v, plan) = self.at(t);
            let depth = (p[1] - FRONT_MOUNT[1]).max(0.5);
            let scale = POSE_FOCAL_PX / depth;
            let u0 = 320.0 + (p[0] - FRONT_MOUNT[0]) * scale;
            let v0 = 240.0 + 0.2 * scale;
            let moving = plan.is_none() && (v[0] * v[0] + v[1] * v[1]).sqrt() > 0.1;
            let (phase, amp_scale, freq) = self.hand(t, plan, moving);
            let wrist = match plan.map(|p| (p.profile.wrist_motion, p.start)) {
                Some((WristMotion::Sine { amp_u, amp_v }, _)) => {
                    [amp_u * amp_scale * phase.sin(), -amp_v * amp_scale * (0.5 - 0.5 * phase.cos())]
                }
                Some((WristMotion::Triangle { amp_px, speed_px_s }, start)) => {
                    [triangle(t - start, amp_px, speed_px_s), 0.0]
                }
                Some((WristMotion::Still, _)) => [0.0, 0.0],
                None if moving => [8.0 * (TAU * freq * t).sin(), 0.0],
                None => [0.0, 0.0],
            };
            let mut xy = [[0.0f64; 2]; 25];
            for (k, off) in BODY25.iter().enumerate() {
                let mut du = off[0] * scale;
                let mut dv = -off[1] * scale;
                match k {
                    4 => {
                        du += wrist[0];
                        dv += wrist[1];
                    }
                    3 => {
                        du += 0.5 * wrist[0];
                        dv += 0.5 * wrist[1];
                    }
                    7 => {
                        du += 0.4 * wrist[0];
                        dv += 0.4 * wrist[1];
                    }
                    _ => {}
                }
                xy[k] = [u0 + du + noise.sample(&mut rng), v0 + dv + noise.sample(&mut rng)];
            }
            let mut coords = Vec::with_capacity(75);
            let mut vis = Vec::with_capacity(25);
            for k in 0..25 {
                let [u, v] = xy[k];
                let inside = (0.0..=640.0).contains(&u) && (0.0..=480.0).contains(&v);
                if inside && rng.random::<f64>() >= 0.02 {
                    coords.extend([quantize(u, 0.01), quantize(v, 0.01)]);
                    vis.push(quantize(rng.random_range(0.9..1.0), 0.01));
                } else {
                    coords.extend([0.0, 0.0]);
                    vis.push(0.0);
                }
            }
            coords.extend(vis);
            coords
        })
    }

    fn depth(&self) -> SampleSeries {
        let mut rng = self.rng(Modality::Depth);
        let background: Vec<f64> = (0..100)
            .map(|i| 0.08 + 0.04 * (i / 10) as f64 / 9.0 + rng.random_range(0.0..0.03))
            .collect();
        let noise = Normal::new(0.0, 0.005).unwrap();
        self.series(Modality::Depth, |t| {
            let (p, _, _) = self.at(t);
            let rel = [p[0] - FRONT_MOUNT[0], p[1] - FRONT_MOUNT[1]];
            let d = (rel[0] * rel[0] + rel[1] * rel[1]).sqrt().max(0.3);
            let bearing = rel[0].atan2(rel[1]);
            let col_center = (bearing / (PI / 4.0) + 1.0) * 5.0 - 0.5;
            let half_w = (BODY_RADIUS / d).atan() / (PI / 4.0) * 5.0 + 0.5;
            let height = (8.0 / d).clamp(2.0, 10.0);
            let person = (1.0 - d / 6.0).clamp(0.0, 1.0);
            (0..100)
                .map(|i| {
                    let (r, c) = ((i / 10) as f64, (i % 10) as f64);
                    let in_blob = (c - col_center).abs() <= half_w && r >= 10.0 - height;
                    let base = background[i] + noise.sample(&mut rng);
                    let v = if in_blob { base.max(person + noise.sample(&mut rng)) } else { base };
                    quantize(v.clamp(0.0, 1.0), 1e-3)
                })
                .collect()
        })
    }
}

/// BODY_25 keypoint offsets (m) from the mid-hip, y up.
const BODY25: [[f64; 2]; 25] = [
    [0.0, 0.70],
    [0.0, 0.55],
    [-0.18, 0.52],
    [-0.25, 0.28],
    [-0.25, 0.05],
    [0.18, 0.52],
    [0.25, 0.28],
    [0.25, 0.05],
    [0.0, 0.0],
    [-0.1, 0.0],
    [-0.1, -0.45],
    [-0.1, -0.9],
    [0.1, 0.0],
    [0.1, -0.45],
    [0.1, -0.9],
    [-0.03, 0.73],
    [0.03, 0.73],
    [-0.07, 0.71],
    [0.07, 0.71],
    [0.12, -0.95],
    [0.15, -0.95],
    [0.1, -0.93],
    [-0.12, -0.95],
    [-0.15, -0.95],
    [-0.1, -0.93],
];

fn triangle(t: f64, amp: f64, speed: f64) -> f64 {
    let period = 4.0 * amp / speed;
    let x = (t % period) / period;
    amp * if x < 0.25 {
        4.0 * x
    } else if x < 0.75 {
        2.0 - 4.0 * x
    } else {
        4.0 * x - 4.0
    }
}

/// Top-down thermal grid coordinates (row, col) of a room position.
fn to_cell(p: [f64; 2]) -> (f64, f64) {
    (p[1] / ROOM[1] * 10.0 - 0.5, p[0] / ROOM[0] * 10.0 - 0.5)
}

fn wall_distance(origin: [f64; 2], theta: f64) -> f64 {
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut best = f64::INFINITY;
    if dx > 1e-12 {
        best = best.min((ROOM[0] - origin[0]) / dx);
    } else if dx < -1e-12 {
        best = best.min(-origin[0] / dx);
    }
    if dy > 1e-12 {
        best = best.min((ROOM[1] - origin[1]) / dy);
    } else if dy < -1e-12 {
        best = best.min(-origin[1] / dy);
    }
    best
}

fn circle_hit(origin: [f64; 2], theta: f64, center: [f64; 2], r: f64) -> Option<f64> {
    let (dx, dy) = (theta.cos(), theta.sin());
    let (ox, oy) = (origin[0] - center[0], origin[1] - center[1]);
    let b = ox * dx + oy * dy;
    let c = ox * ox + oy * oy - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}
