//! Planted activities used by the synthetic generator and the mock
//! describer: four kitchen zones with two activities each, plus a few
//! utility motions for tests.

use rand::seq::SliceRandom;
use rand::Rng;

use super::script::{Hotspot, MotionProfile, WristMotion};
use super::{ActivityScript, ScriptStep};
use crate::seed;

pub struct ZoneSpec {
    pub name: &'static str,
    pub anchor: [f64; 2],
    /// Ways an observer might refer to the place.
    pub locations: &'static [&'static str],
}

pub struct ActivitySpec {
    pub name: &'static str,
    pub zone: &'static str,
    /// Observer paraphrases of the action with the objects they mention.
    pub paraphrases: &'static [(&'static str, &'static [&'static str])],
    pub structure: [&'static str; 3],
    profile: fn() -> MotionProfile,
}

impl ActivitySpec {
    pub fn profile(&self) -> MotionProfile {
        (self.profile)()
    }
}

pub const PLANTED_ZONES: [ZoneSpec; 4] = [
    ZoneSpec {
        name: "sink area",
        anchor: [1.0, 3.3],
        locations: &["at sink", "by sink", "near sink basin", "in front of the sink", "at the kitchen sink"],
    },
    ZoneSpec {
        name: "counter area",
        anchor: [3.3, 3.3],
        locations: &["by counter", "at counter", "at kitchen counter", "on countertop", "near the countertop"],
    },
    ZoneSpec {
        name: "coffee machine area",
        anchor: [4.9, 1.6],
        locations: &["at coffee machine", "by coffee maker", "near coffee station", "at the coffee corner"],
    },
    ZoneSpec {
        name: "dining area",
        anchor: [1.0, 1.0],
        locations: &["at dining table", "at table", "sitting at table", "near dining table"],
    },
];

const EXTRA_ZONES: [ZoneSpec; 1] = [ZoneSpec {
    name: "room center",
    anchor: [2.7, 1.2],
    locations: &["in the middle of the room", "in the kitchen"],
}];

static ACTIVITIES: [ActivitySpec; 12] = [
    ActivitySpec {
        name: "washing dishes",
        zone: "sink area",
        paraphrases: &[
            ("washing dish with sponge", &["sponge", "dish", "water"]),
            ("scrubbing plate with sponge", &["sponge", "plate", "water"]),
            ("washing dishes with sponge", &["sponge", "dishes", "water"]),
            ("cleaning a bowl with sponge", &["sponge", "bowl", "water"]),
            ("scrubbing pan with sponge", &["sponge", "pan", "water"]),
        ],
        structure: ["dirty dishes in sink", "scrubbing dishes", "clean dishes"],
        profile: || MotionProfile {
            wander_m: 0.08,
            hand_freq_hz: 1.6,
            hand_amp: 3.0,
            gyro_amp: 1.2,
            limb_speed: 0.35,
            limb_points: 2,
            wrist_motion: WristMotion::Sine { amp_u: 25.0, amp_v: 10.0 },
            hotspot: Some(Hotspot { x: 0.8, y: 3.7, temp_c: 45.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "washing hands",
        zone: "sink area",
        paraphrases: &[
            ("washing hands with soap", &["soap", "faucet", "water"]),
            ("rinsing hands under faucet", &["faucet", "water"]),
            ("lathering hands with soap", &["soap", "water"]),
            ("cleaning hands at faucet", &["faucet", "soap"]),
        ],
        structure: ["hands dirty", "lathering and rinsing hands", "clean hands"],
        profile: || MotionProfile {
            wander_m: 0.05,
            hand_freq_hz: 3.2,
            hand_amp: 2.2,
            gyro_amp: 2.0,
            limb_speed: 0.25,
            limb_points: 2,
            wrist_motion: WristMotion::Sine { amp_u: 12.0, amp_v: 6.0 },
            hotspot: Some(Hotspot { x: 0.8, y: 3.7, temp_c: 14.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "preparing sandwich",
        zone: "counter area",
        paraphrases: &[
            ("making a sandwich", &["bread", "knife", "plate"]),
            ("spreading butter on bread", &["bread", "butter", "knife"]),
            ("assembling sandwich", &["bread", "cheese", "plate"]),
            ("slicing bread for sandwich", &["bread", "knife", "cutting board"]),
        ],
        structure: ["ingredients on counter", "assembling sandwich", "sandwich on plate"],
        profile: || MotionProfile {
            wander_m: 0.25,
            hand_freq_hz: 0.9,
            hand_amp: 1.6,
            gyro_amp: 0.5,
            limb_speed: 0.3,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 35.0, amp_v: 15.0 },
            hotspot: Some(Hotspot { x: 3.6, y: 3.8, temp_c: 12.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "preparing cereal",
        zone: "counter area",
        paraphrases: &[
            ("pouring cereal into bowl", &["cereal box", "bowl"]),
            ("pouring milk on cereal", &["milk", "bowl", "cereal"]),
            ("preparing cereal bowl", &["bowl", "cereal", "spoon"]),
            ("adding cereal to bowl", &["cereal box", "bowl"]),
        ],
        structure: ["empty bowl on counter", "pouring cereal and milk", "bowl of cereal"],
        profile: || MotionProfile {
            wander_m: 0.12,
            hand_freq_hz: 0.45,
            hand_amp: 1.2,
            gyro_amp: 1.0,
            limb_speed: 0.2,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 20.0, amp_v: 25.0 },
            hotspot: Some(Hotspot { x: 3.0, y: 3.8, temp_c: 6.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "making coffee",
        zone: "coffee machine area",
        paraphrases: &[
            ("filling cup using coffee machine", &["coffee machine", "cup"]),
            ("using coffee machine with mug", &["coffee machine", "mug"]),
            ("brewing coffee", &["coffee machine", "mug", "coffee"]),
            ("pressing coffee machine button", &["coffee machine", "button"]),
        ],
        structure: ["mug under machine", "brewing coffee", "full mug"],
        profile: || MotionProfile {
            wander_m: 0.05,
            hand_freq_hz: 0.3,
            hand_amp: 0.6,
            gyro_amp: 0.3,
            limb_speed: 0.1,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 8.0, amp_v: 4.0 },
            hotspot: Some(Hotspot { x: 5.3, y: 1.6, temp_c: 70.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "making tea",
        zone: "coffee machine area",
        paraphrases: &[
            ("pouring hot water from kettle", &["kettle", "cup", "water"]),
            ("steeping tea bag in cup", &["tea bag", "cup"]),
            ("making tea with kettle", &["kettle", "tea bag", "cup"]),
            ("boiling kettle for tea", &["kettle", "water"]),
        ],
        structure: ["cup with tea bag", "pouring hot water", "cup of tea"],
        profile: || MotionProfile {
            wander_m: 0.1,
            hand_freq_hz: 0.6,
            hand_amp: 0.9,
            gyro_amp: 0.6,
            limb_speed: 0.15,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 14.0, amp_v: 10.0 },
            hotspot: Some(Hotspot { x: 5.2, y: 1.1, temp_c: 90.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "eating meal",
        zone: "dining area",
        paraphrases: &[
            ("eating food at table", &["food", "plate", "fork"]),
            ("eating with fork", &["fork", "plate"]),
            ("having a meal at table", &["plate", "food"]),
            ("taking a bite of food", &["fork", "food"]),
        ],
        structure: ["food on plate", "eating", "empty plate"],
        profile: || MotionProfile {
            wander_m: 0.03,
            hand_freq_hz: 0.25,
            hand_amp: 2.0,
            gyro_amp: 1.0,
            limb_speed: 0.2,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 10.0, amp_v: 60.0 },
            hotspot: Some(Hotspot { x: 1.3, y: 1.0, temp_c: 48.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "drinking beverage",
        zone: "dining area",
        paraphrases: &[
            ("drinking from glass", &["glass"]),
            ("sipping a drink", &["glass", "drink"]),
            ("drinking water at table", &["glass", "water"]),
            ("taking a sip from cup", &["cup"]),
        ],
        structure: ["full glass", "drinking", "glass set down"],
        profile: || MotionProfile {
            wander_m: 0.03,
            hand_freq_hz: 0.12,
            hand_amp: 1.5,
            gyro_amp: 0.5,
            limb_speed: 0.1,
            limb_points: 1,
            wrist_motion: WristMotion::Sine { amp_u: 6.0, amp_v: 50.0 },
            hotspot: Some(Hotspot { x: 0.7, y: 1.0, temp_c: 10.0 }),
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "idle",
        zone: "room center",
        paraphrases: &[("standing still", &[]), ("standing in place", &[]), ("waiting", &[]), ("resting", &[])],
        structure: ["standing", "standing", "standing"],
        profile: MotionProfile::default,
    },
    ActivitySpec {
        name: "walking",
        zone: "room center",
        paraphrases: &[("walking across room", &[]), ("walking", &[]), ("crossing the kitchen", &[]), ("moving through room", &[])],
        structure: ["standing", "walking", "arrived"],
        profile: || MotionProfile {
            anchor: Some([0.8, 1.8]),
            walk_velocity: Some([0.5, 0.0]),
            hand_freq_hz: 1.8,
            hand_amp: 1.0,
            gyro_amp: 0.3,
            limb_speed: 0.6,
            limb_points: 2,
            wrist_motion: WristMotion::Sine { amp_u: 10.0, amp_v: 5.0 },
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "reaching",
        zone: "counter area",
        paraphrases: &[("reaching for shelf", &["shelf"]), ("reaching across counter", &[]), ("grabbing item", &[]), ("stretching arm", &[])],
        structure: ["standing", "reaching", "item in hand"],
        profile: || MotionProfile {
            hand_freq_hz: 0.6,
            hand_amp: 1.0,
            gyro_amp: 0.3,
            wrist_motion: WristMotion::Triangle { amp_px: 80.0, speed_px_s: 200.0 },
            ..MotionProfile::default()
        },
    },
    ActivitySpec {
        name: "approaching sensor",
        zone: "room center",
        paraphrases: &[("walking toward camera", &[]), ("approaching", &[]), ("coming closer", &[]), ("walking forward", &[])],
        structure: ["far", "approaching", "near"],
        profile: || MotionProfile {
            anchor: Some([2.75, 3.8]),
            walk_velocity: Some([0.0, -0.5]),
            hand_freq_hz: 1.8,
            hand_amp: 1.0,
            limb_speed: 0.3,
            limb_points: 1,
            ..MotionProfile::default()
        },
    },
];

pub fn catalog_entry(activity: &str) -> Option<&'static ActivitySpec> {
    ACTIVITIES.iter().find(|a| a.name == activity)
}

/// The eight activities planted in the demo corpus.
pub fn planted_activities() -> impl Iterator<Item = &'static ActivitySpec> {
    ACTIVITIES[..8].iter()
}

pub fn zone_anchor(zone: &str) -> Option<[f64; 2]> {
    PLANTED_ZONES
        .iter()
        .chain(EXTRA_ZONES.iter())
        .find(|z| z.name == zone)
        .map(|z| z.anchor)
}

pub(crate) fn zone_spec(zone: &str) -> Option<&'static ZoneSpec> {
    PLANTED_ZONES.iter().chain(EXTRA_ZONES.iter()).find(|z| z.name == zone)
}

fn lay_out(session_id: &str, duration_s: f64, order: &[&ActivitySpec], rng: &mut impl Rng) -> ActivityScript {
    let mut steps = Vec::new();
    let mut t = 4.0;
    for a in order {
        let gap = if steps.is_empty() { 0.0 } else { rng.random_range(5.0..9.0) };
        let dur: f64 = rng.random_range(40.0..62.0);
        let start = ((t + gap) * 10.0_f64).round() / 10.0;
        let dur = (dur * 10.0).round() / 10.0;
        if start + dur > duration_s - 2.0 {
            break;
        }
        steps.push(ScriptStep::new(a.name, a.zone, start, dur));
        t = start + dur;
    }
    ActivityScript {
        session_id: session_id.to_string(),
        duration_s,
        steps,
    }
}

/// Single 8-activity session used by `simulate` when no script is given.
pub fn demo_script() -> ActivityScript {
    let order: Vec<_> = planted_activities().collect();
    let mut rng = seed::rng(0, "demo-script");
    lay_out("demo", 480.0, &order, &mut rng)
}

/// Ordered multi-session corpus: the first session covers one activity per
/// zone, later sessions mix seven of the eight activities.
pub fn demo_corpus(n_sessions: usize, root_seed: u64) -> Vec<ActivityScript> {
    let all: Vec<_> = planted_activities().collect();
    (0..n_sessions)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_indexed(root_seed, "corpus", i as u64), "layout");
            let mut order: Vec<&ActivitySpec> = if i == 0 {
                all.iter().step_by(2).copied().collect()
            } else {
                let mut o = all.clone();
                o.shuffle(&mut rng);
                o.truncate(7);
                o
            };
            if i == 0 {
                order.shuffle(&mut rng);
            }
            lay_out(&format!("s{:02}", i + 1), 480.0, &order, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_planted_activity_has_four_paraphrases() {
        for a in planted_activities() {
            assert!(a.paraphrases.len() >= 4, "{}", a.name);
            assert!(zone_anchor(a.zone).is_some());
        }
        for z in &PLANTED_ZONES {
            assert!(z.locations.len() >= 4);
        }
        assert_eq!(planted_activities().count(), 8);
    }

    #[test]
    fn corpus_scripts_are_valid_and_deterministic() {
        let a = demo_corpus(10, 3);
        assert_eq!(a, demo_corpus(10, 3));
        for s in &a {
            s.validate().unwrap();
            assert!(s.steps.len() >= 4);
        }
        assert_eq!(a[0].steps.len(), 4);
        demo_script().validate().unwrap();
        assert_eq!(demo_script().steps.len(), 8);
    }
}
