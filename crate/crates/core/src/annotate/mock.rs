//! Deterministic stand-in for a vision-language describer, driven by the
//! activity scripts of the sessions being annotated.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AnnotateError, Describer, DescriberRequest};
use crate::sensor::{catalog_entry, planted_activities, zone_spec, ActivityScript};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceDistribution {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl ConfidenceDistribution {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Fixed { value } => value.clamp(0.0, 1.0),
            Self::Uniform { low, high } if high > low => rng.random_range(low..=high).clamp(0.0, 1.0),
            Self::Uniform { low, .. } => low.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockNoiseConfig {
    pub drop_rate: f64,
    pub confuse_rate: f64,
    pub confidence: ConfidenceDistribution,
}

impl Default for MockNoiseConfig {
    fn default() -> Self {
        Self {
            drop_rate: 0.08,
            confuse_rate: 0.05,
            confidence: ConfidenceDistribution::Uniform { low: 0.75, high: 1.0 },
        }
    }
}

impl MockNoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            drop_rate: 0.0,
            confuse_rate: 0.0,
            confidence: ConfidenceDistribution::Fixed { value: 1.0 },
        }
    }
}

/// Describes the scripted step covering the middle of the requested clip,
/// using paraphrases from the activity catalog. Clips whose middle falls
/// between steps produce an empty response.
#[derive(Debug, Clone)]
pub struct MockDescriber {
    scripts: BTreeMap<String, ActivityScript>,
    noise: MockNoiseConfig,
    seed: u64,
}

/// Another activity of the same zone, or the next planted activity.
fn neighbour(activity: &str) -> Option<&'static str> {
    let planted: Vec<_> = planted_activities().collect();
    let idx = planted.iter().position(|a| a.name == activity)?;
    let zone = planted[idx].zone;
    planted
        .iter()
        .find(|a| a.zone == zone && a.name != activity)
        .or_else(|| planted.get((idx + 1) % planted.len()))
        .map(|a| a.name)
}

impl MockDescriber {
    pub fn new(scripts: impl IntoIterator<Item = ActivityScript>, noise: MockNoiseConfig, seed: u64) -> Self {
        Self {
            scripts: scripts.into_iter().map(|s| (s.session_id.clone(), s)).collect(),
            noise,
            seed,
        }
    }

    pub fn noise(&self) -> &MockNoiseConfig {
        &self.noise
    }

    fn respond(&self, req: &DescriberRequest) -> Value {
        let tag = format!("{}@{}", req.session_id, (req.t_s * 1e6).round() as i64);
        let mut rng = seed::rng(self.seed, &tag);
        let dropped = rng.random::<f64>() < self.noise.drop_rate;
        let confused = rng.random::<f64>() < self.noise.confuse_rate;
        let confidence = self.noise.confidence.sample(&mut rng);

        let mid = req.t_s - req.clip_length_s / 2.0;
        let step = self.scripts.get(&req.session_id).and_then(|s| s.step_at(mid)).map(|(_, st)| st);
        let Some(step) = step else {
            return empty_response();
        };
        if dropped {
            return empty_response();
        }
        let mut activity = step.activity.as_str();
        let mut zone = step.zone.as_str();
        if confused {
            if let Some(n) = neighbour(activity) {
                activity = n;
                zone = catalog_entry(n).map_or(zone, |a| a.zone);
            }
        }
        match catalog_entry(activity) {
            Some(spec) => {
                let (action, objects) = spec.paraphrases.choose(&mut rng).copied().unwrap_or((spec.name, &[]));
                let location = zone_spec(zone)
                    .and_then(|z| z.locations.choose(&mut rng).copied())
                    .unwrap_or(zone);
                json!({
                    "actions": [action],
                    "objects": objects,
                    "location": location,
                    "structure": {"initial": spec.structure[0], "main": spec.structure[1], "result": spec.structure[2]},
                    "confidence": confidence,
                })
            }
            None => json!({
                "actions": [activity],
                "objects": [],
                "location": zone,
                "structure": {"initial": "", "main": activity, "result": ""},
                "confidence": confidence,
            }),
        }
    }
}

fn empty_response() -> Value {
    json!({"actions": [], "objects": [], "location": null, "confidence": 0.0})
}

impl Describer for MockDescriber {
    fn describe_raw(&self, request: &DescriberRequest) -> Result<Value, AnnotateError> {
        Ok(self.respond(request))
    }
}

#[cfg(test)]
mod tests {
    use super::super::describe;
    use super::*;
    use crate::sensor::{ScriptStep, PLANTED_ZONES};

    fn script() -> ActivityScript {
        ActivityScript {
            session_id: "s".into(),
            duration_s: 2000.0,
            steps: vec![
                ScriptStep::new("washing dishes", "sink area", 0.0, 1000.0),
                ScriptStep::new("making coffee", "coffee machine area", 1010.0, 990.0),
            ],
        }
    }

    #[test]
    fn noiseless_matches_script() {
        let mock = MockDescriber::new([script()], MockNoiseConfig::noiseless(), 1);
        let spec = catalog_entry("washing dishes").unwrap();
        let sink = &PLANTED_ZONES[0];
        for t in [10.0, 300.0, 777.7] {
            let d = describe(&DescriberRequest::new("s", t), &mock).unwrap();
            assert!(!d.empty);
            assert_eq!(d.confidence, 1.0);
            assert!(spec.paraphrases.iter().any(|(a, _)| d.actions == vec![a.to_string()]));
            assert!(d.actions[0].contains("wash") || d.actions[0].contains("scrub") || d.actions[0].contains("clean"));
            assert!(sink.locations.contains(&d.location.as_deref().unwrap()));
        }
        // Between steps nothing is described.
        assert!(describe(&DescriberRequest::new("s", 1007.0), &mock).unwrap().empty);
        assert!(describe(&DescriberRequest::new("other", 10.0), &mock).unwrap().empty);
    }

    #[test]
    fn deterministic() {
        let mock = MockDescriber::new([script()], MockNoiseConfig::default(), 3);
        let req = DescriberRequest::new("s", 55.5);
        assert_eq!(describe(&req, &mock).unwrap(), describe(&req, &mock).unwrap());
    }

    #[test]
    fn drop_rate_is_binomial() {
        let noise = MockNoiseConfig {
            drop_rate: 0.08,
            confuse_rate: 0.0,
            ..Default::default()
        };
        let mock = MockDescriber::new([script()], noise, 11);
        let n = 1000;
        let empty = (0..n).filter(|i| describe(&DescriberRequest::new("s", 5.0 + *i as f64 * 0.9), &mock).unwrap().empty).count();
        let (mean, sd) = (n as f64 * 0.08, (n as f64 * 0.08 * 0.92).sqrt());
        assert!((empty as f64 - mean).abs() <= 3.0 * sd, "{empty}");
    }

    #[test]
    fn non_empty_rate_converges() {
        let noise = MockNoiseConfig {
            drop_rate: 0.2,
            ..Default::default()
        };
        let long = ActivityScript {
            session_id: "s".into(),
            duration_s: 20000.0,
            steps: vec![ScriptStep::new("eating meal", "dining area", 0.0, 20000.0)],
        };
        let mock = MockDescriber::new([long], noise, 5);
        let n = 10_000;
        let ok = (0..n).filter(|i| !describe(&DescriberRequest::new("s", 5.0 + *i as f64 * 1.5), &mock).unwrap().empty).count();
        assert!((ok as f64 / n as f64 - 0.8).abs() <= 0.02);
    }

    #[test]
    fn confusion_picks_zone_neighbour() {
        assert_eq!(neighbour("making coffee"), Some("making tea"));
        assert_eq!(neighbour("washing hands"), Some("washing dishes"));
        let noise = MockNoiseConfig {
            drop_rate: 0.0,
            confuse_rate: 1.0,
            confidence: ConfidenceDistribution::Fixed { value: 0.9 },
        };
        let mock = MockDescriber::new([script()], noise, 2);
        let d = describe(&DescriberRequest::new("s", 1500.0), &mock).unwrap();
        let tea = catalog_entry("making tea").unwrap();
        assert!(tea.paraphrases.iter().any(|(a, _)| d.actions[0] == *a));
    }
}
