//! Deterministic reasoner and embedder built from synonym tables and hashed
//! bag-of-words vectors.

use std::collections::BTreeMap;

use super::{ActivityCluster, ComponentScores, Dimension, Embedder, LabelError, Reasoner};
use crate::annotate::SceneDescription;

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "with", "at", "of", "for", "in", "on", "to", "from", "and", "into", "under", "by", "near", "using",
];

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP_WORDS.contains(t))
        .map(str::to_string)
        .collect()
}

/// Ordered keyword rules: the first rule with any keyword among the action
/// tokens decides the canonical label.
const ACTIVITY_RULES: &[(&[&str], &str)] = &[
    (&["hands", "hand"], "washing hands with soap"),
    (&["sponge", "dish", "dishes", "scrubbing"], "washing dishes with sponge"),
    (&["sandwich", "bread"], "preparing sandwich"),
    (&["cereal"], "preparing cereal"),
    (&["coffee", "espresso"], "preparing coffee drink"),
    (&["tea", "kettle"], "preparing tea"),
    (&["eating", "eat", "meal", "bite"], "eating meal"),
    (&["drinking", "drink", "sip", "sipping"], "drinking beverage"),
];

const ZONE_RULES: &[(&[&str], &str)] = &[
    (&["sink", "basin", "faucet"], "sink area"),
    (&["counter", "countertop"], "counter area"),
    (&["coffee", "espresso"], "coffee machine area"),
    (&["table", "dining"], "dining area"),
    (&["middle", "room", "kitchen"], "room center"),
];

fn first_rule(text: &str, rules: &[(&[&str], &'static str)]) -> Option<&'static str> {
    let toks = tokens(text);
    rules.iter().find(|(keys, _)| keys.iter().any(|k| toks.iter().any(|t| t == k))).map(|(_, v)| *v)
}

/// Canonical label for a free-text action phrase.
pub fn canonical_activity(action: &str) -> String {
    first_rule(action, ACTIVITY_RULES).map_or_else(|| tokens(action).join(" "), str::to_string)
}

struct Expansion {
    action: &'static str,
    object: &'static str,
    location: &'static str,
    purpose: &'static str,
    access: &'static str,
    relation: &'static str,
}

const EXPANSIONS: &[(&str, Expansion)] = &[
    ("washing dishes with sponge", Expansion {
        action: "cleaning",
        object: "sponge dishes plates",
        location: "sink area",
        purpose: "kitchen cleanup hygiene",
        access: "running water faucet",
        relation: "after eating meal cooking",
    }),
    ("washing hands with soap", Expansion {
        action: "cleaning rinsing",
        object: "soap hands",
        location: "sink area",
        purpose: "personal hygiene",
        access: "running water faucet",
        relation: "before eating food preparation",
    }),
    ("preparing sandwich", Expansion {
        action: "preparing assembling",
        object: "bread knife plate",
        location: "counter area",
        purpose: "breakfast food preparation",
        access: "counter surface",
        relation: "before eating meal",
    }),
    ("preparing cereal", Expansion {
        action: "preparing pouring",
        object: "cereal bowl milk",
        location: "counter area",
        purpose: "breakfast food preparation",
        access: "counter surface",
        relation: "before eating meal",
    }),
    ("preparing coffee drink", Expansion {
        action: "preparing brewing",
        object: "coffee machine cup",
        location: "coffee machine area",
        purpose: "hot beverage preparation",
        access: "coffee machine power",
        relation: "morning drinking beverage",
    }),
    ("preparing tea", Expansion {
        action: "preparing brewing",
        object: "kettle tea cup",
        location: "coffee machine area",
        purpose: "hot beverage preparation",
        access: "kettle power",
        relation: "morning drinking beverage",
    }),
    ("eating meal", Expansion {
        action: "eating consuming",
        object: "food plate fork",
        location: "dining area",
        purpose: "nourishment refreshment",
        access: "table seating",
        relation: "after food preparation",
    }),
    ("drinking beverage", Expansion {
        action: "drinking consuming",
        object: "glass cup drink",
        location: "dining area",
        purpose: "nourishment refreshment",
        access: "table seating",
        relation: "after beverage preparation",
    }),
];

const GROUP_NAMES: &[(&[&str], &str)] = &[
    (&["preparing coffee drink", "preparing tea"], "hot beverage preparation"),
    (&["preparing cereal", "preparing sandwich"], "food preparation"),
    (&["drinking beverage", "eating meal"], "eating and drinking"),
    (&["washing dishes with sponge", "washing hands with soap"], "washing at sink"),
];

/// Strips the " (zone)" suffix added when a label occurs in several zones.
fn base_label(label: &str) -> &str {
    match label.rfind(" (") {
        Some(i) if label.ends_with(')') => &label[..i],
        _ => label,
    }
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.iter().filter(|x| b.contains(x)).count() as f64;
    let mut union: Vec<&String> = a.iter().chain(b).collect();
    union.sort();
    union.dedup();
    inter / union.len() as f64
}

/// Synonym-table reasoner.
///
/// Component similarities: action is 1 when the description canonicalizes
/// to the cluster label, otherwise the token Jaccard index against the
/// label; object is the fraction of described objects seen in the cluster;
/// location is 1 for the same zone and 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockReasoner;

impl MockReasoner {
    fn describe_action(desc: &SceneDescription) -> String {
        desc.actions.join(" ")
    }
}

impl Reasoner for MockReasoner {
    fn consolidate_locations(&self, locations: &[String]) -> Result<Vec<String>, LabelError> {
        Ok(locations
            .iter()
            .map(|l| first_rule(l, ZONE_RULES).map_or_else(|| tokens(l).join(" "), str::to_string))
            .collect())
    }

    fn canonical_activity(&self, _zone: &str, desc: &SceneDescription) -> Result<String, LabelError> {
        let label = canonical_activity(&Self::describe_action(desc));
        if label.is_empty() {
            return Err(LabelError::Reasoner("description without action words".into()));
        }
        Ok(label)
    }

    fn component_similarity(&self, desc: &SceneDescription, desc_zone: &str, cluster: &ActivityCluster) -> Result<ComponentScores, LabelError> {
        let action_text = Self::describe_action(desc);
        let label = base_label(&cluster.label);
        let action = if canonical_activity(&action_text) == label {
            1.0
        } else {
            jaccard(&tokens(&action_text), &tokens(label))
        };
        let object = if desc.objects.is_empty() {
            if cluster.canonical_objects.is_empty() { 1.0 } else { 0.0 }
        } else {
            desc.objects.iter().filter(|o| cluster.canonical_objects.contains(o)).count() as f64 / desc.objects.len() as f64
        };
        let location = if desc_zone == cluster.zone { 1.0 } else { 0.0 };
        Ok(ComponentScores { action, object, location })
    }

    fn expand(&self, label: &str, cluster: &ActivityCluster) -> Result<BTreeMap<Dimension, String>, LabelError> {
        let base = base_label(label);
        let texts: [String; 6] = match EXPANSIONS.iter().find(|(l, _)| *l == base) {
            Some((_, e)) => [e.action, e.object, e.location, e.purpose, e.access, e.relation].map(str::to_string),
            None => {
                let objects = if cluster.canonical_objects.is_empty() {
                    "no objects".to_string()
                } else {
                    cluster.canonical_objects.join(" ")
                };
                [
                    base.to_string(),
                    objects,
                    cluster.zone.clone(),
                    format!("purpose of {base}"),
                    format!("access in {}", cluster.zone),
                    format!("related to {base}"),
                ]
            }
        };
        Ok(Dimension::ALL.into_iter().zip(texts).collect())
    }

    fn name_group(&self, labels: &[String]) -> Result<String, LabelError> {
        let mut sorted: Vec<&str> = labels.iter().map(|l| base_label(l)).collect();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some((_, name)) = GROUP_NAMES.iter().find(|(members, _)| *members == sorted.as_slice()) {
            return Ok(name.to_string());
        }
        Ok(sorted.join(" / "))
    }
}

/// Token counts hashed into a fixed number of buckets, unit-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 1024 }
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LabelError> {
        let mut v = vec![0.0; self.dim.max(1)];
        let toks = tokens(text);
        let toks = if toks.is_empty() { vec![text.trim().to_lowercase()] } else { toks };
        let n = v.len() as u64;
        for t in &toks {
            v[(fnv1a(t) % n) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}
