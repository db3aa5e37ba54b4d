//! Single-document pipeline configuration with environment overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::MockNoiseConfig;
use crate::featurize::FeatureConfig;
use crate::har::HarGrid;
use crate::incremental::IncrementalPolicy;
use crate::keymoments::KeyMomentConfig;
use crate::labels::LabelConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub theta_conf: f64,
    pub clip_length_s: f64,
    pub frame_rate_fps: f64,
    pub resolution: [u32; 2],
    pub parallelism: usize,
    pub timeout_s: f64,
    pub retries: usize,
    /// Noise model of the mock describer.
    pub mock: MockNoiseConfig,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            theta_conf: 0.8,
            clip_length_s: 5.0,
            frame_rate_fps: 1.0,
            resolution: [640, 480],
            parallelism: 4,
            timeout_s: 30.0,
            retries: 2,
            mock: MockNoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarConfig {
    pub grid: HarGrid,
    /// Granularity used for training when none is given explicitly.
    pub lambda: f64,
    /// Training keeps every `train_stride`-th window per session.
    pub train_stride: usize,
    pub min_segment_s: f64,
}

impl Default for HarConfig {
    fn default() -> Self {
        Self {
            grid: HarGrid::default(),
            lambda: 0.4,
            train_stride: 4,
            min_segment_s: 2.0,
        }
    }
}

/// `"mock"` or an HTTP endpoint URL per remote service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub describer: String,
    pub reasoner: String,
    pub embedder: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            describer: "mock".into(),
            reasoner: "mock".into(),
            embedder: "mock".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub keymoments: KeyMomentConfig,
    pub annotate: AnnotateConfig,
    pub labels: LabelConfig,
    pub har: HarConfig,
    pub incremental: IncrementalPolicy,
    pub endpoints: Endpoints,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            features: FeatureConfig::default(),
            keymoments: KeyMomentConfig::default(),
            annotate: AnnotateConfig::default(),
            labels: LabelConfig::default(),
            har: HarConfig::default(),
            incremental: IncrementalPolicy::default(),
            endpoints: Endpoints::default(),
        }
    }
}

pub const ENV_CONFIG: &str = "ORGANIC_CONFIG";
pub const ENV_SEED: &str = "ORGANIC_SEED";
pub const ENV_DESCRIBER_URL: &str = "ORGANIC_DESCRIBER_URL";

impl PipelineConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Defaults, then the file (`file`, else `ORGANIC_CONFIG`), then the
    /// remaining `ORGANIC_*` variables. `env` looks variables up.
    pub fn resolve(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let from_env = env(ENV_CONFIG);
        let path = file.map(Path::to_path_buf).or_else(|| from_env.map(Into::into));
        let mut cfg = match path {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        if let Some(v) = env(ENV_SEED) {
            cfg.seed = v.trim().parse().map_err(|_| ConfigError::Env {
                name: ENV_SEED.into(),
                message: format!("{v:?} is not an unsigned integer"),
            })?;
        }
        if let Some(v) = env(ENV_DESCRIBER_URL) {
            cfg.endpoints.describer = v;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.features.window.validate().map_err(|e| invalid(e.to_string()))?;
        self.keymoments.change.validate().map_err(|e| invalid(e.to_string()))?;
        if self.keymoments.decimate == 0 || self.keymoments.per_cluster == 0 || !(self.keymoments.min_gap_s >= 0.0) {
            return Err(invalid("keymoments: decimate and per_cluster must be positive, min_gap_s non-negative".into()));
        }
        let a = &self.annotate;
        if !(0.0..=1.0).contains(&a.theta_conf) {
            return Err(invalid(format!("annotate.theta_conf {} outside [0, 1]", a.theta_conf)));
        }
        if !(a.clip_length_s > 0.0 && a.frame_rate_fps > 0.0 && a.timeout_s > 0.0) || a.parallelism == 0 {
            return Err(invalid("annotate: clip length, frame rate, timeout and parallelism must be positive".into()));
        }
        let l = &self.labels;
        if l.lambdas.is_empty() || l.lambdas.iter().any(|x| !(0.0..=1.0).contains(x)) || l.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("labels.lambdas must be strictly ascending values in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&l.match_floor) || (l.weights.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid("labels: match_floor must be in [0, 1] and weights must sum to 1".into()));
        }
        let h = &self.har;
        if h.grid.classifiers.is_empty() || h.grid.modes.is_empty() || h.grid.inner_folds < 2 || h.grid.max_modalities == 0 {
            return Err(invalid("har.grid needs classifiers, modes, inner_folds >= 2 and max_modalities >= 1".into()));
        }
        for c in &h.grid.classifiers {
            c.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if !l.lambdas.iter().any(|x| (x - h.lambda).abs() < 1e-9) {
            return Err(invalid(format!("har.lambda {} is not one of labels.lambdas {:?}", h.lambda, l.lambdas)));
        }
        if h.train_stride == 0 || !(h.min_segment_s >= 0.0) {
            return Err(invalid("har: train_stride must be positive, min_segment_s non-negative".into()));
        }
        self.incremental.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text, "mem").unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}", "mem").unwrap(), c);
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 7, "annotate": {"theta_conf": 0.9}}"#).unwrap();
        let p = path.display().to_string();
        let env = |k: &str| match k {
            ENV_CONFIG => Some(p.clone()),
            ENV_SEED => Some("11".to_string()),
            ENV_DESCRIBER_URL => Some("http://x/describe".to_string()),
            _ => None,
        };
        let c = PipelineConfig::resolve(None, &env).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.annotate.theta_conf, 0.9);
        assert_eq!(c.endpoints.describer, "http://x/describe");
        let bad = |k: &str| (k == ENV_SEED).then(|| "x".to_string());
        assert!(matches!(PipelineConfig::resolve(None, &bad), Err(ConfigError::Env { .. })));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = PipelineConfig::default();
        c.har.lambda = 0.5;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.labels.lambdas = vec![0.4, 0.2];
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.annotate.theta_conf = 1.5;
        assert!(c.validate().is_err());
    }
}
