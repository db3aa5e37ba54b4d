//! Describer, reasoner and embedder selection from the configured endpoints.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use organichar::annotate::{AnnotateError, Describer, DescriberRequest, HttpDescriber, MockDescriber};
use organichar::config::PipelineConfig;
use organichar::labels::{Embedder, HashEmbedder, HttpEmbedder, HttpReasoner, MockReasoner, Reasoner};
use organichar::pipeline::Services;
use organichar::sensor::{catalog_entry, ActivityScript, ScriptStep, Session};
use serde_json::Value;

pub const SCRIPT_FILE: &str = "script.json";

pub struct Backends {
    pub describer: Box<dyn Describer>,
    pub reasoner: Box<dyn Reasoner>,
    pub embedder: Box<dyn Embedder>,
}

impl Backends {
    pub fn services(&self) -> Services<'_> {
        Services {
            describer: self.describer.as_ref(),
            reasoner: self.reasoner.as_ref(),
            embedder: self.embedder.as_ref(),
        }
    }
}

fn is_mock(endpoint: &str) -> bool {
    endpoint == "mock"
}

/// Script for the mock describer: `script.json` in the session directory,
/// else one rebuilt from `labels.csv` with zones from the activity catalog.
fn mock_script(dir: &Path, session: &Session) -> Result<ActivityScript> {
    let path = dir.join(SCRIPT_FILE);
    if path.exists() {
        let mut script = ActivityScript::load(&path)?;
        script.session_id = session.session_id.clone();
        return Ok(script);
    }
    let Some(gt) = &session.ground_truth else {
        bail!("{}: the mock describer needs {SCRIPT_FILE} or labels.csv", dir.display());
    };
    let steps = gt
        .iter()
        .map(|g| {
            let zone = catalog_entry(&g.activity)
                .with_context(|| format!("{}: activity `{}` is not in the catalog; provide {SCRIPT_FILE}", dir.display(), g.activity))?
                .zone;
            Ok(ScriptStep::new(&g.activity, zone, g.start_s, g.end_s - g.start_s))
        })
        .collect::<Result<_>>()?;
    Ok(ActivityScript {
        session_id: session.session_id.clone(),
        duration_s: session.duration_s,
        steps,
    })
}

pub fn backends(cfg: &PipelineConfig, sessions: &[(impl AsRef<Path>, &Session)]) -> Result<Backends> {
    let timeout = Duration::from_secs_f64(cfg.annotate.timeout_s);
    let retries = cfg.annotate.retries;
    let e = &cfg.endpoints;
    let describer: Box<dyn Describer> = if is_mock(&e.describer) {
        let scripts = sessions.iter().map(|(d, s)| mock_script(d.as_ref(), s)).collect::<Result<Vec<_>>>()?;
        Box::new(MockDescriber::new(scripts, cfg.annotate.mock.clone(), organichar::seed::derive(cfg.seed, "describer")))
    } else {
        Box::new(HttpDescriber::new(&e.describer, timeout, retries))
    };
    let reasoner: Box<dyn Reasoner> = if is_mock(&e.reasoner) {
        Box::new(MockReasoner)
    } else {
        Box::new(HttpReasoner::new(&e.reasoner, timeout, retries))
    };
    let embedder: Box<dyn Embedder> = if is_mock(&e.embedder) {
        Box::new(HashEmbedder::default())
    } else {
        Box::new(HttpEmbedder::new(&e.embedder, timeout, retries))
    };
    Ok(Backends {
        describer,
        reasoner,
        embedder,
    })
}

/// Records every request passed to the wrapped describer.
pub struct LoggingDescriber<'a> {
    inner: &'a dyn Describer,
    log: Mutex<Vec<DescriberRequest>>,
}

impl<'a> LoggingDescriber<'a> {
    pub fn new(inner: &'a dyn Describer) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Logged requests ordered by session and time.
    pub fn into_log(self) -> Vec<DescriberRequest> {
        let mut log = self.log.into_inner().unwrap_or_else(|e| e.into_inner());
        log.sort_by(|a, b| a.session_id.cmp(&b.session_id).then(a.t_s.total_cmp(&b.t_s)));
        log
    }
}

impl Describer for LoggingDescriber<'_> {
    fn describe_raw(&self, request: &DescriberRequest) -> Result<Value, AnnotateError> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        self.inner.describe_raw(request)
    }
}
