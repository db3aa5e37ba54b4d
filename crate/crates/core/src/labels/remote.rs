//! HTTP adapters for a remote reasoner and embedder. Every call is a JSON
//! POST of `{"op": <operation>, ...arguments}`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ActivityCluster, ComponentScores, Dimension, Embedder, LabelError, Reasoner};
use crate::annotate::SceneDescription;

#[derive(Debug, Clone)]
struct Endpoint {
    url: String,
    retries: usize,
    agent: ureq::Agent,
}

impl Endpoint {
    fn new(url: String, timeout: Duration, retries: usize) -> Self {
        Self {
            url,
            retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Transport failures and 5xx responses are retried; any other failure
    /// is reported without retrying.
    fn call<T: DeserializeOwned>(&self, body: Value) -> Result<T, LabelError> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.agent.post(&self.url).send_json(body.clone()) {
                Ok(resp) => return resp.into_json::<T>().map_err(|e| LabelError::Reasoner(format!("undecodable response: {e}"))),
                Err(ureq::Error::Status(code, _)) if code < 500 => return Err(LabelError::Reasoner(format!("status {code}"))),
                Err(e) => last = e.to_string(),
            }
        }
        Err(LabelError::Reasoner(last))
    }
}

#[derive(Debug, Clone)]
pub struct HttpReasoner(Endpoint);

impl HttpReasoner {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: usize) -> Self {
        Self(Endpoint::new(url.into(), timeout, retries))
    }
}

#[derive(Deserialize)]
struct Zones {
    zones: Vec<String>,
}

#[derive(Deserialize)]
struct Label {
    label: String,
}

#[derive(Deserialize)]
struct Scores {
    action: f64,
    object: f64,
    location: f64,
}

#[derive(Deserialize)]
struct Name {
    name: String,
}

fn unit(x: f64, what: &str) -> Result<f64, LabelError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(LabelError::Reasoner(format!("{what} similarity {x} outside [0, 1]")))
    }
}

impl Reasoner for HttpReasoner {
    fn consolidate_locations(&self, locations: &[String]) -> Result<Vec<String>, LabelError> {
        Ok(self.0.call::<Zones>(json!({"op": "consolidate_locations", "locations": locations}))?.zones)
    }

    fn canonical_activity(&self, zone: &str, desc: &SceneDescription) -> Result<String, LabelError> {
        Ok(self.0.call::<Label>(json!({"op": "canonical_activity", "zone": zone, "description": desc}))?.label)
    }

    fn component_similarity(&self, desc: &SceneDescription, desc_zone: &str, cluster: &ActivityCluster) -> Result<ComponentScores, LabelError> {
        let s: Scores = self.0.call(json!({
            "op": "component_similarity",
            "description": desc,
            "zone": desc_zone,
            "cluster": cluster,
        }))?;
        Ok(ComponentScores {
            action: unit(s.action, "action")?,
            object: unit(s.object, "object")?,
            location: unit(s.location, "location")?,
        })
    }

    fn expand(&self, label: &str, cluster: &ActivityCluster) -> Result<BTreeMap<Dimension, String>, LabelError> {
        self.0.call(json!({"op": "expand", "label": label, "cluster": cluster}))
    }

    fn name_group(&self, labels: &[String]) -> Result<String, LabelError> {
        Ok(self.0.call::<Name>(json!({"op": "name_group", "labels": labels}))?.name)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder(Endpoint);

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: usize) -> Self {
        Self(Endpoint::new(url.into(), timeout, retries))
    }
}

#[derive(Deserialize)]
struct Embedding {
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LabelError> {
        Ok(self.0.call::<Embedding>(json!({"op": "embed", "text": text}))?.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Answers one request with `body` and hands back the request body.
    fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", body.len(), body).unwrap();
            String::from_utf8(buf).unwrap()
        });
        (format!("http://{addr}/reason"), handle)
    }

    #[test]
    fn reasoner_round_trip() {
        let (url, h) = serve_once(r#"{"name": "food preparation"}"#);
        let r = HttpReasoner::new(url, Duration::from_secs(5), 0);
        let name = r.name_group(&["preparing cereal".into(), "preparing sandwich".into()]).unwrap();
        assert_eq!(name, "food preparation");
        let sent: Value = serde_json::from_str(&h.join().unwrap()).unwrap();
        assert_eq!(sent["op"], "name_group");
    }

    #[test]
    fn embedder_round_trip() {
        let (url, _h) = serve_once(r#"{"embedding": [0.6, 0.8]}"#);
        let e = HttpEmbedder::new(url, Duration::from_secs(5), 0);
        assert_eq!(e.embed("x").unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn unreachable_service_is_an_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let e = HttpEmbedder::new(format!("http://127.0.0.1:{port}/"), Duration::from_millis(200), 1);
        assert!(matches!(e.embed("x"), Err(LabelError::Reasoner(_))));
    }
}
