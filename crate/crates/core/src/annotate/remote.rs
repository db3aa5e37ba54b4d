//! HTTP adapter for a remote describer service.

use std::time::Duration;

use serde_json::{json, Value};

use super::{AnnotateError, Describer, DescriberRequest};

#[derive(Debug, Clone)]
pub struct HttpDescriber {
    url: String,
    retries: usize,
    agent: ureq::Agent,
}

impl HttpDescriber {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: usize) -> Self {
        Self {
            url: url.into(),
            retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn body(req: &DescriberRequest) -> Value {
        json!({
            "t_s": req.t_s,
            "frames": req.frames.clone().unwrap_or_default(),
            "params": {
                "session_id": req.session_id,
                "modality": req.modality,
                "clip_length_s": req.clip_length_s,
                "frame_rate_fps": req.frame_rate_fps,
                "resolution": req.resolution,
            },
        })
    }
}

impl Describer for HttpDescriber {
    /// Transport failures and 5xx responses are retried; a 4xx response or
    /// an undecodable body is handed to the contract check as `null`, which
    /// makes the description empty.
    fn describe_raw(&self, request: &DescriberRequest) -> Result<Value, AnnotateError> {
        let body = Self::body(request);
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.agent.post(&self.url).send_json(body.clone()) {
                Ok(resp) => return Ok(resp.into_json::<Value>().unwrap_or(Value::Null)),
                Err(ureq::Error::Status(code, _)) if code < 500 => return Ok(Value::Null),
                Err(e) => last = e.to_string(),
            }
        }
        Err(AnnotateError::Transport(last))
    }
}

#[cfg(test)]
mod tests {
    use super::super::describe;
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn serve_once(body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
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
        });
        format!("http://{addr}/describe")
    }

    #[test]
    fn round_trip_through_local_server() {
        let url = serve_once(r#"{"actions":["brewing coffee"],"objects":["mug"],"location":"at coffee machine","confidence":0.85}"#);
        let d = describe(&DescriberRequest::new("s", 9.0), &HttpDescriber::new(url, Duration::from_secs(5), 0)).unwrap();
        assert!(!d.empty);
        assert_eq!(d.actions, vec!["brewing coffee"]);
    }

    #[test]
    fn unreachable_service_is_retriable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = describe(
            &DescriberRequest::new("s", 9.0),
            &HttpDescriber::new(format!("http://{addr}/"), Duration::from_millis(500), 1),
        )
        .unwrap_err();
        assert!(err.is_retriable());
    }
}
