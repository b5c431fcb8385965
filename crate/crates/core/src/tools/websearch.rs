//! Adapter for an external HTTP search endpoint.
//!
//! Issues `GET <endpoint>?q=<query>` and returns the string found at
//! `snippet_pointer` (a JSON pointer) in the response body. The API key, when
//! configured, is sent as a bearer token.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Tool, ToolDescriptor, ToolError};

pub const API_KEY_ENV: &str = "TALM_SEARCH_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebSearchConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_concurrent: usize,
    pub snippet_pointer: String,
    pub label: String,
}

impl WebSearchConfig {
    /// Defaults plus an API key read from `TALM_SEARCH_API_KEY` when set.
    pub fn new(endpoint: &str) -> Self {
        WebSearchConfig {
            endpoint: endpoint.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(10),
            max_concurrent: 4,
            snippet_pointer: "/results/0/snippet".to_string(),
            label: "websearch".to_string(),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub struct WebSearchTool {
    descriptor: ToolDescriptor,
    config: WebSearchConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl WebSearchTool {
    pub fn new(config: WebSearchConfig) -> Result<Self, ToolError> {
        if config.endpoint.is_empty() {
            return Err(ToolError::InvalidDescriptor("web search endpoint is empty".into()));
        }
        if config.max_concurrent == 0 {
            return Err(ToolError::InvalidDescriptor("max_concurrent must be positive".into()));
        }
        let mut descriptor = ToolDescriptor::new(&config.label);
        descriptor.deterministic = false;
        descriptor.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(WebSearchTool {
            descriptor,
            slots: Semaphore {
                permits: Mutex::new(config.max_concurrent),
                freed: Condvar::new(),
            },
            config,
            agent,
        })
    }

    fn failure(&self, message: impl Into<String>) -> ToolError {
        ToolError::Failure {
            label: self.descriptor.label.clone(),
            message: message.into(),
        }
    }
}

impl Tool for WebSearchTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        let _permit = self.slots.acquire();
        let mut request = self.agent.get(&self.config.endpoint).query("q", input);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.call().map_err(|e| match e {
            ureq::Error::Timeout(_) => ToolError::Timeout {
                label: self.descriptor.label.clone(),
                after: self.config.timeout,
            },
            other => self.failure(other.to_string()),
        })?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ToolError::Timeout {
                    label: self.descriptor.label.clone(),
                    after: self.config.timeout,
                },
                other => self.failure(other.to_string()),
            })?;
        let json: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| self.failure(format!("response is not JSON: {e}")))?;
        match json.pointer(&self.config.snippet_pointer) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.failure("snippet is not a string")),
            None => Ok(String::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::Arc;
    use std::thread;

    /// Serves `connections` requests; records each request line and headers.
    fn fixture(
        body: &'static str,
        delay: Duration,
        connections: usize,
    ) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for stream in listener.incoming().take(connections) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    head.push_str(&line);
                }
                seen.push(head);
                thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
            }
            seen
        });
        (format!("http://{addr}/search"), handle)
    }

    fn config(endpoint: String) -> WebSearchConfig {
        WebSearchConfig {
            endpoint,
            api_key: Some("secret".into()),
            timeout: Duration::from_secs(5),
            max_concurrent: 2,
            snippet_pointer: "/results/0/snippet".into(),
            label: "websearch".into(),
        }
    }

    #[test]
    fn returns_top_snippet() {
        let (url, server) = fixture(
            r#"{"results":[{"snippet":"Today in NYC: high of 75F."},{"snippet":"other"}]}"#,
            Duration::ZERO,
            1,
        );
        let tool = WebSearchTool::new(config(url)).unwrap();
        assert!(!tool.descriptor().deterministic);
        assert_eq!(tool.call("nyc weather today").unwrap(), "Today in NYC: high of 75F.");
        let seen = server.join().unwrap();
        assert!(seen[0].starts_with("GET /search?q=nyc"));
        assert!(seen[0].to_ascii_lowercase().contains("authorization: bearer secret"));
    }

    #[test]
    fn times_out() {
        let (url, _server) = fixture(r#"{"results":[]}"#, Duration::from_secs(3), 1);
        let mut cfg = config(url);
        cfg.timeout = Duration::from_millis(200);
        let tool = WebSearchTool::new(cfg).unwrap();
        assert!(matches!(tool.call("slow"), Err(ToolError::Timeout { .. })));
    }

    #[test]
    fn missing_snippet_is_empty_and_bad_json_fails() {
        let (url, server) = fixture(r#"{"results":[]}"#, Duration::ZERO, 1);
        let tool = WebSearchTool::new(config(url)).unwrap();
        assert_eq!(tool.call("x").unwrap(), "");
        server.join().unwrap();
        let (url, server) = fixture("not json", Duration::ZERO, 1);
        let tool = WebSearchTool::new(config(url)).unwrap();
        assert!(matches!(tool.call("x"), Err(ToolError::Failure { .. })));
        server.join().unwrap();
    }

    #[test]
    fn concurrent_calls_are_served() {
        let (url, server) = fixture(r#"{"results":[{"snippet":"ok"}]}"#, Duration::from_millis(20), 6);
        let tool = Arc::new(WebSearchTool::new(config(url)).unwrap());
        let handles: Vec<_> = (0..6)
            .map(|i| {
                let t = Arc::clone(&tool);
                thread::spawn(move || t.call(&format!("q{i}")))
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().unwrap(), "ok");
        }
        assert_eq!(server.join().unwrap().len(), 6);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(WebSearchTool::new(config(String::new())).is_err());
        let mut cfg = config("http://localhost/".into());
        cfg.max_concurrent = 0;
        assert!(WebSearchTool::new(cfg).is_err());
    }
}
