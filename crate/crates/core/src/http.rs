//! Minimal blocking JSON-over-HTTP plumbing shared by the service clients.

use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub(crate) enum HttpFailure {
    Status { code: u16, body: String },
    Transport(String),
    Decode(String),
}

impl HttpFailure {
    /// Throttling, server errors and transport failures are worth retrying.
    pub fn retryable(&self) -> bool {
        match self {
            HttpFailure::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
            HttpFailure::Transport(_) => true,
            HttpFailure::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Status { code, body } => {
                let snippet: String = body.chars().take(300).collect();
                write!(f, "HTTP {code}: {snippet}")
            }
            HttpFailure::Transport(m) => write!(f, "transport error: {m}"),
            HttpFailure::Decode(m) => write!(f, "invalid response: {m}"),
        }
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> Result<Value, HttpFailure> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(|e| HttpFailure::Transport(e.to_string()))?;
    let code = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| HttpFailure::Transport(e.to_string()))?;
    if !(200..300).contains(&code) {
        return Err(HttpFailure::Status { code, body: text });
    }
    serde_json::from_str(&text).map_err(|e| HttpFailure::Decode(e.to_string()))
}

#[cfg(test)]
pub(crate) mod testing {
    //! A scripted single-threaded HTTP server for client tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl MockServer {
        /// Serves each `(status, body)` pair to one request, in order.
        pub fn start(responses: Vec<(u16, String)>) -> MockServer {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let log = requests.clone();
            let handle = std::thread::spawn(move || {
                for (status, body) in responses {
                    let (stream, _) = listener.accept().unwrap();
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut content_length = 0usize;
                    let mut line = String::new();
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            content_length = v.trim().parse().unwrap();
                        }
                    }
                    let mut buf = vec![0; content_length];
                    reader.read_exact(&mut buf).unwrap();
                    log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                    let mut stream = stream;
                    write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    )
                    .unwrap();
                    stream.flush().unwrap();
                }
            });
            MockServer { url, requests, handle: Some(handle) }
        }

        pub fn join(mut self) -> Vec<String> {
            if let Some(h) = self.handle.take() {
                h.join().unwrap();
            }
            self.requests.lock().unwrap().clone()
        }
    }
}
