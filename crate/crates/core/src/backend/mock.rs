//! Minimal in-process HTTP server replaying canned completions responses.
//!
//! Used by the wire-protocol tests and available to anything that needs an
//! offline stand-in for a completions endpoint.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::http::REQUEST_ID_HEADER;

#[derive(Debug, Clone)]
pub enum Match {
    Any,
    /// The request's `prompt` field equals this text.
    Prompt(String),
    /// The raw request body equals these bytes.
    Body(String),
}

impl Match {
    fn accepts(&self, body: &str) -> bool {
        match self {
            Match::Any => true,
            Match::Body(b) => b == body,
            Match::Prompt(p) => serde_json::from_str::<serde_json::Value>(body)
                .ok()
                .and_then(|v| v.get("prompt").and_then(|x| x.as_str()).map(|x| x == p))
                .unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRoute {
    pub matcher: Match,
    /// Served in order; the last one repeats.
    pub responses: Vec<(u16, String)>,
    /// Overrides the echoed request id header.
    pub request_id: Option<String>,
    served: usize,
}

impl MockRoute {
    pub fn new(matcher: Match, status: u16, body: impl Into<String>) -> Self {
        MockRoute {
            matcher,
            responses: vec![(status, body.into())],
            request_id: None,
            served: 0,
        }
    }

    pub fn then(mut self, status: u16, body: impl Into<String>) -> Self {
        self.responses.push((status, body.into()));
        self
    }

    pub fn with_request_id(mut self, id: impl Into<String>) -> Self {
        self.request_id = Some(id.into());
        self
    }

    fn next_response(&mut self) -> (u16, String) {
        let i = self.served.min(self.responses.len() - 1);
        self.served += 1;
        self.responses[i].clone()
    }
}

/// Response body in the completions format with echoed tokens.
pub fn logprob_response(tokens: &[&str], logprobs: &[Option<f64>]) -> String {
    serde_json::json!({
        "id": "cmpl-mock",
        "object": "text_completion",
        "choices": [{
            "index": 0,
            "text": tokens.concat(),
            "logprobs": { "tokens": tokens, "token_logprobs": logprobs },
            "finish_reason": "length"
        }]
    })
    .to_string()
}

pub fn text_response(text: &str) -> String {
    serde_json::json!({
        "id": "cmpl-mock",
        "object": "text_completion",
        "choices": [{ "index": 0, "text": text, "logprobs": null, "finish_reason": "stop" }]
    })
    .to_string()
}

pub struct MockServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    received: Arc<Mutex<Vec<String>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(routes: Vec<MockRoute>) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let received = Arc::new(Mutex::new(Vec::new()));
        let routes = Arc::new(Mutex::new(routes));
        let handle = {
            let shutdown = Arc::clone(&shutdown);
            let received = Arc::clone(&received);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let routes = Arc::clone(&routes);
                    let received = Arc::clone(&received);
                    std::thread::spawn(move || {
                        let _ = serve(stream, &routes, &received);
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            shutdown,
            received,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }

    /// Raw request bodies in arrival order.
    pub fn received(&self) -> Vec<String> {
        self.received.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(
    stream: TcpStream,
    routes: &Mutex<Vec<MockRoute>>,
    received: &Mutex<Vec<String>>,
) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut request_id = None;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            } else if name == REQUEST_ID_HEADER {
                request_id = Some(value.to_string());
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    received.lock().unwrap().push(body.clone());

    let (status, payload, echoed_id) = {
        let mut routes = routes.lock().unwrap();
        match routes.iter_mut().find(|r| r.matcher.accepts(&body)) {
            Some(route) => {
                let (status, payload) = route.next_response();
                (status, payload, route.request_id.clone().or(request_id))
            }
            None => (
                404,
                r#"{"error":"no canned response"}"#.to_string(),
                request_id,
            ),
        }
    };
    let mut out = stream;
    let mut head = format!(
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reason(status),
        payload.len()
    );
    if let Some(id) = echoed_id {
        head.push_str(&format!("{REQUEST_ID_HEADER}: {id}\r\n"));
    }
    head.push_str("\r\n");
    out.write_all(head.as_bytes())?;
    out.write_all(payload.as_bytes())?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
