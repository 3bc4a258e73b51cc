//! In-process mock HTTP server with scripted response programs.
//!
//! The program decides the response *text*; the request path decides the
//! *wire shape*, so every backend extractor can run against this server:
//!
//! - `POST /v1/chat/completions` — chat-completions JSON
//! - `POST /v1beta/models/<m>:generateContent` — generate-content JSON
//! - `POST /api/generate` — local-daemon JSON
//! - `POST /mock/generate` (and anything else) — `{"text": ...}`

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::Result;
use crate::infer::math::Rng64;

/// What the mock answers with.
#[derive(Debug, Clone)]
pub enum MockProgram {
    /// Always the same body.
    Fixed(String),
    /// Cycle through the given bodies.
    Alternating(Vec<String>),
    /// Answer "0" with probability `p_zero`, else "1"; seeded.
    Probabilistic { p_zero: f64, seed: u64 },
}

struct ProgramState {
    program: MockProgram,
    counter: u64,
    rng: Rng64,
}

impl ProgramState {
    fn next_text(&mut self) -> String {
        let text = match &self.program {
            MockProgram::Fixed(s) => s.clone(),
            MockProgram::Alternating(items) => {
                items[(self.counter % items.len() as u64) as usize].clone()
            }
            MockProgram::Probabilistic { p_zero, .. } => {
                if (self.rng.next_f32() as f64) < *p_zero {
                    "0".to_string()
                } else {
                    "1".to_string()
                }
            }
        };
        self.counter += 1;
        text
    }
}

/// Handle to a running mock server; shuts down on [`MockServer::shutdown`]
/// or drop.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind 127.0.0.1 on an OS-assigned port and serve `program`.
    /// The first `fail_first` requests answer HTTP 500.
    pub fn start(program: MockProgram, fail_first: u64) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU64::new(0));
        let seed = match &program {
            MockProgram::Probabilistic { seed, .. } => *seed,
            _ => 0,
        };
        let state = Arc::new(Mutex::new(ProgramState {
            program,
            counter: 0,
            rng: Rng64::new(seed),
        }));

        let stop_accept = Arc::clone(&stop);
        let requests_accept = Arc::clone(&requests);
        let accept_thread = std::thread::spawn(move || {
            while !stop_accept.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = Arc::clone(&state);
                        let requests = Arc::clone(&requests_accept);
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, state, requests, fail_first);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(Self {
            addr,
            stop,
            requests,
            accept_thread: Some(accept_thread),
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:49123`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests answered so far (including injected failures).
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn handle_connection(
    mut stream: TcpStream,
    state: Arc<Mutex<ProgramState>>,
    requests: Arc<AtomicU64>,
    fail_first: u64,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let (path, _body) = read_request(&mut stream)?;

    let n = requests.fetch_add(1, Ordering::SeqCst);
    if n < fail_first {
        return respond(
            &mut stream,
            500,
            "application/json",
            "{\"error\":\"injected failure\"}",
        );
    }

    let text = state.lock().expect("mock state lock").next_text();
    let body = shape_response(&path, &text);
    respond(&mut stream, 200, "application/json", &body)
}

/// Read one HTTP/1.1 request; returns (path, body).
fn read_request(stream: &mut TcpStream) -> std::io::Result<(String, Vec<u8>)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            break pos + 4;
        }
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed mid-headers",
            ));
        }
        buf.extend_from_slice(&chunk[..n]);
    };

    let head = String::from_utf8_lossy(&buf[..header_end]).into_owned();
    let mut lines = head.lines();
    let request_line = lines.next().unwrap_or_default();
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    let content_length = lines
        .filter_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.trim()
                .eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())?
        })
        .next()
        .unwrap_or(0);

    let mut body = buf[header_end..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    Ok((path, body))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

/// Wrap `text` in the JSON shape the requested path implies.
fn shape_response(path: &str, text: &str) -> String {
    if path.starts_with("/v1/chat/completions") {
        serde_json::json!({
            "id": "chatcmpl-mock",
            "object": "chat.completion",
            "model": "mock",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop"
            }]
        })
        .to_string()
    } else if path.starts_with("/v1beta/") || path.contains(":generateContent") {
        serde_json::json!({
            "candidates": [{
                "content": {"parts": [{"text": text}], "role": "model"},
                "finishReason": "STOP"
            }]
        })
        .to_string()
    } else if path.starts_with("/api/generate") {
        serde_json::json!({
            "model": "mock",
            "response": text,
            "done": true
        })
        .to_string()
    } else {
        serde_json::json!({ "text": text }).to_string()
    }
}

fn respond(
    stream: &mut TcpStream,
    status: u16,
    content_type: &str,
    body: &str,
) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        500 => "Internal Server Error",
        _ => "Unknown",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_post(addr: SocketAddr, path: &str, body: &str) -> String {
        let mut s = TcpStream::connect(addr).unwrap();
        let req = format!(
            "POST {path} HTTP/1.1\r\nHost: mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        s.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    }

    #[test]
    fn fixed_program_serves_shaped_responses() {
        let server = MockServer::start(MockProgram::Fixed("0".into()), 0).unwrap();
        let chat = raw_post(server.addr(), "/v1/chat/completions", "{}");
        assert!(chat.contains("\"content\":\"0\""), "{chat}");
        let gem = raw_post(
            server.addr(),
            "/v1beta/models/m:generateContent",
            "{}",
        );
        assert!(gem.contains("\"candidates\""), "{gem}");
        let daemon = raw_post(server.addr(), "/api/generate", "{}");
        assert!(daemon.contains("\"response\":\"0\""), "{daemon}");
        let plain = raw_post(server.addr(), "/mock/generate", "{}");
        assert!(plain.contains("\"text\":\"0\""), "{plain}");
        assert_eq!(server.request_count(), 4);
        server.shutdown();
    }

    #[test]
    fn alternating_program_cycles() {
        let server =
            MockServer::start(MockProgram::Alternating(vec!["1".into(), "no".into()]), 0).unwrap();
        let a = raw_post(server.addr(), "/mock/generate", "{}");
        let b = raw_post(server.addr(), "/mock/generate", "{}");
        let c = raw_post(server.addr(), "/mock/generate", "{}");
        assert!(a.contains("\"text\":\"1\""));
        assert!(b.contains("\"text\":\"no\""));
        assert!(c.contains("\"text\":\"1\""));
    }

    #[test]
    fn fail_first_injects_500s_then_recovers() {
        let server = MockServer::start(MockProgram::Fixed("1".into()), 2).unwrap();
        let a = raw_post(server.addr(), "/mock/generate", "{}");
        assert!(a.starts_with("HTTP/1.1 500"));
        let b = raw_post(server.addr(), "/mock/generate", "{}");
        assert!(b.starts_with("HTTP/1.1 500"));
        let c = raw_post(server.addr(), "/mock/generate", "{}");
        assert!(c.starts_with("HTTP/1.1 200"));
    }
}
