//! A tiny deterministic OpenAI-compatible endpoint.
//!
//! Serves `/v1/chat/completions` from a canned behavior so runs can be
//! exercised end to end without a real model server: reply with a fixed
//! string, derive the reply from the prompt, or take over the raw response.
//! The server tracks request counts and the maximum number of concurrently
//! in-flight requests, which is how cache and parallelism contracts are
//! asserted in tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// A parsed incoming HTTP request.
pub struct ParsedRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

impl ParsedRequest {
    /// The user-message content of a chat-completion request body.
    pub fn prompt(&self) -> Option<String> {
        let value: serde_json::Value = serde_json::from_str(&self.body).ok()?;
        value
            .get("messages")?
            .get(0)?
            .get("content")?
            .as_str()
            .map(str::to_owned)
    }
}

/// Responder with full control over status and body.
pub type RawResponder = Arc<dyn Fn(&ParsedRequest) -> (u16, String) + Send + Sync>;

/// What the server answers with.
#[derive(Clone)]
pub enum MockBehavior {
    /// Always the same completion text.
    Echo(String),
    /// Completion text computed from the prompt.
    FromPrompt(Arc<dyn Fn(&str) -> String + Send + Sync>),
    /// Full control: return (status, raw body) for the parsed request.
    Raw(RawResponder),
}

/// Failure injection and latency knobs.
#[derive(Clone)]
pub struct MockOptions {
    /// Respond to the first N requests with `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Sleep this long while a request is in flight.
    pub latency: Duration,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            fail_first: 0,
            fail_status: 500,
            latency: Duration::ZERO,
        }
    }
}

struct ServerState {
    behavior: MockBehavior,
    options: MockOptions,
    requests: AtomicUsize,
    failures_left: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

/// Handle to a running mock server; shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(behavior: MockBehavior, options: MockOptions) -> std::io::Result<MockServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(ServerState {
            failures_left: AtomicUsize::new(options.fail_first),
            behavior,
            options,
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let shutdown = Arc::new(AtomicBool::new(false));

        let accept_state = Arc::clone(&state);
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || {
            while !accept_shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = Arc::clone(&accept_state);
                        std::thread::spawn(move || handle_connection(stream, &state));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(MockServer {
            addr,
            state,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    /// Server that always completes with `text`.
    pub fn echo(text: impl Into<String>) -> std::io::Result<MockServer> {
        MockServer::start(MockBehavior::Echo(text.into()), MockOptions::default())
    }

    /// Base URL, e.g. `http://127.0.0.1:49152`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of HTTP requests fully parsed so far.
    pub fn request_count(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously in-flight requests observed.
    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, state: &ServerState) {
    let _ = serve_one(stream, state);
}

fn serve_one(mut stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let request = match read_request(&mut stream)? {
        Some(r) => r,
        None => return Ok(()),
    };
    state.requests.fetch_add(1, Ordering::SeqCst);
    let now_in_flight = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state
        .max_in_flight
        .fetch_max(now_in_flight, Ordering::SeqCst);

    if !state.options.latency.is_zero() {
        std::thread::sleep(state.options.latency);
    }

    let (status, body) = respond(state, &request);
    let result = write_response(&mut stream, status, &body);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    result
}

fn respond(state: &ServerState, request: &ParsedRequest) -> (u16, String) {
    if state
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (
            state.options.fail_status,
            r#"{"error":"injected failure"}"#.to_string(),
        );
    }
    match &state.behavior {
        MockBehavior::Echo(text) => (200, completion_body(text)),
        MockBehavior::FromPrompt(f) => {
            let prompt = request.prompt().unwrap_or_default();
            (200, completion_body(&f(&prompt)))
        }
        MockBehavior::Raw(f) => f(request),
    }
}

/// A fixed-shape chat completion body (deterministic: no timestamps or ids).
pub fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "created": 0,
        "model": "mock",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })
    .to_string()
}

fn read_request(stream: &mut TcpStream) -> std::io::Result<Option<ParsedRequest>> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(None);
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok(Some(ParsedRequest {
        method,
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
    }))
}

fn write_response(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Mock",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len(),
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}
