//! Minimal HTTP/1.1 server for exercising the HTTP clients in unit tests.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Debug, Clone)]
pub struct Canned {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

impl Canned {
    pub fn json(status: u16, body: &str) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: body.to_string(),
        }
    }

    pub fn html(body: &str) -> Self {
        Self {
            status: 200,
            content_type: "text/html; charset=utf-8",
            body: body.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub head: String,
    pub body: String,
}

impl SeenRequest {
    pub fn target(&self) -> &str {
        self.head.split_whitespace().nth(1).unwrap_or("")
    }
}

#[derive(Default)]
struct State {
    queue: VecDeque<Canned>,
    routes: HashMap<String, Canned>,
    seen: Vec<SeenRequest>,
}

pub struct TestServer {
    addr: String,
    state: Arc<Mutex<State>>,
}

impl TestServer {
    /// Serves the canned responses in order, then 404s.
    pub fn start(queue: Vec<Canned>) -> Self {
        Self::spawn(State {
            queue: queue.into(),
            ..Default::default()
        })
    }

    /// Serves by exact request target (path plus query), repeatedly.
    pub fn routes(routes: Vec<(&str, Canned)>) -> Self {
        Self::spawn(State {
            routes: routes.into_iter().map(|(p, c)| (p.to_string(), c)).collect(),
            ..Default::default()
        })
    }

    fn spawn(state: State) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
        let addr = listener.local_addr().unwrap().to_string();
        let state = Arc::new(Mutex::new(state));
        let shared = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let shared = Arc::clone(&shared);
                thread::spawn(move || handle(stream, shared));
            }
        });
        Self { addr, state }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.state.lock().unwrap().seen.clone()
    }
}

fn handle(stream: TcpStream, state: Arc<Mutex<State>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        head.push_str(&line);
    }
    let len = head
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())
                .flatten()
        })
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok();
    let seen = SeenRequest {
        head,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let canned = {
        let mut st = state.lock().unwrap();
        let target = seen.target().to_string();
        st.seen.push(seen);
        st.routes
            .get(&target)
            .cloned()
            .or_else(|| st.queue.pop_front())
            .unwrap_or(Canned {
                status: 404,
                content_type: "text/plain",
                body: "not found".into(),
            })
    };
    let mut out = stream;
    let response = format!(
        "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        canned.status,
        canned.content_type,
        canned.body.len(),
        canned.body
    );
    out.write_all(response.as_bytes()).ok();
}
