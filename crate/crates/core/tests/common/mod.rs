#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use facdiff_core::remote::wire::InfoResponse;
use facdiff_core::remote::{decode_tensor, encode_tensor};
use facdiff_core::Schedule;
use serde_json::{json, Value};

pub struct Request {
    pub method: String,
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

pub type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

/// Loopback HTTP server running `handler` on a background thread.
pub struct TestServer {
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub log: Arc<Mutex<Vec<Request>>>,
}

impl TestServer {
    pub fn start(handler: Box<Handler>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind loopback"));
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let (s, h, l) = (server.clone(), hits.clone(), log.clone());
        let thread = std::thread::spawn(move || {
            for mut rq in s.incoming_requests() {
                let mut body = String::new();
                rq.as_reader().read_to_string(&mut body).unwrap();
                let req = Request {
                    method: rq.method().to_string(),
                    path: rq.url().to_string(),
                    body,
                    authorization: rq
                        .headers()
                        .iter()
                        .find(|hd| hd.field.equiv("Authorization"))
                        .map(|hd| hd.value.to_string()),
                };
                h.fetch_add(1, Ordering::SeqCst);
                let (status, text) = handler(&req);
                l.lock().unwrap().push(req);
                let header =
                    tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let resp = tiny_http::Response::from_string(text)
                    .with_status_code(status)
                    .with_header(header);
                let _ = rq.respond(resp);
            }
        });
        Self {
            server,
            thread: Some(thread),
            url,
            hits,
            log,
        }
    }

    /// Reference server: ε_i = x_t for each condition, deterministic embeddings.
    pub fn echo(schedule: Schedule, resolution: [usize; 3]) -> Self {
        Self::start(Box::new(move |r| echo_handler(&schedule, resolution, r)))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// 4-d unit vector from a scalar summary.
pub fn embed_scalar(s: f64) -> Vec<f64> {
    unit(vec![1.0, s.sin(), s.cos(), 0.5 * s])
}

pub fn echo_handler(schedule: &Schedule, resolution: [usize; 3], r: &Request) -> (u16, String) {
    match (r.method.as_str(), r.path.as_str()) {
        ("GET", "/v1/info") => {
            let (c, h, w) = (resolution[0], resolution[1], resolution[2]);
            let info = InfoResponse::from_schedule(schedule, (c, h, w), "echo");
            (200, serde_json::to_string(&info).unwrap())
        }
        ("POST", "/v1/predict_noise") => {
            let v: Value = serde_json::from_str(&r.body).unwrap();
            let x = v["x_t"].as_str().unwrap().to_string();
            let n = v["conditions"].as_array().unwrap().len();
            (200, json!({ "epsilons": vec![x; n] }).to_string())
        }
        ("POST", "/v1/embed_image") => {
            let v: Value = serde_json::from_str(&r.body).unwrap();
            let s: Vec<usize> = serde_json::from_value(v["shape"].clone()).unwrap();
            let x = decode_tensor(v["image"].as_str().unwrap(), (s[0], s[1], s[2])).unwrap();
            (200, json!({ "embedding": embed_scalar(x.mean()) }).to_string())
        }
        ("POST", "/v1/embed_text") => {
            let v: Value = serde_json::from_str(&r.body).unwrap();
            let text = v["text"].as_str().unwrap();
            let s = text.bytes().map(|b| b as f64).sum::<f64>() / 255.0;
            (200, json!({ "embedding": embed_scalar(s) }).to_string())
        }
        _ => (404, format!("no route {} {}", r.method, r.path)),
    }
}

/// Re-encodes `x` so tests can build custom epsilon payloads.
pub fn encode(x: &facdiff_core::PixelTensor) -> String {
    encode_tensor(x)
}
