#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::thread::JoinHandle;

use facdiff_core::remote::decode_tensor;
use facdiff_core::remote::wire::InfoResponse;
use facdiff_core::Schedule;
use serde_json::{json, Value};

pub fn facdiff(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facdiff"))
        .args(args)
        .current_dir(dir)
        .env_remove("FD_ENDPOINT")
        .env_remove("FD_TOKEN")
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Two Gaussian mixtures `A` (checkerboard mean) and `B` (constant mean).
pub fn mixtures(shape: [usize; 3]) -> Value {
    let [c, h, w] = shape;
    let checker: Vec<f64> = (0..c * h * w)
        .map(|i| if (i % w + i / w) % 2 == 0 { 0.8 } else { -0.8 })
        .collect();
    json!({
        "conditions": {
            "A": [{"w": 1.0, "mean": checker, "var": 0.5}],
            "B": [{"w": 0.5, "mean": 0.4, "var": 0.2}, {"w": 0.5, "mean": -0.2, "var": 0.3}],
            "U": [{"w": 1.0, "mean": 0.0, "var": 1.0}]
        },
        "unconditional": "U"
    })
}

/// Oracle-backed config at a small resolution.
pub fn oracle_config(decomposition: Value, conditions: Value, shape: [usize; 3]) -> Value {
    json!({
        "decomposition": decomposition,
        "conditions": conditions,
        "backend": "oracle",
        "mixtures": mixtures(shape),
        "sampler": {"steps": 20, "kind": "ddim", "resolution": shape},
        "seed": 7,
        "out": "out"
    })
}

/// Loopback server: ε = x_t, deterministic unit embeddings.
pub struct EchoServer {
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    pub url: String,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl EchoServer {
    pub fn start(resolution: [usize; 3]) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let s = server.clone();
        let schedule = Schedule::default();
        let thread = std::thread::spawn(move || {
            for mut rq in s.incoming_requests() {
                let mut body = String::new();
                rq.as_reader().read_to_string(&mut body).unwrap();
                let v: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let out = match rq.url() {
                    "/v1/info" => {
                        let [c, h, w] = resolution;
                        serde_json::to_value(InfoResponse::from_schedule(&schedule, (c, h, w), "echo"))
                            .unwrap()
                    }
                    "/v1/predict_noise" => {
                        let n = v["conditions"].as_array().unwrap().len();
                        json!({ "epsilons": vec![v["x_t"].clone(); n] })
                    }
                    "/v1/embed_image" => {
                        let s: Vec<usize> = serde_json::from_value(v["shape"].clone()).unwrap();
                        let x = decode_tensor(v["image"].as_str().unwrap(), (s[0], s[1], s[2])).unwrap();
                        let m = x.mean();
                        json!({ "embedding": unit(vec![1.0, m, m * m]) })
                    }
                    "/v1/embed_text" => {
                        let k = v["text"].as_str().unwrap().len() as f64 / 10.0;
                        json!({ "embedding": unit(vec![1.0, k, 0.0]) })
                    }
                    _ => Value::Null,
                };
                let header =
                    tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = rq.respond(tiny_http::Response::from_string(out.to_string()).with_header(header));
            }
        });
        Self {
            server,
            thread: Some(thread),
            url,
        }
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
