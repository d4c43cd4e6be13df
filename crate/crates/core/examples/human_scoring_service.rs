//! Human mode without a browser: the trainer publishes queries to the HTTP
//! service and this program plays the human, scoring through the API with a
//! deliberately rough eyeball estimate of how close the agent got.
//!
//! cargo run --release --example human_scoring_service -- [episodes]

use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use scorerl::envs::EnvKind;
use scorerl::service::{self, ServiceState};
use scorerl::trainer::{RunConfig, TeacherMode, Trainer};
use serde_json::{json, Value};

fn eyeball(positions: &[Value], target: [f64; 2]) -> f64 {
    let last = positions.last().and_then(Value::as_array).unwrap();
    let (x, y) = (last[0].as_f64().unwrap(), last[1].as_f64().unwrap());
    let d = ((x - target[0]).powi(2) + (y - target[1]).powi(2)).sqrt();
    ((10.0 - 5.0 * d).clamp(0.0, 10.0) * 2.0).round() / 2.0
}

fn main() {
    env_logger::init();
    let mut cfg = RunConfig::desk(EnvKind::PointGoal);
    cfg.episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    cfg.teacher.mode = TeacherMode::Human;

    let (trainer_link, service_link) = service::link();
    let state = ServiceState::new(service_link, cfg.teacher.scoring_range);
    let server = service::spawn(state, SocketAddr::from(([127, 0, 0, 1], 0)), None).unwrap();
    println!("service listening on {}", server.url("/"));
    let trainer = thread::spawn(move || Trainer::with_link(cfg, trainer_link).unwrap().run().unwrap());

    let http = Client::new();
    let get = |path: &str| -> Value { http.get(server.url(path)).send().unwrap().json().unwrap() };
    loop {
        let status = get("/api/status");
        if status["finished"] == true {
            break;
        }
        for q in get("/api/queries").as_array().unwrap() {
            let tid = q["trajectory_id"].as_u64().unwrap();
            let render = get(&format!("/api/trajectories/{tid}"));
            let target = render["annotations"]
                .as_array()
                .and_then(|a| a.iter().find(|x| x["kind"] == "goal"))
                .map(|g| [g["center"][0].as_f64().unwrap(), g["center"][1].as_f64().unwrap()])
                .unwrap_or([0.0, 0.0]);
            let score = eyeball(render["positions"].as_array().unwrap(), target);
            http.post(server.url("/api/scores"))
                .json(&json!({"query_id": q["query_id"], "score": score}))
                .send()
                .unwrap();
            println!("query {} (trajectory {tid}) scored {score}", q["query_id"]);
        }
        thread::sleep(Duration::from_millis(100));
    }
    let art = trainer.join().unwrap();
    println!(
        "done: {} scores, final performance {:.3}",
        art.report.scores_used, art.report.final_performance
    );
    server.shutdown().unwrap();
}
