//! Scripted HTTP crowd used by the service and acceptance tests.
#![allow(dead_code)]

use crowdenhance_core::imaging::encode_png;
use crowdenhance_core::scenes::low_light_scene;
use serde_json::Value;

pub fn scene_png(seed: u64, w: usize, h: usize) -> Vec<u8> {
    encode_png(&low_light_scene(seed, w, h))
}

/// Something that serves the API and can be killed and brought back on the
/// same data directory.
pub trait Server {
    fn base(&self) -> String;
    async fn restart(&mut self);
}

#[derive(Clone)]
pub struct Api {
    pub http: reqwest::Client,
}

impl Default for Api {
    fn default() -> Self {
        Self {
            http: reqwest::Client::new(),
        }
    }
}

impl Api {
    pub async fn create(&self, base: &str, png: Vec<u8>, config: &str) -> (u16, Value) {
        let part = reqwest::multipart::Part::bytes(png).file_name("photo.png");
        let form = reqwest::multipart::Form::new()
            .part("image", part)
            .text("config", config.to_string());
        let resp = self.http.post(format!("{base}/sessions")).multipart(form).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_json(&self, url: String) -> (u16, Value) {
        let resp = self.http.get(url).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_bytes(&self, url: String) -> (u16, Vec<u8>) {
        let resp = self.http.get(url).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.bytes().await.unwrap().to_vec())
    }

    pub async fn microtask(&self, base: &str, worker: &str) -> (u16, Value) {
        self.get_json(format!("{base}/microtask?worker={worker}")).await
    }

    pub async fn submit(&self, base: &str, worker: &str, microtask_id: &str, alphas: &[f64]) -> (u16, Value) {
        let body = serde_json::json!({ "worker": worker, "microtask_id": microtask_id, "alphas": alphas });
        let resp = self.http.post(format!("{base}/responses")).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }
}

/// UI position that yields `effective` under the assignment's reversal.
pub fn ui_for(effective: f64, reversed: bool) -> f64 {
    if reversed {
        1.0 - effective
    } else {
        effective
    }
}

/// Raw slider values for an assignment: `target` on every target slot and
/// `check` on the check slot, both as effective positions.
pub fn answer(assignment: &Value, target: f64, check: f64) -> Vec<f64> {
    let reversed = assignment["reversed"].as_bool().unwrap();
    assignment["slots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|slot| {
            let eff = if slot["kind"] == "check" { check } else { target };
            ui_for(eff, reversed)
        })
        .collect()
}

/// Effective target positions for step `k` (zero-based): dyadic so that
/// reversal round-trips exactly. Six honest workers, then the replacement.
pub fn step_alphas(k: usize) -> [f64; 7] {
    let shift = (k % 5) as f64 / 64.0;
    [8.0, 16.0, 24.0, 40.0, 48.0, 56.0, 32.0].map(|v| v / 64.0 + shift)
}

/// Exact median of [`step_alphas`].
pub fn step_median(k: usize) -> f64 {
    let mut v = step_alphas(k).to_vec();
    v.sort_by(f64::total_cmp);
    v[3]
}

#[derive(Debug, Default)]
pub struct ScriptReport {
    pub steps: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Times a worker found no work while the microtask was full.
    pub refused_while_full: usize,
    pub restarted: bool,
}

/// Drives one session to completion with seven responses per step: six
/// honest workers, one who fails the check, and one replacement deployed
/// after the rejection. When `restart_at = Some((k, n))`, the server is
/// restarted after the `n`-th accepted response of step `k`.
pub async fn drive_scripted<S: Server>(
    api: &Api,
    server: &mut S,
    session_id: &str,
    total_steps: usize,
    restart_at: Option<(usize, usize)>,
) -> ScriptReport {
    let mut report = ScriptReport::default();
    for k in 0..total_steps {
        let alphas = step_alphas(k);
        let mut accepted_this_step = 0;
        let base = server.base();
        let (st, session) = api.get_json(format!("{base}/sessions/{session_id}")).await;
        assert_eq!(st, 200);
        assert_eq!(session["step_ordinal"].as_u64(), Some(k as u64 + 1), "{session}");

        // Six honest workers plus the one who will fail the check.
        let mut held = Vec::new();
        for w in 0..6 {
            let worker = format!("honest{w}");
            let (st, a) = api.microtask(&server.base(), &worker).await;
            assert_eq!(st, 200, "{a}");
            held.push((worker, a, alphas[w]));
        }
        let (st, bad) = api.microtask(&server.base(), "careless").await;
        assert_eq!(st, 200, "{bad}");

        // All seven slots are handed out, so an eighth worker gets nothing.
        let (st, _) = api.microtask(&server.base(), "replacement").await;
        if st == 404 {
            report.refused_while_full += 1;
        }

        for (worker, a, alpha) in &held {
            let mt = a["microtask_id"].as_str().unwrap();
            let (st, out) = api.submit(&server.base(), worker, mt, &answer(a, *alpha, 0.5)).await;
            assert_eq!(st, 200, "{out}");
            assert_eq!(out["status"], "accepted");
            report.accepted += 1;
            accepted_this_step += 1;
            if restart_at == Some((k, accepted_this_step)) {
                server.restart().await;
                report.restarted = true;
            }
        }

        let mt = bad["microtask_id"].as_str().unwrap();
        let (st, out) = api.submit(&server.base(), "careless", mt, &answer(&bad, 0.0, 0.95)).await;
        assert_eq!(st, 200, "{out}");
        assert_eq!(out["status"], "rejected");
        report.rejected += 1;
        let (st, s) = api.get_json(format!("{}/sessions/{session_id}", server.base())).await;
        assert_eq!(st, 200);
        assert_eq!(s["accepted_responses"].as_u64(), Some(6));

        let (st, rep) = api.microtask(&server.base(), "replacement").await;
        assert_eq!(st, 200, "{rep}");
        assert_eq!(rep["microtask_id"].as_str(), Some(mt), "replacement reuses the microtask");
        let (st, out) = api.submit(&server.base(), "replacement", mt, &answer(&rep, alphas[6], 0.5)).await;
        assert_eq!(st, 200, "{out}");
        assert_eq!(out["status"], "accepted");
        assert_eq!(out["advanced"].as_array().unwrap().len(), 1, "{out}");
        report.accepted += 1;
        report.steps += 1;
    }
    report
}
