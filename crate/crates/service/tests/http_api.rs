mod common;

use std::path::PathBuf;

use common::{answer, drive_scripted, scene_png, step_median, Api, Server};
use crowdenhance_core::imaging::decode_image;
use crowdenhance_service::{build, Service, ServiceConfig, Store};
use serde_json::Value;
use tempfile::TempDir;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

const FAST: &str = r#"{"L": 1, "S": 1, "preview_max_edge": 16}"#;

struct Local {
    dir: PathBuf,
    cfg: ServiceConfig,
    static_dir: Option<PathBuf>,
    base: String,
    task: JoinHandle<()>,
}

impl Local {
    async fn start(dir: PathBuf, cfg: ServiceConfig, static_dir: Option<PathBuf>) -> Self {
        let app = build(&dir, cfg.clone(), static_dir.clone()).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            dir,
            cfg,
            static_dir,
            base,
            task,
        }
    }
}

impl Server for Local {
    fn base(&self) -> String {
        self.base.clone()
    }

    async fn restart(&mut self) {
        self.task.abort();
        let _ = (&mut self.task).await;
        *self = Local::start(self.dir.clone(), self.cfg.clone(), self.static_dir.clone()).await;
    }
}

async fn fresh() -> (TempDir, Local) {
    let tmp = TempDir::new().unwrap();
    let server = Local::start(tmp.path().join("data"), ServiceConfig::default(), None).await;
    (tmp, server)
}

async fn new_session(api: &Api, base: &str, seed: u64, config: &str) -> String {
    let (st, body) = api.create(base, scene_png(seed, 16, 16), config).await;
    assert_eq!(st, 200, "{body}");
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_session_starts_at_first_step() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let (st, body) = api.create(&srv.base, scene_png(1, 64, 64), "").await;
    assert_eq!(st, 200, "{body}");
    assert_eq!(body["id"], "s000001");
    assert_eq!(body["status"], "collecting");
    assert_eq!(body["step"], serde_json::json!({"s": 1, "l": 1}));
    assert_eq!(body["step_ordinal"], 1);
    assert_eq!(body["total_steps"], 16);
    assert_eq!(body["key_pixels"].as_array().unwrap().len(), 4);

    let (st, state) = api.get_json(format!("{}/sessions/s000001", srv.base)).await;
    assert_eq!(st, 200);
    assert_eq!(state["step"], serde_json::json!({"s": 1, "l": 1}));
    let (_, list) = api.get_json(format!("{}/sessions", srv.base)).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_uploads_are_bad_requests() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let (st, body) = api.create(&srv.base, b"not an image".to_vec(), "").await;
    assert_eq!(st, 400);
    assert!(body["error"].is_string());
    for cfg in [r#"{"L": 0}"#, r#"{"bogus": 1}"#, "[1]", "{", r#"{"responses_per_slider": 6}"#] {
        let (st, body) = api.create(&srv.base, scene_png(1, 16, 16), cfg).await;
        assert_eq!(st, 400, "{cfg}: {body}");
    }
    let form = reqwest::multipart::Form::new().text("config", "{}");
    let resp = api.http.post(format!("{}/sessions", srv.base)).multipart(form).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let (_, list) = api.get_json(format!("{}/sessions", srv.base)).await;
    assert!(list.as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn same_image_and_seed_give_same_keys() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let (_, a) = api.create(&srv.base, scene_png(3, 32, 24), r#"{"L": 3}"#).await;
    let (_, b) = api.create(&srv.base, scene_png(3, 32, 24), r#"{"L": 3}"#).await;
    assert_eq!(a["key_pixels"], b["key_pixels"]);
    assert_eq!(a["key_pixels"].as_array().unwrap().len(), 3);
    assert_ne!(a["id"], b["id"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bundles_up_to_five_targets_plus_check() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    for seed in 0..2 {
        new_session(&api, &srv.base, seed, FAST).await;
    }
    let (st, small) = api.microtask(&srv.base, "w1").await;
    assert_eq!(st, 200);
    let slots = small["slots"].as_array().unwrap();
    assert_eq!(slots.len(), 3);
    assert_eq!(slots.iter().filter(|s| s["kind"] == "check").count(), 1);
    assert_eq!(slots[small["check_position"].as_u64().unwrap() as usize]["kind"], "check");

    let (_tmp2, srv2) = fresh().await;
    for seed in 0..6 {
        new_session(&api, &srv2.base, seed, FAST).await;
    }
    let (_, full) = api.microtask(&srv2.base, "w1").await;
    let slots = full["slots"].as_array().unwrap();
    assert_eq!(slots.len(), 6);
    assert_eq!(slots.iter().filter(|s| s["kind"] == "check").count(), 1);
    let mut targets: Vec<&str> = slots.iter().filter_map(|s| s["session_id"].as_str()).collect();
    targets.dedup();
    assert_eq!(targets.len(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn polling_is_idempotent_and_no_work_is_404() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let (st, _) = api.microtask(&srv.base, "w1").await;
    assert_eq!(st, 404);
    new_session(&api, &srv.base, 0, FAST).await;
    let (_, first) = api.microtask(&srv.base, "w1").await;
    let (_, again) = api.microtask(&srv.base, "w1").await;
    assert_eq!(first, again);
    let (st, _) = api.microtask(&srv.base, "").await;
    assert_eq!(st, 400);

    let (st, mt) = api.get_json(format!("{}/microtasks/{}", srv.base, first["microtask_id"].as_str().unwrap())).await;
    assert_eq!(st, 200);
    assert_eq!(mt["capacity"], 7);
    assert_eq!(mt["outstanding"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn preview_reversal_size_and_errors() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let (_, body) = api.create(&srv.base, scene_png(5, 40, 30), r#"{"L": 2, "S": 2}"#).await;
    let id = body["id"].as_str().unwrap();
    let url = |q: &str| format!("{}/sessions/{id}/preview?{q}", srv.base);

    let (st, a) = api.get_bytes(url("alpha=0.25&reversed=true")).await;
    assert_eq!(st, 200);
    let (_, b) = api.get_bytes(url("alpha=0.75&reversed=false")).await;
    assert_eq!(decode_image(&a).unwrap(), decode_image(&b).unwrap());

    let (_, small) = api.get_bytes(url("alpha=0.4&max_edge=10")).await;
    let img = decode_image(&small).unwrap();
    assert!(img.width().max(img.height()) <= 10);

    assert_eq!(api.get_bytes(url("alpha=1.5")).await.0, 400);
    assert_eq!(api.get_bytes(url("alpha=x")).await.0, 400);
    assert_eq!(api.get_bytes(url("alpha=0.5&max_edge=0")).await.0, 400);
    let missing = format!("{}/sessions/nope/preview?alpha=0.5", srv.base);
    assert_eq!(api.get_bytes(missing).await.0, 404);

    let (st, check) = api.get_bytes(format!("{}/check/preview?alpha=0.5&max_edge=64", srv.base)).await;
    assert_eq!(st, 200);
    assert!(decode_image(&check).unwrap().width() <= 64);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn next_slider_starts_at_the_chosen_point() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 8, r#"{"L": 1, "S": 2, "responses_per_slider": 1}"#).await;
    let chosen = 0.375;
    let (_, before) = api
        .get_bytes(format!("{}/sessions/{id}/preview?alpha={chosen}", srv.base))
        .await;
    let (_, a) = api.microtask(&srv.base, "w").await;
    let (st, out) = api
        .submit(&srv.base, "w", a["microtask_id"].as_str().unwrap(), &answer(&a, chosen, 0.5))
        .await;
    assert_eq!(st, 200, "{out}");
    assert_eq!(out["advanced"][0], id.as_str());
    let (_, after) = api.get_bytes(format!("{}/sessions/{id}/preview?alpha=0", srv.base)).await;
    assert_eq!(decode_image(&before).unwrap(), decode_image(&after).unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submission_errors_and_duplicates() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 2, FAST).await;
    let (_, a) = api.microtask(&srv.base, "w1").await;
    let mt = a["microtask_id"].as_str().unwrap();
    let good = answer(&a, 0.5, 0.5);

    assert_eq!(api.submit(&srv.base, "stranger", mt, &good).await.0, 404);
    assert_eq!(api.submit(&srv.base, "w1", "m999999", &good).await.0, 404);
    assert_eq!(api.submit(&srv.base, "w1", mt, &good[..1]).await.0, 400);
    assert_eq!(api.submit(&srv.base, "w1", mt, &[0.5, 1.2]).await.0, 400);
    let resp = api
        .http
        .post(format!("{}/responses", srv.base))
        .header("content-type", "application/json")
        .body("{\"worker\": 3}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    let (st, first) = api.submit(&srv.base, "w1", mt, &good).await;
    assert_eq!(st, 200);
    assert_eq!(first["status"], "accepted");
    let (st, replay) = api.submit(&srv.base, "w1", mt, &good).await;
    assert_eq!(st, 200);
    assert_eq!(replay["replayed"], true);
    assert_eq!(replay["status"], "accepted");
    let (_, s) = api.get_json(format!("{}/sessions/{id}", srv.base)).await;
    assert_eq!(s["accepted_responses"], 1, "replay must not double count");

    let other = answer(&a, 0.25, 0.5);
    assert_eq!(api.submit(&srv.base, "w1", mt, &other).await.0, 409);
    // A worker never sees the same microtask twice.
    let (st, _) = api.microtask(&srv.base, "w1").await;
    assert_eq!(st, 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn median_of_seven_and_rejection_reopens_capacity() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 4, r#"{"L": 1, "S": 2}"#).await;
    for w in 0..6 {
        let worker = format!("w{w}");
        let (_, a) = api.microtask(&srv.base, &worker).await;
        let alpha = 0.1 * (w + 1) as f64;
        let raw = answer(&a, alpha, 0.5);
        let (_, out) = api.submit(&srv.base, &worker, a["microtask_id"].as_str().unwrap(), &raw).await;
        assert_eq!(out["status"], "accepted");
    }
    let (_, bad) = api.microtask(&srv.base, "bad").await;
    let (_, out) = api
        .submit(&srv.base, "bad", bad["microtask_id"].as_str().unwrap(), &answer(&bad, 0.9, 0.1))
        .await;
    assert_eq!(out["status"], "rejected");
    let (_, s) = api.get_json(format!("{}/sessions/{id}", srv.base)).await;
    assert_eq!(s["accepted_responses"], 6);
    assert_eq!(s["completed_steps"], 0);

    let (st, last) = api.microtask(&srv.base, "w6").await;
    assert_eq!(st, 200);
    assert_eq!(last["microtask_id"], bad["microtask_id"]);
    let (_, out) = api
        .submit(&srv.base, "w6", last["microtask_id"].as_str().unwrap(), &answer(&last, 0.7, 0.5))
        .await;
    assert_eq!(out["advanced"][0], id.as_str());

    let (_, result) = api.get_json(format!("{}/sessions/{id}/result", srv.base)).await;
    assert_eq!(result["status"], "collecting");
    assert_eq!(result["completed_steps"], 1);
    let history = &result["history"][0];
    let mut effective: Vec<f64> = history["responses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["alpha"].as_f64().unwrap())
        .collect();
    assert_eq!(effective.len(), 7);
    assert!(history["responses"].as_array().unwrap().iter().all(|r| r["worker"] != "bad"));
    effective.sort_by(f64::total_cmp);
    let chosen = result["trace"][0]["alpha"].as_f64().unwrap();
    assert_eq!(chosen, effective[3]);
    assert!((chosen - 0.4).abs() < 1e-12);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_with_restart_produces_artifacts() {
    let tmp = TempDir::new().unwrap();
    let mut srv = Local::start(tmp.path().join("data"), ServiceConfig::default(), None).await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 9, "").await;

    let (st, progress) = api.get_json(format!("{}/sessions/{id}/result", srv.base)).await;
    assert_eq!(st, 200);
    assert_eq!(progress["status"], "collecting");
    assert!(progress["result_png"].is_null());
    assert_eq!(api.get_bytes(format!("{}/sessions/{id}/result.png", srv.base)).await.0, 404);
    assert_eq!(api.get_json(format!("{}/sessions/zzz/result", srv.base)).await.0, 404);

    let report = drive_scripted(&api, &mut srv, &id, 16, Some((5, 3))).await;
    assert!(report.restarted);
    assert_eq!((report.steps, report.accepted, report.rejected), (16, 112, 16));
    assert_eq!(report.refused_while_full, 16);

    let (_, done) = api.get_json(format!("{}/sessions/{id}/result", srv.base)).await;
    assert_eq!(done["status"], "done");
    let trace = done["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 16);
    for (k, rec) in trace.iter().enumerate() {
        assert_eq!(rec["alpha"].as_f64().unwrap(), step_median(k));
    }
    let (st, png) = api.get_bytes(format!("{}/sessions/{id}/result.png", srv.base)).await;
    assert_eq!(st, 200);
    let out = decode_image(&png).unwrap();
    assert_eq!((out.width(), out.height()), (16, 16));
    let (_, trace_csv) = api.get_bytes(format!("{}/sessions/{id}/trace.csv", srv.base)).await;
    let text = String::from_utf8(trace_csv).unwrap();
    assert_eq!(text.lines().next(), Some("step,s,l,alpha,score"));
    assert_eq!(text.lines().count(), 17);
    let (_, params) = api.get_bytes(format!("{}/sessions/{id}/params.csv", srv.base)).await;
    let text = String::from_utf8(params).unwrap();
    assert_eq!(text.lines().next(), Some("x,y,brightness,saturation,contrast"));
    assert_eq!(text.lines().count(), 257);
    let (st, input) = api.get_bytes(format!("{}/sessions/{id}/input.png", srv.base)).await;
    assert_eq!(st, 200);
    assert_eq!(decode_image(&input).unwrap(), decode_image(&scene_png(9, 16, 16)).unwrap());
    assert_eq!(api.get_bytes(format!("{}/sessions/{id}/secret.txt", srv.base)).await.0, 404);
    assert_eq!(api.get_bytes(format!("{}/sessions/{id}/preview?alpha=0.5", srv.base)).await.0, 409);
    assert_eq!(api.microtask(&srv.base, "late").await.0, 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_aggregate_once() {
    let (_tmp, srv) = fresh().await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 6, r#"{"L": 1, "S": 3}"#).await;
    let mut held = Vec::new();
    for w in 0..7 {
        let worker = format!("w{w}");
        let (_, a) = api.microtask(&srv.base, &worker).await;
        held.push((worker, a));
    }
    let mut tasks = tokio::task::JoinSet::new();
    for (i, (worker, a)) in held.into_iter().enumerate() {
        let (api, base) = (api.clone(), srv.base.clone());
        tasks.spawn(async move {
            let raw = answer(&a, (i + 1) as f64 / 8.0, 0.5);
            api.submit(&base, &worker, a["microtask_id"].as_str().unwrap(), &raw).await
        });
    }
    let mut advanced = 0;
    while let Some(res) = tasks.join_next().await {
        let (st, out) = res.unwrap();
        assert_eq!(st, 200, "{out}");
        advanced += out["advanced"].as_array().unwrap().len();
    }
    assert_eq!(advanced, 1);
    let (_, result) = api.get_json(format!("{}/sessions/{id}/result", srv.base)).await;
    assert_eq!(result["trace"].as_array().unwrap().len(), 1);
    assert_eq!(result["trace"][0]["alpha"].as_f64().unwrap(), 0.5);
    assert_eq!(result["accepted_responses"], 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn every_accepted_response_is_on_disk() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let srv = Local::start(data.clone(), ServiceConfig::default(), None).await;
    let api = Api::default();
    let id = new_session(&api, &srv.base, 7, r#"{"L": 1, "S": 2}"#).await;
    for w in 0..3 {
        let worker = format!("w{w}");
        let (_, a) = api.microtask(&srv.base, &worker).await;
        api.submit(&srv.base, &worker, a["microtask_id"].as_str().unwrap(), &answer(&a, 0.5, 0.5))
            .await;
        let reopened = Service::open(Store::open(&data).unwrap(), ServiceConfig::default()).unwrap();
        let detail = reopened.session(&id).unwrap();
        assert_eq!(detail.summary.accepted_responses, w + 1);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reversal_does_not_change_the_outcome() {
    let api = Api::default();
    let mut traces: Vec<Value> = Vec::new();
    let mut flags = Vec::new();
    for seed in [1, 2, 3] {
        let tmp = TempDir::new().unwrap();
        let cfg = ServiceConfig {
            seed,
            ..ServiceConfig::default()
        };
        let srv = Local::start(tmp.path().join("data"), cfg, None).await;
        let id = new_session(&api, &srv.base, 5, r#"{"L": 1, "S": 1}"#).await;
        let mut seen = Vec::new();
        for w in 0..7 {
            let worker = format!("w{w}");
            let (_, a) = api.microtask(&srv.base, &worker).await;
            seen.push(a["reversed"].as_bool().unwrap());
            let alpha = [3.0, 9.0, 1.0, 7.0, 5.0, 2.0, 6.0][w] / 10.0;
            api.submit(&srv.base, &worker, a["microtask_id"].as_str().unwrap(), &answer(&a, alpha, 0.5))
                .await;
        }
        flags.push(seen);
        let (_, r) = api.get_json(format!("{}/sessions/{id}/result", srv.base)).await;
        traces.push(r["trace"][0]["alpha"].clone());
    }
    assert!(flags.iter().any(|f| f != &flags[0]), "seeds should vary reversal");
    for t in &traces {
        assert!((t.as_f64().unwrap() - 0.5).abs() < 1e-12, "{t}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_files_are_served() {
    let tmp = TempDir::new().unwrap();
    let web = tmp.path().join("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html>workers</html>").unwrap();
    let srv = Local::start(tmp.path().join("data"), ServiceConfig::default(), Some(web)).await;
    let api = Api::default();
    let (st, body) = api.get_bytes(format!("{}/index.html", srv.base)).await;
    assert_eq!(st, 200);
    assert_eq!(body, b"<html>workers</html>");
    let (st, _) = api.get_json(format!("{}/sessions", srv.base)).await;
    assert_eq!(st, 200);
}

#[test]
fn invalid_service_config_is_refused() {
    let tmp = TempDir::new().unwrap();
    for cfg in [
        ServiceConfig {
            check_range: (0.8, 0.2),
            ..ServiceConfig::default()
        },
        ServiceConfig {
            bundle_size: 0,
            ..ServiceConfig::default()
        },
    ] {
        assert!(build(tmp.path(), cfg, None).is_err());
    }
}
