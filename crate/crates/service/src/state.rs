//! Session and microtask bookkeeping, independent of HTTP.
//!
//! A microtask bundles the current step of up to `bundle_size` collecting
//! sessions plus one check slot. It is deployed to workers until enough
//! responses pass the check; each accepted response contributes one slider
//! position to every bundled session, and a session advances as soon as its
//! step holds `responses_per_slider` positions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use crowdenhance_core::imaging::{decode_image, encode_png, resize_for_preview, Image};
use crowdenhance_core::orchestrator::{
    aggregate_responses, finish, prepare_with, render, validate_check, EnhanceConfig, EnhanceRun, Prepared,
    StepIndex, TraceRecord,
};
use crowdenhance_core::scenes::reference_scene;
use crowdenhance_core::ParamMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::store::{Store, INPUT_FILE, PARAMS_CSV, RESULT_PNG, SERVICE_FILE, SESSION_FILE, TRACE_CSV};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Closed range of acceptable effective check-slider positions.
    pub check_range: (f64, f64),
    /// Maximum number of target slots per microtask.
    pub bundle_size: usize,
    /// Seed for slot reversal and check placement.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            check_range: (0.25, 0.75),
            bundle_size: 5,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> ServiceResult<()> {
        let (lo, hi) = self.check_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(ServiceError::BadRequest(format!("invalid check range [{lo}, {hi}]")));
        }
        if self.bundle_size == 0 {
            return Err(ServiceError::BadRequest("bundle size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Collecting,
    Advancing,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedResponse {
    pub worker: String,
    pub microtask_id: String,
    /// Effective (un-reversed) slider position.
    pub alpha: f64,
    pub alpha_check: f64,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: StepIndex,
    pub alpha: f64,
    pub responses: Vec<CollectedResponse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub config: EnhanceConfig,
    pub key_pixels: Vec<usize>,
    pub run: EnhanceRun,
    pub status: SessionStatus,
    pub microtask_id: Option<String>,
    pub responses: Vec<CollectedResponse>,
    pub history: Vec<StepOutcome>,
    pub step_opened_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Target,
    Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub kind: SlotKind,
    pub session_id: Option<String>,
    pub step: Option<StepIndex>,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub microtask_id: String,
    pub worker: String,
    pub slots: Vec<Slot>,
    pub check_position: usize,
    /// Whether the slider ends are swapped for this worker; mirrored on every slot.
    pub reversed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub microtask_id: String,
    pub status: Verdict,
    /// Sessions whose step completed because of this response.
    pub advanced: Vec<String>,
    /// True when this is a replay of an earlier identical submission.
    #[serde(default)]
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Submission {
    alphas: Vec<f64>,
    outcome: SubmitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub session_id: String,
    pub step: StepIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microtask {
    pub id: String,
    pub targets: Vec<Target>,
    /// Number of accepted responses the microtask is deployed for.
    pub capacity: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Workers currently holding an unsubmitted assignment.
    pub outstanding: BTreeSet<String>,
    /// Every worker the microtask was ever given to.
    pub served: BTreeSet<String>,
    submissions: BTreeMap<String, Submission>,
    pub open: bool,
}

impl Microtask {
    /// Slots that can still be handed out.
    pub fn free_capacity(&self) -> usize {
        if !self.open {
            return 0;
        }
        self.capacity.saturating_sub(self.accepted + self.outstanding.len())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Ledger {
    next_session: u64,
    next_microtask: u64,
    next_assignment: u64,
    microtasks: BTreeMap<String, Microtask>,
    assignments: BTreeMap<String, Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub status: SessionStatus,
    pub width: usize,
    pub height: usize,
    pub step: Option<StepIndex>,
    /// One-based position of the open step in the schedule.
    pub step_ordinal: Option<usize>,
    pub completed_steps: usize,
    pub total_steps: usize,
    pub key_pixels_count: usize,
    pub sliders: usize,
    pub accepted_responses: usize,
    pub responses_needed: usize,
    pub microtask_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDetail {
    #[serde(flatten)]
    pub summary: SessionSummary,
    pub key_pixels: Vec<usize>,
    pub config: EnhanceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    #[serde(flatten)]
    pub summary: SessionSummary,
    pub trace: Vec<TraceRecord>,
    pub history: Vec<StepOutcome>,
    pub result_png: Option<String>,
    pub params_csv: Option<String>,
    pub trace_csv: Option<String>,
    pub error: Option<String>,
}

/// Fixed stock photo for the check slot: the slider sweeps brightness from
/// one stop under to one stop over, with the unedited photo in the middle.
#[derive(Debug, Clone)]
pub struct CheckTask {
    image: Image,
}

impl CheckTask {
    pub fn new() -> Self {
        Self {
            image: reference_scene(2024, 256, 192),
        }
    }

    pub fn render(&self, effective_alpha: f64, max_edge: usize) -> Image {
        let p = [2.0 * effective_alpha - 1.0, 0.0, 0.0];
        let edited = crowdenhance_core::imaging::apply_param_map(
            &self.image,
            &crowdenhance_core::imaging::global_map(crowdenhance_core::ParamVector(p), self.image.len()),
        )
        .expect("map sized to the check image");
        resize_for_preview(&edited, max_edge)
    }
}

impl Default for CheckTask {
    fn default() -> Self {
        Self::new()
    }
}

struct Inner {
    ledger: Ledger,
    sessions: BTreeMap<String, SessionRecord>,
    prepared: BTreeMap<String, Arc<Prepared>>,
}

pub struct Service {
    cfg: ServiceConfig,
    store: Store,
    check: CheckTask,
    inner: Mutex<Inner>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn assignment_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_alpha(what: &str, alpha: f64) -> ServiceResult<f64> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(alpha)
    } else {
        Err(ServiceError::BadRequest(format!("{what} must be in [0, 1], got {alpha}")))
    }
}

/// Effective slider position for a raw UI position.
pub fn effective(ui_alpha: f64, reversed: bool) -> f64 {
    if reversed {
        1.0 - ui_alpha
    } else {
        ui_alpha
    }
}

/// Merges a partial JSON config over the human-mode defaults.
pub fn session_config(partial: Option<&str>) -> ServiceResult<EnhanceConfig> {
    let base = EnhanceConfig::human_default();
    let Some(text) = partial.filter(|t| !t.trim().is_empty()) else {
        base.validate()?;
        return Ok(base);
    };
    let bad = |e: serde_json::Error| ServiceError::BadRequest(format!("invalid config: {e}"));
    let given: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    let serde_json::Value::Object(given) = given else {
        return Err(ServiceError::BadRequest("config must be a JSON object".into()));
    };
    let mut merged = serde_json::to_value(&base).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let obj = merged.as_object_mut().expect("config serializes to an object");
    for (k, v) in given {
        let key = match k.as_str() {
            "L" => "key_pixels".to_string(),
            "S" => "sliders".to_string(),
            _ => k,
        };
        if !obj.contains_key(&key) {
            return Err(ServiceError::BadRequest(format!("unknown config field `{key}`")));
        }
        obj.insert(key, v);
    }
    let cfg: EnhanceConfig = serde_json::from_value(merged).map_err(bad)?;
    cfg.validate()?;
    Ok(cfg)
}

fn params_csv(width: usize, params: &ParamMap) -> String {
    let mut out = String::from("x,y,brightness,saturation,contrast\n");
    for (n, p) in params.rows().iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", n % width, n / width, p[0], p[1], p[2]));
    }
    out
}

/// `step,s,l,alpha,score` with an empty score when none was recorded.
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("step,s,l,alpha,score\n");
    for r in trace {
        let score = r.score.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.s, r.l, r.alpha, score));
    }
    out
}

impl SessionRecord {
    fn summary(&self) -> SessionSummary {
        let collecting = self.status == SessionStatus::Collecting;
        let step = self.run.step();
        SessionSummary {
            id: self.id.clone(),
            status: self.status,
            width: self.width,
            height: self.height,
            step: step.filter(|_| collecting),
            step_ordinal: step.filter(|_| collecting).map(|st| st.ordinal(self.config.key_pixels)),
            completed_steps: self.run.completed_steps(),
            total_steps: self.run.total_steps(),
            key_pixels_count: self.config.key_pixels,
            sliders: self.config.sliders,
            accepted_responses: self.responses.len(),
            responses_needed: self.config.responses_per_slider,
            microtask_id: self.microtask_id.clone(),
        }
    }
}

impl Service {
    /// Opens the data directory, reloading any persisted sessions.
    pub fn open(store: Store, cfg: ServiceConfig) -> ServiceResult<Self> {
        cfg.validate()?;
        let ledger_path = store.root().join(SERVICE_FILE);
        let ledger: Ledger = if ledger_path.is_file() {
            store.read_json(&ledger_path)?
        } else {
            Ledger::default()
        };
        let mut sessions = BTreeMap::new();
        let mut prepared = BTreeMap::new();
        for id in store.session_ids()? {
            let record: SessionRecord = store.read_json(&store.session_file(&id, SESSION_FILE))?;
            let image = decode_image(&store.read_session_file(&id, INPUT_FILE)?)?;
            let prep = prepare_with(&image, &record.config, Some(&record.key_pixels))?;
            prepared.insert(id.clone(), Arc::new(prep));
            sessions.insert(id, record);
        }
        Ok(Self {
            cfg,
            store,
            check: CheckTask::new(),
            inner: Mutex::new(Inner {
                ledger,
                sessions,
                prepared,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn persist_session(&self, record: &SessionRecord) -> ServiceResult<()> {
        self.store
            .write_json(&self.store.session_file(&record.id, SESSION_FILE), record)
    }

    fn persist_ledger(&self, ledger: &Ledger) -> ServiceResult<()> {
        self.store.write_json(&self.store.root().join(SERVICE_FILE), ledger)
    }

    /// Decodes, prepares and registers a new session. The expensive part runs
    /// without holding the service lock.
    pub fn create_session(&self, image_bytes: &[u8], config_json: Option<&str>) -> ServiceResult<SessionDetail> {
        let cfg = session_config(config_json)?;
        let image = decode_image(image_bytes)?;
        let prep = prepare_with(&image, &cfg, None)?;

        let mut inner = self.lock();
        inner.ledger.next_session += 1;
        let id = format!("s{:06}", inner.ledger.next_session);
        let record = SessionRecord {
            id: id.clone(),
            width: image.width(),
            height: image.height(),
            key_pixels: prep.keys.indices().to_vec(),
            run: EnhanceRun::new(&cfg),
            config: cfg,
            status: SessionStatus::Collecting,
            microtask_id: None,
            responses: Vec::new(),
            history: Vec::new(),
            step_opened_ms: now_ms(),
            error: None,
        };
        self.store.write_session_file(&id, INPUT_FILE, image_bytes)?;
        self.persist_session(&record)?;
        self.persist_ledger(&inner.ledger)?;
        let detail = SessionDetail {
            summary: record.summary(),
            key_pixels: record.key_pixels.clone(),
            config: record.config.clone(),
        };
        inner.prepared.insert(id.clone(), Arc::new(prep));
        inner.sessions.insert(id, record);
        Ok(detail)
    }

    pub fn list_sessions(&self) -> Vec<SessionSummary> {
        self.lock().sessions.values().map(SessionRecord::summary).collect()
    }

    pub fn session(&self, id: &str) -> ServiceResult<SessionDetail> {
        let inner = self.lock();
        let r = inner
            .sessions
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))?;
        Ok(SessionDetail {
            summary: r.summary(),
            key_pixels: r.key_pixels.clone(),
            config: r.config.clone(),
        })
    }

    pub fn result(&self, id: &str) -> ServiceResult<SessionResult> {
        let inner = self.lock();
        let r = inner
            .sessions
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))?;
        let done = r.status == SessionStatus::Done;
        let link = |name: &str| done.then(|| format!("/sessions/{id}/{name}"));
        Ok(SessionResult {
            summary: r.summary(),
            trace: r.run.trace().to_vec(),
            history: r.history.clone(),
            result_png: link(RESULT_PNG),
            params_csv: link(PARAMS_CSV),
            trace_csv: link(TRACE_CSV),
            error: r.error.clone(),
        })
    }

    /// Raw bytes of a stored per-session file (`input.img`, `result.png`, ...).
    pub fn artifact(&self, id: &str, name: &str) -> ServiceResult<Vec<u8>> {
        {
            let inner = self.lock();
            let r = inner
                .sessions
                .get(id)
                .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))?;
            if name != INPUT_FILE && r.status != SessionStatus::Done {
                return Err(ServiceError::NotFound(format!("session {id} has no result yet")));
            }
        }
        self.store
            .read_session_file(id, name)
            .map_err(|_| ServiceError::NotFound(format!("{name} missing for session {id}")))
    }

    /// PNG preview of the session's current slider at a UI position.
    pub fn preview(&self, id: &str, ui_alpha: f64, reversed: bool, max_edge: usize) -> ServiceResult<Vec<u8>> {
        let ui_alpha = unit_alpha("alpha", ui_alpha)?;
        if max_edge == 0 {
            return Err(ServiceError::BadRequest("max_edge must be positive".into()));
        }
        let (prep, task) = {
            let inner = self.lock();
            let r = inner
                .sessions
                .get(id)
                .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))?;
            if r.status != SessionStatus::Collecting {
                return Err(ServiceError::Conflict(format!("session {id} is not collecting")));
            }
            let task = r
                .run
                .current_task()
                .ok_or_else(|| ServiceError::Conflict(format!("session {id} has no open step")))?;
            (Arc::clone(&inner.prepared[id]), task)
        };
        let q = task.key_params(effective(ui_alpha, reversed))?;
        let img = render(&prep.preview, &prep.preview_weights, &q)?;
        Ok(encode_png(&resize_for_preview(&img, max_edge)))
    }

    pub fn check_preview(&self, ui_alpha: f64, reversed: bool, max_edge: usize) -> ServiceResult<Vec<u8>> {
        let ui_alpha = unit_alpha("alpha", ui_alpha)?;
        if max_edge == 0 {
            return Err(ServiceError::BadRequest("max_edge must be positive".into()));
        }
        Ok(encode_png(&self.check.render(effective(ui_alpha, reversed), max_edge)))
    }

    pub fn microtask(&self, id: &str) -> ServiceResult<Microtask> {
        self.lock()
            .ledger
            .microtasks
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown microtask {id}")))
    }

    /// The worker's open assignment, or a new one.
    pub fn assign(&self, worker: &str) -> ServiceResult<Assignment> {
        if worker.trim().is_empty() {
            return Err(ServiceError::BadRequest("worker token is required".into()));
        }
        let mut inner = self.lock();
        if let Some(a) = inner.ledger.assignments.get(worker) {
            return Ok(a.clone());
        }
        let reusable = inner
            .ledger
            .microtasks
            .values()
            .find(|m| m.free_capacity() > 0 && !m.served.contains(worker))
            .map(|m| m.id.clone());
        let mt_id = match reusable {
            Some(id) => id,
            None => self.open_microtask(&mut inner)?,
        };

        inner.ledger.next_assignment += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed(self.cfg.seed, inner.ledger.next_assignment));
        let mt = inner.ledger.microtasks.get_mut(&mt_id).expect("microtask just found");
        let check_position = rng.gen_range(0..=mt.targets.len());
        let mut slots: Vec<Slot> = mt
            .targets
            .iter()
            .map(|t| Slot {
                kind: SlotKind::Target,
                session_id: Some(t.session_id.clone()),
                step: Some(t.step),
                reversed: false,
            })
            .collect();
        slots.insert(
            check_position,
            Slot {
                kind: SlotKind::Check,
                session_id: None,
                step: None,
                reversed: false,
            },
        );
        let reversed = rng.gen_bool(0.5);
        for slot in &mut slots {
            slot.reversed = reversed;
        }
        mt.outstanding.insert(worker.to_string());
        mt.served.insert(worker.to_string());
        let assignment = Assignment {
            microtask_id: mt_id,
            worker: worker.to_string(),
            slots,
            check_position,
            reversed,
        };
        inner.ledger.assignments.insert(worker.to_string(), assignment.clone());
        self.persist_ledger(&inner.ledger)?;
        Ok(assignment)
    }

    /// Bundles free collecting sessions into a new microtask.
    fn open_microtask(&self, inner: &mut Inner) -> ServiceResult<String> {
        let free: Vec<String> = inner
            .sessions
            .values()
            .filter(|r| r.status == SessionStatus::Collecting && r.microtask_id.is_none())
            .map(|r| r.id.clone())
            .take(self.cfg.bundle_size)
            .collect();
        if free.is_empty() {
            return Err(ServiceError::NoWork);
        }
        inner.ledger.next_microtask += 1;
        let id = format!("m{:06}", inner.ledger.next_microtask);
        let mut targets = Vec::new();
        let mut capacity = 0;
        for sid in &free {
            let r = inner.sessions.get_mut(sid).expect("listed above");
            let step = r.run.step().expect("collecting sessions have an open step");
            r.microtask_id = Some(id.clone());
            capacity = capacity.max(r.config.responses_per_slider - r.responses.len());
            targets.push(Target {
                session_id: sid.clone(),
                step,
            });
            self.persist_session(r)?;
        }
        inner.ledger.microtasks.insert(
            id.clone(),
            Microtask {
                id: id.clone(),
                targets,
                capacity,
                accepted: 0,
                rejected: 0,
                outstanding: BTreeSet::new(),
                served: BTreeSet::new(),
                submissions: BTreeMap::new(),
                open: true,
            },
        );
        Ok(id)
    }

    /// Records one worker's slider positions (raw UI values, slot order).
    pub fn submit(&self, worker: &str, microtask_id: &str, ui_alphas: &[f64]) -> ServiceResult<SubmitOutcome> {
        let mut inner = self.lock();
        let Inner {
            ledger, sessions, prepared, ..
        } = &mut *inner;
        let mt = ledger
            .microtasks
            .get(microtask_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown microtask {microtask_id}")))?;
        if let Some(previous) = mt.submissions.get(worker) {
            if previous.alphas == ui_alphas {
                let mut replay = previous.outcome.clone();
                replay.replayed = true;
                return Ok(replay);
            }
            return Err(ServiceError::Conflict(format!(
                "worker {worker} already answered microtask {microtask_id}"
            )));
        }
        let assignment = match ledger.assignments.get(worker) {
            Some(a) if a.microtask_id == microtask_id => a.clone(),
            _ => {
                return Err(ServiceError::NotFound(format!(
                    "no open assignment of microtask {microtask_id} for worker {worker}"
                )))
            }
        };
        if ui_alphas.len() != assignment.slots.len() {
            return Err(ServiceError::BadRequest(format!(
                "expected {} slider positions, got {}",
                assignment.slots.len(),
                ui_alphas.len()
            )));
        }
        for a in ui_alphas {
            unit_alpha("alpha", *a)?;
        }
        let eff: Vec<f64> = ui_alphas
            .iter()
            .zip(&assignment.slots)
            .map(|(a, s)| effective(*a, s.reversed))
            .collect();
        let alpha_check = eff[assignment.check_position];
        let accepted = validate_check(alpha_check, self.cfg.check_range);

        ledger.assignments.remove(worker);
        let mt = ledger.microtasks.get_mut(microtask_id).expect("looked up above");
        mt.outstanding.remove(worker);
        let mut outcome = SubmitOutcome {
            microtask_id: microtask_id.to_string(),
            status: if accepted { Verdict::Accepted } else { Verdict::Rejected },
            advanced: Vec::new(),
            replayed: false,
        };
        if !accepted {
            mt.rejected += 1;
        } else {
            mt.accepted += 1;
            let mut all_satisfied = true;
            for (slot, alpha) in assignment.slots.iter().zip(&eff) {
                let (Some(sid), Some(step)) = (&slot.session_id, slot.step) else {
                    continue;
                };
                let Some(r) = sessions.get_mut(sid) else { continue };
                let current = r.status == SessionStatus::Collecting
                    && r.run.step() == Some(step)
                    && r.microtask_id.as_deref() == Some(microtask_id);
                if !current {
                    continue;
                }
                r.responses.push(CollectedResponse {
                    worker: worker.to_string(),
                    microtask_id: microtask_id.to_string(),
                    alpha: *alpha,
                    alpha_check,
                    reversed: slot.reversed,
                });
                if r.responses.len() >= r.config.responses_per_slider {
                    self.advance(r, &prepared[sid])?;
                    outcome.advanced.push(sid.clone());
                } else {
                    all_satisfied = false;
                }
                self.persist_session(r)?;
            }
            if all_satisfied || mt.accepted >= mt.capacity {
                mt.open = false;
            }
        }
        mt.submissions.insert(
            worker.to_string(),
            Submission {
                alphas: ui_alphas.to_vec(),
                outcome: outcome.clone(),
            },
        );
        self.persist_ledger(ledger)?;
        Ok(outcome)
    }

    /// Median aggregation and line-search update for a full step.
    fn advance(&self, r: &mut SessionRecord, prep: &Prepared) -> ServiceResult<()> {
        r.status = SessionStatus::Advancing;
        let alphas: Vec<f64> = r.responses.iter().map(|c| c.alpha).collect();
        let step = r.run.step().expect("collecting session has a step");
        let result = aggregate_responses(&alphas).and_then(|alpha| {
            let elapsed = now_ms().saturating_sub(r.step_opened_ms) as f64;
            r.run.apply(alpha, None, elapsed).map(|_| alpha)
        });
        let alpha = match result {
            Ok(a) => a,
            Err(e) => {
                r.status = SessionStatus::Aborted;
                r.error = Some(e.to_string());
                return Ok(());
            }
        };
        r.history.push(StepOutcome {
            step,
            alpha,
            responses: std::mem::take(&mut r.responses),
        });
        r.microtask_id = None;
        r.step_opened_ms = now_ms();
        if !r.run.is_done() {
            r.status = SessionStatus::Collecting;
            return Ok(());
        }
        match finish(prep, &r.run) {
            Ok((image, params)) => {
                self.store.write_session_file(&r.id, RESULT_PNG, &encode_png(&image))?;
                self.store
                    .write_session_file(&r.id, PARAMS_CSV, params_csv(r.width, &params).as_bytes())?;
                self.store
                    .write_session_file(&r.id, TRACE_CSV, trace_csv(r.run.trace()).as_bytes())?;
                r.status = SessionStatus::Done;
            }
            Err(e) => {
                r.status = SessionStatus::Aborted;
                r.error = Some(e.to_string());
            }
        }
        Ok(())
    }
}
