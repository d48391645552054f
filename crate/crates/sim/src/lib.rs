//! Scripted crowd for the worker API.
//!
//! The service must run on a manual clock. The simulator owns time: it moves
//! the clock tick by tick and, at each tick, fires every due worker action.
//! Reads and submissions of different workers go out concurrently; claims go
//! out concurrently among workers that have worked the same tasks, which
//! keeps the run reproducible because such workers are interchangeable.
//! All randomness after a claim is drawn from a stream keyed by the slot and
//! attempt, never by which worker won the slot.

pub mod client;
pub mod latency;
pub mod profile;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use futures::future::join_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use client::Reply;
pub use client::Client;
pub use latency::{summarize, task_latency, Latency, Summary};
pub use profile::{load_corpus, Delay, ProfileError, SimProfile, Strategy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("corpus has {usable} ideas of at least {min_words} words; {needed} are needed")]
    CorpusTooSmall { needed: usize, usable: usize, min_words: usize },
    #[error("server {url} unreachable: {message}")]
    ServerUnreachable { url: String, message: String },
    #[error("{call} failed with {status}: {body}")]
    Api { call: String, status: u16, body: String },
    #[error("the service must run with clock = manual")]
    ManualClockRequired,
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SUMMARY_FILE: &str = "latency_summary.csv";
pub const RESULT_FILE: &str = "result.json";

/// Words for generated prompts. None of them is likely to start a
/// fifteen-word run shared with a corpus line.
const PROMPT_WORDS: [&str; 48] = [
    "harbor", "lantern", "copper", "orchard", "violet", "glacier", "whisper", "meadow", "tunnel", "falcon",
    "ember", "quarry", "saddle", "marble", "thistle", "beacon", "canyon", "ledger", "pebble", "wagon",
    "cinder", "velvet", "hollow", "anchor", "bramble", "pylon", "sable", "tundra", "lattice", "mortar",
    "fennel", "rook", "cobalt", "drizzle", "garnet", "hatchet", "juniper", "kettle", "lichen", "minnow",
    "nettle", "oxbow", "parchment", "quill", "rafter", "sorrel", "tallow", "umber",
];

const ROLE_NAMES: [&str; 6] = ["Mariner", "Oracle", "Smuggler", "Cartographer", "Widow", "Apprentice"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: u64,
    pub document_id: u64,
    pub characters: Vec<String>,
    pub slots: usize,
    pub state: String,
    pub accepted: usize,
    pub voided: usize,
    pub ideas_per_character: BTreeMap<String, usize>,
    pub thread_replies: usize,
    pub simulated_latency: Option<Latency>,
    pub reported_latency: Option<Latency>,
    /// Both computations agree within one millisecond.
    pub latency_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub from_s: f64,
    pub to_s: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub acceptances: usize,
    pub rejections: BTreeMap<String, usize>,
    /// Failed worker calls other than gate rejections, by error code.
    pub errors: BTreeMap<String, usize>,
    pub total_slots: usize,
    pub voided_slots: usize,
    pub all_tasks_complete: bool,
    pub timed_out: bool,
    pub simulated_ms: i64,
    pub claim_batches: usize,
    /// Largest number of requests sent at once.
    pub max_overlap: usize,
    pub tasks: Vec<TaskResult>,
    /// first_idea, per_character_coverage and last_idea across tasks.
    pub summary: BTreeMap<String, Summary>,
    /// Per-idea latency since task launch.
    pub histogram: Vec<Bucket>,
}

impl SimResult {
    pub fn latency_agrees(&self) -> bool {
        self.tasks.iter().all(|t| t.latency_agrees)
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket,count\n");
        for b in &self.histogram {
            out.push_str(&format!("{}-{},{}\n", b.from_s, b.to_s, b.count));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        let mut out = String::from("metric,n,median_s,mean_s,sd_s\n");
        for (name, s) in &self.summary {
            out.push_str(&format!("{name},{},{},{},{}\n", s.n, f(s.median_s), f(s.mean_s), f(s.sd_s)));
        }
        out
    }
}

fn to_ms(ts: &str) -> Result<i64, SimError> {
    DateTime::parse_from_rfc3339(ts)
        .map(|t| t.timestamp_millis())
        .map_err(|e| SimError::Protocol(format!("bad timestamp {ts:?}: {e}")))
}

fn to_iso(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .expect("timestamp in range")
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn ts_field(v: &Value, key: &str) -> Result<i64, SimError> {
    to_ms(v[key].as_str().ok_or_else(|| SimError::Protocol(format!("missing {key} in {v}")))?)
}

fn id_field(v: &Value, key: &str) -> Result<u64, SimError> {
    v[key].as_u64().ok_or_else(|| SimError::Protocol(format!("missing {key} in {v}")))
}

#[derive(Debug)]
struct SimTask {
    id: u64,
    document_id: u64,
    thread_id: u64,
    created_ms: i64,
    characters: Vec<String>,
    slots: usize,
}

#[derive(Debug, Clone)]
struct Holding {
    slot: u64,
    task: u64,
    role: Option<String>,
    attested: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Claim,
    Submit,
}

#[derive(Debug)]
struct Worker {
    token: String,
    worked: BTreeSet<u64>,
    holding: Option<Holding>,
    next: Option<(i64, Action)>,
    requests: u64,
}

impl Worker {
    fn key(&mut self) -> String {
        self.requests += 1;
        format!("{}-{}", self.token, self.requests)
    }
}

fn ceil_tick(ms: f64, tick: i64) -> i64 {
    ((ms / tick as f64).ceil() as i64).max(0) * tick
}

fn floor_tick(ms: f64, tick: i64) -> i64 {
    ((ms / tick as f64).floor() as i64).max(0) * tick
}

/// The random stream for one attempt at one slot.
fn slot_rng(seed: u64, slot: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot.wrapping_mul(1 << 16) ^ u64::from(attempt));
    rng
}

struct Run<'a> {
    profile: &'a SimProfile,
    client: Client,
    corpus: Vec<String>,
    tasks: Vec<SimTask>,
    workers: Vec<Worker>,
    attempts: HashMap<u64, u32>,
    ideas: BTreeMap<u64, Vec<(Option<String>, i64)>>,
    rejections: BTreeMap<String, usize>,
    errors: BTreeMap<String, usize>,
    accepted: usize,
    claim_batches: usize,
    max_overlap: usize,
    clock_ms: i64,
}

/// Drives a crowd against the service at `server` until every slot is filled,
/// the tasks are cancelled, or the horizon passes.
pub async fn run_sim(profile: &SimProfile, server: &str) -> Result<SimResult, SimError> {
    profile.validate()?;
    let min_words = profile.min_idea_words;
    let corpus = load_corpus(&profile.idea_source, min_words)?;
    let needed = profile.total_slots();
    if corpus.len() < needed {
        return Err(SimError::CorpusTooSmall {
            needed,
            usable: corpus.len(),
            min_words,
        });
    }
    let client = Client::new(server, &profile.writer_key);
    let health = client.writer(Method::GET, "/healthz", None).await?;
    if !health.ok() {
        return Err(SimError::ServerUnreachable {
            url: server.to_string(),
            message: format!("health check returned {}", health.status),
        });
    }
    let clock: Value = client.writer_ok(Method::GET, "/admin/clock", None).await?;
    if clock["manual"] != json!(true) {
        return Err(SimError::ManualClockRequired);
    }
    let start = ts_field(&clock, "now")?;

    let mut run = Run {
        profile,
        client,
        corpus,
        tasks: Vec::new(),
        workers: Vec::new(),
        attempts: HashMap::new(),
        ideas: BTreeMap::new(),
        rejections: BTreeMap::new(),
        errors: BTreeMap::new(),
        accepted: 0,
        claim_batches: 0,
        max_overlap: 0,
        clock_ms: start,
    };
    run.launch_tasks().await?;
    run.spawn_workers(start);
    let timed_out = run.drive(start).await?;
    run.finish(start, timed_out).await
}

/// Runs the simulation and writes the histogram, summary and result files.
pub async fn run_sim_to_dir(profile: &SimProfile, server: &str, out: &Path) -> Result<SimResult, SimError> {
    let result = run_sim(profile, server).await?;
    let io = |path: &Path, e: std::io::Error| SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| io(&path, e))
    };
    write(HISTOGRAM_FILE, result.histogram_csv())?;
    write(SUMMARY_FILE, result.summary_csv())?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| SimError::Protocol(e.to_string()))?;
    write(RESULT_FILE, json + "\n")?;
    Ok(result)
}

impl Run<'_> {
    async fn launch_tasks(&mut self) -> Result<(), SimError> {
        let p = self.profile;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x005E_ED0F_7A5C);
        for (d, &size) in p.team_sizes.iter().enumerate() {
            let mut ids = Vec::new();
            let mut names = Vec::new();
            for i in 0..size {
                let name = format!("{} {}", ROLE_NAMES[i % ROLE_NAMES.len()], d * 10 + i + 1);
                let c: Value = self
                    .client
                    .writer_ok(
                        Method::POST,
                        "/characters",
                        Some(&json!({ "name": name, "description": format!("a simulated role for story {}", d + 1) })),
                    )
                    .await?;
                ids.push(id_field(&c, "id")?);
                names.push(name);
            }
            let team: Value = self
                .client
                .writer_ok(
                    Method::POST,
                    "/teams",
                    Some(&json!({ "name": format!("sim team {}", d + 1), "member_ids": ids })),
                )
                .await?;
            let body: Vec<&str> = (0..80).map(|_| PROMPT_WORDS[rng.random_range(0..PROMPT_WORDS.len())]).collect();
            let body = body.join(" ");
            let doc: Value = self
                .client
                .writer_ok(
                    Method::POST,
                    "/documents",
                    Some(&json!({ "title": format!("sim story {}", d + 1), "body": body })),
                )
                .await?;
            let document_id = id_field(&doc, "id")?;
            let strategy = p.strategy;
            let task: Value = self
                .client
                .writer_ok(
                    Method::POST,
                    &format!("/documents/{document_id}/tasks"),
                    Some(&json!({
                        "start": 0,
                        "end": body.chars().count(),
                        "team_id": team["id"],
                        "note": "simulated crowd",
                        "strategy": strategy,
                        "quota": p.quota,
                    })),
                )
                .await?;
            self.tasks.push(SimTask {
                id: id_field(&task, "id")?,
                document_id,
                thread_id: id_field(&task, "thread_id")?,
                created_ms: ts_field(&task, "created_at")?,
                characters: if strategy == Strategy::RolePlay { names } else { Vec::new() },
                slots: size * p.quota as usize,
            });
        }
        Ok(())
    }

    fn spawn_workers(&mut self, start: i64) {
        let p = self.profile;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut t = 0.0;
        for i in 0..p.n_workers {
            t += p.arrival.sample(&mut rng) * 1000.0;
            self.workers.push(Worker {
                token: format!("sim-{}-w{i:03}", p.seed),
                worked: BTreeSet::new(),
                holding: None,
                next: Some((start + ceil_tick(t, p.tick_ms), Action::Claim)),
                requests: 0,
            });
        }
    }

    fn all_done(&self) -> bool {
        self.accepted >= self.tasks.iter().map(|t| t.slots).sum::<usize>()
    }

    async fn set_clock(&mut self, t: i64) -> Result<(), SimError> {
        if t > self.clock_ms {
            let _: Value = self
                .client
                .writer_ok(Method::POST, "/admin/clock", Some(&json!({ "set": to_iso(t) })))
                .await?;
            self.clock_ms = t;
        }
        Ok(())
    }

    /// The event loop. Returns whether the horizon cut the run short.
    async fn drive(&mut self, start: i64) -> Result<bool, SimError> {
        let p = self.profile;
        let horizon = start + (p.horizon_seconds * 1000.0) as i64;
        let mut cancel_at = p.cancel_after_seconds.map(|s| start + ceil_tick(s * 1000.0, p.tick_ms));
        loop {
            if self.all_done() {
                return Ok(false);
            }
            let next_worker = self.workers.iter().filter_map(|w| w.next.map(|n| n.0)).min();
            let t = match (next_worker, cancel_at) {
                (None, None) => return Ok(false),
                (Some(a), Some(c)) => a.min(c),
                (Some(a), None) => a,
                (None, Some(c)) => c,
            };
            if t > horizon {
                return Ok(true);
            }
            self.set_clock(t).await?;
            if cancel_at.is_some_and(|c| c <= t) {
                cancel_at = None;
                self.cancel_open_tasks().await?;
                continue;
            }
            let due = |w: &Worker, a: Action| w.next == Some((t, a));
            let submits: Vec<usize> = (0..self.workers.len()).filter(|&i| due(&self.workers[i], Action::Submit)).collect();
            if !submits.is_empty() {
                self.submit_batch(t, &submits).await?;
                continue;
            }
            let claims: Vec<usize> = (0..self.workers.len()).filter(|&i| due(&self.workers[i], Action::Claim)).collect();
            let mut groups: BTreeMap<BTreeSet<u64>, Vec<usize>> = BTreeMap::new();
            for i in claims {
                groups.entry(self.workers[i].worked.clone()).or_default().push(i);
            }
            for (_, group) in groups {
                self.claim_batch(t, &group).await?;
            }
        }
    }

    async fn cancel_open_tasks(&mut self) -> Result<(), SimError> {
        for task in &self.tasks {
            let status: Value = self
                .client
                .writer_ok(Method::GET, &format!("/tasks/{}", task.id), None)
                .await?;
            if status["state"] == "OPEN" {
                let _: Value = self
                    .client
                    .writer_ok(Method::POST, &format!("/tasks/{}/cancel", task.id), None)
                    .await?;
            }
        }
        // nobody can finish anything now
        for w in &mut self.workers {
            w.next = None;
            w.holding = None;
        }
        Ok(())
    }

    async fn submit_batch(&mut self, t: i64, batch: &[usize]) -> Result<(), SimError> {
        let mut calls = Vec::new();
        for &i in batch {
            let w = &mut self.workers[i];
            let h = w.holding.clone().expect("submit without a slot");
            let attest_key = w.key();
            let submit_key = w.key();
            let body = self.corpus[h.slot as usize % self.corpus.len()].clone();
            let client = self.client.clone();
            let token = w.token.clone();
            calls.push(async move {
                if !h.attested {
                    let r = client
                        .worker(&token, &format!("/work/{}/read-bottom", h.slot), None, &attest_key)
                        .await?;
                    if !r.ok() {
                        return Ok::<Reply, SimError>(r);
                    }
                }
                client
                    .worker(&token, &format!("/work/{}/submit", h.slot), Some(&json!({ "body": body })), &submit_key)
                    .await
            });
        }
        self.max_overlap = self.max_overlap.max(calls.len());
        let replies = join_all(calls).await;
        for (&i, reply) in batch.iter().zip(replies) {
            let reply = reply?;
            let w = &mut self.workers[i];
            let h = w.holding.take().expect("held slot");
            w.next = Some((t, Action::Claim));
            if !reply.ok() {
                *self.errors.entry(reply.code()).or_default() += 1;
                continue;
            }
            match reply.body["status"].as_str() {
                Some("accepted") => {
                    let at = ts_field(&reply.body, "submitted_at")?;
                    let created = self.tasks.iter().find(|x| x.id == h.task).map_or(at, |x| x.created_ms);
                    self.ideas.entry(h.task).or_default().push((h.role, at - created));
                    w.worked.insert(h.task);
                    self.accepted += 1;
                }
                Some("rejected") => {
                    let reason = reply.body["reason"].as_str().unwrap_or("UNKNOWN").to_string();
                    *self.rejections.entry(reason).or_default() += 1;
                }
                _ => return Err(SimError::Protocol(format!("unexpected submit reply {}", reply.body))),
            }
        }
        Ok(())
    }

    async fn claim_batch(&mut self, t: i64, group: &[usize]) -> Result<(), SimError> {
        let mut calls = Vec::new();
        for &i in group {
            let w = &mut self.workers[i];
            let key = w.key();
            let client = self.client.clone();
            let token = w.token.clone();
            calls.push(async move { client.worker(&token, "/work/claim", None, &key).await });
        }
        self.claim_batches += 1;
        self.max_overlap = self.max_overlap.max(calls.len());
        let replies = join_all(calls).await;
        let p = self.profile;
        let all_tasks: BTreeSet<u64> = self.tasks.iter().map(|x| x.id).collect();
        for (&i, reply) in group.iter().zip(replies) {
            let reply = reply?;
            let w = &mut self.workers[i];
            if !reply.ok() {
                w.next = if w.worked.is_superset(&all_tasks) {
                    None
                } else {
                    Some((t + ceil_tick(p.retry_seconds * 1000.0, p.tick_ms), Action::Claim))
                };
                continue;
            }
            let offer = &reply.body;
            let slot = id_field(offer, "slot_id")?;
            let task = id_field(offer, "task_id")?;
            let offered = ts_field(offer, "offered_at")?;
            let lock_ms = offer["time_lock_seconds"].as_f64().unwrap_or(30.0) * 1000.0;
            let attempt = self.attempts.entry(slot).or_insert(0);
            let mut rng = slot_rng(p.seed, slot, *attempt);
            let compliant = *attempt > 0 || rng.random_bool(p.compliance);
            *attempt += 1;
            let read_ms = p.read_time.sample(&mut rng) * 1000.0;
            let delay = if compliant {
                ceil_tick(read_ms.max(lock_ms), p.tick_ms)
            } else {
                floor_tick(rng.random_range(0.0..1.0) * lock_ms, p.tick_ms)
            };
            w.holding = Some(Holding {
                slot,
                task,
                role: offer["role"]["name"].as_str().map(str::to_string),
                attested: false,
            });
            w.next = Some((offered + delay, Action::Submit));
        }
        Ok(())
    }

    async fn finish(self, start: i64, timed_out: bool) -> Result<SimResult, SimError> {
        let mut tasks = Vec::new();
        let mut first = Vec::new();
        let mut coverage = Vec::new();
        let mut last = Vec::new();
        let mut idea_ms = Vec::new();
        let mut voided_total = 0;
        for task in &self.tasks {
            let status: Value = self
                .client
                .writer_ok(Method::GET, &format!("/tasks/{}", task.id), None)
                .await?;
            let ideas = self.ideas.get(&task.id).cloned().unwrap_or_default();
            let simulated = task_latency(&task.characters, &ideas);
            let reply = self
                .client
                .writer(Method::GET, &format!("/tasks/{}/latency", task.id), None)
                .await?;
            let reported: Option<Latency> = if reply.ok() {
                Some(serde_json::from_value(reply.body).map_err(|e| SimError::Protocol(e.to_string()))?)
            } else {
                None
            };
            let agrees = match (simulated, reported) {
                (Some(a), Some(b)) => {
                    let close = |x: i64, y: i64| (x - y).abs() <= 1;
                    close(a.first_idea_ms, b.first_idea_ms)
                        && close(a.last_idea_ms, b.last_idea_ms)
                        && match (a.per_character_coverage_ms, b.per_character_coverage_ms) {
                            (Some(x), Some(y)) => close(x, y),
                            (None, None) => true,
                            _ => false,
                        }
                }
                (None, None) => true,
                _ => false,
            };
            if let Some(l) = simulated {
                first.push(l.first_idea_ms);
                last.push(l.last_idea_ms);
                coverage.extend(l.per_character_coverage_ms);
            }
            idea_ms.extend(ideas.iter().map(|i| i.1));
            let doc: Value = self
                .client
                .writer_ok(Method::GET, &format!("/documents/{}", task.document_id), None)
                .await?;
            let thread_replies = doc["threads"]
                .as_array()
                .and_then(|ts| ts.iter().find(|th| th["id"].as_u64() == Some(task.thread_id)))
                .and_then(|th| th["replies"].as_array())
                .map_or(0, Vec::len);
            let mut per_character: BTreeMap<String, usize> = BTreeMap::new();
            if let Some(by_role) = status["ideas_by_role"].as_object() {
                for (role, list) in by_role {
                    per_character.insert(role.clone(), list.as_array().map_or(0, Vec::len));
                }
            }
            let voided = status["slots"]["void"].as_u64().unwrap_or(0) as usize;
            voided_total += voided;
            tasks.push(TaskResult {
                task_id: task.id,
                document_id: task.document_id,
                characters: task.characters.clone(),
                slots: task.slots,
                state: status["state"].as_str().unwrap_or("").to_string(),
                accepted: ideas.len(),
                voided,
                ideas_per_character: per_character,
                thread_replies,
                simulated_latency: simulated,
                reported_latency: reported,
                latency_agrees: agrees,
            });
        }
        let mut summary = BTreeMap::new();
        summary.insert("first_idea".to_string(), summarize(&first));
        summary.insert("per_character_coverage".to_string(), summarize(&coverage));
        summary.insert("last_idea".to_string(), summarize(&last));
        let histogram = latency::histogram(&idea_ms, self.profile.histogram_bucket_seconds)
            .into_iter()
            .map(|(from_s, to_s, count)| Bucket { from_s, to_s, count })
            .collect();
        Ok(SimResult {
            acceptances: self.accepted,
            rejections: self.rejections,
            errors: self.errors,
            total_slots: self.tasks.iter().map(|t| t.slots).sum(),
            voided_slots: voided_total,
            all_tasks_complete: tasks.iter().all(|t| t.state == "COMPLETE"),
            timed_out,
            simulated_ms: self.clock_ms - start,
            claim_batches: self.claim_batches,
            max_overlap: self.max_overlap,
            tasks,
            summary,
            histogram,
        })
    }
}
