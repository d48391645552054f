use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread;

use heteroglossia_core::engine::{Engine, EngineError, NullSink, SubmitOutcome};
use heteroglossia_core::orchestrator::{
    compute_reward, OrchestratorError, RejectionReason, SlotState, Strategy, TaskRequest, TaskState,
};
use heteroglossia_core::{CharacterId, ManualClock, TaskId, Timestamp, WorkerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

/// Cents for `w` words as an exact rational rounded half up:
/// 100 * (w / 1000 + 1) = (100 w + 100000) / 1000.
fn reward_oracle(w: u64) -> u64 {
    let numerator = 100 * w + 100_000;
    let (q, r) = (numerator / 1000, numerator % 1000);
    if 2 * r >= 1000 {
        q + 1
    } else {
        q
    }
}

pub fn check_payment(seed: u64) -> Check {
    if compute_reward(1000) != 200 || compute_reward(0) != 100 {
        return Err(format!("reward(1000)={} reward(0)={}", compute_reward(1000), compute_reward(0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2000 {
        let w = rng.random_range(0..=5000u64);
        if compute_reward(w + 1000) - compute_reward(w) != 100 {
            return Err(format!("linearity fails at w={w}"));
        }
    }
    for w in 0..=20_000 {
        if compute_reward(w) != reward_oracle(w) {
            return Err(format!("reward({w}) = {} expected {}", compute_reward(w), reward_oracle(w)));
        }
    }
    Ok("examples, 2000 sampled linearity checks, exact rational rounding for w <= 20000".into())
}

pub const LIPSUM: &str = "the lighthouse keeper counted ships every night while gulls argued over \
    scraps of bread the harbor master ignored letters from the capital and the fog rolled in \
    thick as wool across the grey water where old boats creaked against their ropes until morning";

/// Engine with a manual clock and a team of `size` characters over one document.
pub struct Fixture {
    pub engine: Engine,
    pub clock: Arc<ManualClock>,
    pub team: heteroglossia_core::TeamId,
    pub document: heteroglossia_core::DocumentId,
    pub characters: Vec<CharacterId>,
    pub prompt_len: usize,
}

impl Fixture {
    pub fn new(size: usize) -> Self {
        let clock = Arc::new(ManualClock::new(Timestamp::from_millis(1_700_000_000_000)));
        let mut engine = Engine::new(clock.clone(), Box::new(NullSink));
        let characters: Vec<CharacterId> = (0..size)
            .map(|i| engine.create_character(&format!("Character {i}"), "a role", None).unwrap().id)
            .collect();
        let team = engine.create_team("crew", &characters).unwrap().id;
        let document = engine.create_document("draft", LIPSUM).unwrap().id;
        Fixture {
            engine,
            clock,
            team,
            document,
            characters,
            prompt_len: LIPSUM.chars().count(),
        }
    }

    pub fn task(&mut self, quota: u32, strategy: Strategy) -> TaskId {
        self.engine
            .create_task(&TaskRequest {
                document_id: self.document,
                start: 0,
                end: self.prompt_len,
                team_id: self.team,
                note: None,
                strategy,
                per_character_quota: quota,
            })
            .unwrap()
            .id
    }
}

/// A body of `n` words none of which occur in the prompt.
pub fn fresh_words(n: usize, salt: u64) -> String {
    (0..n).map(|i| format!("idea{salt}x{i}")).collect::<Vec<_>>().join(" ")
}

pub fn check_slot_algebra(seed: u64, triples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..triples {
        let size = rng.random_range(1..=5usize);
        let quota = rng.random_range(1..=5u32);
        let strategy = if rng.random_bool(0.5) { Strategy::RolePlay } else { Strategy::NoRole };
        let mut fx = Fixture::new(size);
        let task = fx.task(quota, strategy);
        let slots: Vec<_> = fx.engine.orchestrator().slots_of(task).cloned().collect();
        if slots.len() != size * quota as usize {
            return Err(format!("case {case}: {} slots for size {size} quota {quota} {strategy:?}", slots.len()));
        }
        let mut per_role: BTreeMap<Option<CharacterId>, u32> = BTreeMap::new();
        for s in &slots {
            *per_role.entry(s.role).or_default() += 1;
        }
        let ok = match strategy {
            Strategy::RolePlay => fx.characters.iter().all(|c| per_role.get(&Some(*c)) == Some(&quota)),
            Strategy::NoRole => per_role.len() == 1 && per_role.contains_key(&None),
        };
        if !ok {
            return Err(format!("case {case}: role distribution {per_role:?}"));
        }
    }
    Ok(format!("{triples} random (size, quota, strategy) triples"))
}

/// `workers` threads race for one task; some send a short idea first. Returns
/// the number of acceptances after the task completes.
pub fn stress(size: usize, quota: u32, strategy: Strategy, workers: usize) -> Result<usize, String> {
    let mut fx = Fixture::new(size);
    let task = fx.task(quota, strategy);
    let clock = fx.clock.clone();
    let engine = Arc::new(Mutex::new(fx.engine));
    let handles: Vec<_> = (0..workers)
        .map(|i| {
            let engine = engine.clone();
            let clock = clock.clone();
            thread::spawn(move || {
                let worker = WorkerId::new(format!("stress-{i}"));
                let mut sloppy = i % 4 == 0;
                let mut accepted = 0usize;
                loop {
                    let claim = engine.lock().unwrap().claim(&worker, None);
                    let offer = match claim {
                        Ok(offer) => offer,
                        Err(EngineError::Orchestrator(
                            OrchestratorError::NoWorkAvailable | OrchestratorError::AlreadyWorkedTask(_),
                        )) => {
                            let done = engine.lock().unwrap().task_status(task).unwrap().state != TaskState::Open;
                            if done || accepted > 0 {
                                return accepted;
                            }
                            thread::yield_now();
                            continue;
                        }
                        Err(e) => panic!("claim failed: {e}"),
                    };
                    engine.lock().unwrap().attest_read_bottom(offer.slot_id, &worker, None).unwrap();
                    clock.advance_millis(30_000);
                    let body = if sloppy { fresh_words(10, i as u64) } else { fresh_words(60, i as u64) };
                    sloppy = false;
                    match engine.lock().unwrap().submit_idea(offer.slot_id, &worker, &body, None).unwrap() {
                        SubmitOutcome::Accepted(_) => accepted += 1,
                        SubmitOutcome::Rejected { reason, .. } => assert_eq!(reason, RejectionReason::TooShort),
                    }
                }
            })
        })
        .collect();
    let total: usize = handles.into_iter().map(|h| h.join().expect("worker panicked")).sum();
    let engine = engine.lock().unwrap();
    let status = engine.task_status(task).map_err(|e| e.to_string())?;
    if status.state != TaskState::Complete {
        return Err(format!("task ended {:?}", status.state));
    }
    let subs = engine.orchestrator().submissions_of(task);
    if subs.len() != total {
        return Err(format!("{} stored submissions vs {total} reported", subs.len()));
    }
    let mut per_role: BTreeMap<Option<CharacterId>, u32> = BTreeMap::new();
    for s in &subs {
        *per_role.entry(s.role).or_default() += 1;
    }
    let cap = match strategy {
        Strategy::RolePlay => quota,
        Strategy::NoRole => quota * size as u32,
    };
    if let Some((role, n)) = per_role.iter().find(|(_, n)| **n > cap) {
        return Err(format!("quota overrun: {role:?} got {n}"));
    }
    let mut workers_seen: Vec<_> = subs.iter().map(|s| &s.worker_id).collect();
    workers_seen.sort();
    workers_seen.dedup();
    if workers_seen.len() != subs.len() {
        return Err("a worker delivered twice on one task".into());
    }
    Ok(total)
}

pub fn check_stress(workers: usize) -> Check {
    let mut parts = Vec::new();
    for (size, quota, strategy) in [(3, 3, Strategy::RolePlay), (5, 5, Strategy::RolePlay), (4, 2, Strategy::NoRole)] {
        let got = stress(size, quota, strategy, workers)?;
        let want = size * quota as usize;
        if got != want {
            return Err(format!("{size}x{quota} {strategy:?}: {got} acceptances, expected {want}"));
        }
        parts.push(format!("{size}x{quota}={got}"));
    }
    Ok(format!("{workers} concurrent workers: {}", parts.join(", ")))
}

/// Randomized gate cases; returns the number checked.
pub fn check_gates(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fx = Fixture::new(5);
    fx.task(5, Strategy::RolePlay);
    let prompt_tokens: Vec<&str> = LIPSUM.split_whitespace().collect();
    let lock = fx.engine.settings().gates.time_lock_ms;
    let (mut time_cases, mut short_cases, mut copy_cases) = (0, 0, 0);
    for case in 0..cases {
        let worker = WorkerId::new(format!("gate-{case}"));
        let offer = match fx.engine.claim(&worker, None) {
            Ok(o) => o,
            Err(EngineError::Orchestrator(OrchestratorError::NoWorkAvailable)) => {
                fx.task(5, Strategy::RolePlay);
                fx.engine.claim(&worker, None).map_err(|e| e.to_string())?
            }
            Err(e) => return Err(e.to_string()),
        };
        let kind = case % 3;
        let (elapsed, body, expected) = match kind {
            0 => {
                time_cases += 1;
                let elapsed = match rng.random_range(0..4) {
                    0 => lock,
                    1 => lock - 1,
                    _ => lock + rng.random_range(-3000..=3000),
                };
                let expected = if elapsed >= lock { None } else { Some(RejectionReason::TimeLock) };
                (elapsed, fresh_words(rng.random_range(50..120), case as u64), expected)
            }
            1 => {
                short_cases += 1;
                let words = rng.random_range(0..50);
                (lock + rng.random_range(0..60_000), fresh_words(words, case as u64), Some(RejectionReason::TooShort))
            }
            _ => {
                copy_cases += 1;
                let start = rng.random_range(0..=prompt_tokens.len() - 20);
                let span = prompt_tokens[start..start + 20].join(" ");
                let before = rng.random_range(0..60);
                let body = format!("{} {span} {}", fresh_words(before, case as u64), fresh_words(40, case as u64 + 1_000_000));
                (lock + rng.random_range(0..60_000), body, Some(RejectionReason::CopyOverlap))
            }
        };
        fx.engine.attest_read_bottom(offer.slot_id, &worker, None).map_err(|e| e.to_string())?;
        let offered = fx.engine.orchestrator().slot(offer.slot_id).unwrap().offered_at.unwrap();
        fx.clock.set(offered.plus_millis(elapsed));
        let outcome = fx
            .engine
            .submit_idea(offer.slot_id, &worker, &body, None)
            .map_err(|e| e.to_string())?;
        let got = match outcome {
            SubmitOutcome::Accepted(s) => {
                if s.elapsed_read_ms < lock {
                    return Err(format!("case {case}: accepted after {} ms", s.elapsed_read_ms));
                }
                None
            }
            SubmitOutcome::Rejected { reason, slot_id } => {
                if fx.engine.orchestrator().slot(slot_id).unwrap().state != SlotState::Unclaimed {
                    return Err(format!("case {case}: rejected slot not released"));
                }
                Some(reason)
            }
        };
        if got != expected {
            return Err(format!("case {case}: elapsed {elapsed} ms, {} words: got {got:?}, expected {expected:?}", body.split_whitespace().count()));
        }
    }
    // missing attestation, with the time lock satisfied
    let worker = WorkerId::new("no-attest");
    let offer = fx.engine.claim(&worker, None).or_else(|_| {
        fx.task(1, Strategy::NoRole);
        fx.engine.claim(&worker, None)
    });
    let offer = offer.map_err(|e| e.to_string())?;
    fx.clock.advance_millis(lock);
    match fx.engine.submit_idea(offer.slot_id, &worker, &fresh_words(80, 7), None) {
        Ok(SubmitOutcome::Rejected { reason: RejectionReason::NoReadAttestation, .. }) => {}
        other => return Err(format!("unattested submission gave {other:?}")),
    }
    Ok(format!("{cases} cases ({time_cases} lock boundary, {short_cases} short, {copy_cases} copied spans)"))
}
