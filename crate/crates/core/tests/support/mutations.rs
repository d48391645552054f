//! Random mutation sequences over the whole engine surface, valid and
//! invalid alike, for replay and recovery tests.

use heteroglossia_core::engine::Engine;
use heteroglossia_core::orchestrator::{Strategy, TaskRequest};
use heteroglossia_core::workspace::{CharacterPatch, Edit, TeamPatch};
use heteroglossia_core::{CharacterId, DocumentId, ManualClock, SlotId, TaskId, TeamId, ThreadId, WorkerId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::orchestration_checks::{fresh_words, LIPSUM};

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> Option<T> {
    (!items.is_empty()).then(|| items[rng.random_range(0..items.len())])
}

/// Applies `steps` random operations. Failures are part of the exercise:
/// they must leave no trace in state or log.
pub fn random_session(engine: &mut Engine, clock: &ManualClock, rng: &mut ChaCha8Rng, steps: usize) {
    for step in 0..steps {
        clock.advance_millis(rng.random_range(0..40_000));
        let characters: Vec<CharacterId> = engine.workspace().characters().map(|c| c.id).collect();
        let teams: Vec<TeamId> = engine.workspace().list_teams().map(|t| t.id).collect();
        let documents: Vec<DocumentId> = engine.workspace().documents().map(|d| d.id).collect();
        let tasks: Vec<TaskId> = engine.orchestrator().tasks().map(|t| t.id).collect();
        let threads: Vec<ThreadId> = documents
            .iter()
            .flat_map(|d| engine.workspace().threads_on(*d).map(|t| t.id).collect::<Vec<_>>())
            .collect();
        let worker = WorkerId::new(format!("w{}", rng.random_range(0..8)));
        let key = rng.random_bool(0.3).then(|| format!("k{}", rng.random_range(0..4)));
        let key = key.as_deref();
        let _ = match rng.random_range(0..20) {
            0 => engine.create_character(&format!("C{step}"), "desc", None).map(drop),
            1 => match pick(rng, &characters) {
                Some(c) => engine
                    .update_character(
                        c,
                        &CharacterPatch {
                            name: Some(format!("Renamed {step}")),
                            ..Default::default()
                        },
                    )
                    .map(drop),
                None => Ok(()),
            },
            2 if rng.random_bool(0.3) => match pick(rng, &characters) {
                Some(c) => engine.delete_character(c),
                None => Ok(()),
            },
            3 => {
                let n = rng.random_range(0..=characters.len().min(3));
                let members: Vec<CharacterId> = characters.iter().rev().take(n).copied().collect();
                engine.create_team(&format!("T{step}"), &members).map(drop)
            }
            4 => match (pick(rng, &teams), pick(rng, &characters)) {
                (Some(t), Some(c)) => engine
                    .update_team(
                        t,
                        &TeamPatch {
                            member_ids: Some(vec![c]),
                            ..Default::default()
                        },
                    )
                    .map(drop),
                _ => Ok(()),
            },
            5 if rng.random_bool(0.2) => match pick(rng, &teams) {
                Some(t) => engine.delete_team(t),
                None => Ok(()),
            },
            6 => engine.create_document(&format!("D{step}"), LIPSUM).map(drop),
            7 => match pick(rng, &documents) {
                Some(d) => {
                    let len = engine.workspace().document(d).map_or(0, |d| d.char_len());
                    let at = rng.random_range(0..=len + 2);
                    let delete_len = rng.random_range(0..6);
                    engine
                        .edit_document(
                            d,
                            Edit {
                                at,
                                delete_len,
                                insert: if rng.random_bool(0.5) { "ünïcode ".into() } else { String::new() },
                            },
                        )
                        .map(drop)
                }
                None => Ok(()),
            },
            8 => match pick(rng, &documents) {
                Some(d) => {
                    let start = rng.random_range(0..40);
                    engine
                        .create_thread(d, start, start + rng.random_range(0..30), "comment")
                        .map(drop)
                }
                None => Ok(()),
            },
            9 => match pick(rng, &threads) {
                Some(t) => engine.append_reply(t, "writer", "reply").map(drop),
                None => Ok(()),
            },
            10 | 11 => match (pick(rng, &documents), pick(rng, &teams)) {
                (Some(d), Some(t)) => engine
                    .create_task(&TaskRequest {
                        document_id: d,
                        start: rng.random_range(0..10),
                        end: rng.random_range(10..120),
                        team_id: t,
                        note: rng.random_bool(0.5).then(|| "keep it short".to_string()),
                        strategy: if rng.random_bool(0.5) { Strategy::RolePlay } else { Strategy::NoRole },
                        per_character_quota: rng.random_range(0..4),
                    })
                    .map(drop),
                _ => Ok(()),
            },
            12 | 19 => engine.claim(&worker, key).map(drop),
            13 | 16 => {
                let slot = active_slot(engine, &worker).unwrap_or(SlotId(rng.random_range(1..20)));
                engine.attest_read_bottom(slot, &worker, key)
            }
            14 | 17 | 18 => {
                let slot = active_slot(engine, &worker).unwrap_or(SlotId(rng.random_range(1..20)));
                let body = if rng.random_bool(0.8) {
                    fresh_words(rng.random_range(40..70), step as u64)
                } else {
                    LIPSUM.to_string()
                };
                engine.submit_idea(slot, &worker, &body, key).map(drop)
            }
            15 if rng.random_bool(0.2) => match pick(rng, &tasks) {
                Some(t) => engine.cancel_task(t),
                None => Ok(()),
            },
            _ => Ok(()),
        };
    }
}

fn active_slot(engine: &Engine, worker: &WorkerId) -> Option<SlotId> {
    engine
        .orchestrator()
        .tasks()
        .flat_map(|t| engine.orchestrator().slots_of(t.id))
        .find(|s| s.claimed_by.as_ref() == Some(worker))
        .map(|s| s.id)
}
