//! Event-sourced state machine tying the workspace and orchestrator together.
//!
//! Every mutation is validated against current state, written to the
//! [`EventSink`] and only then applied. A sink failure leaves state untouched
//! and is reported to the caller, so nothing is acknowledged before it is
//! recorded. Replaying the recorded events from an empty [`State`] rebuilds
//! the same state.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{
    idea_text_id, near_duplicate_flags, prompt_text_id, rank_ideas, DistanceError, DistanceScorer, Metric,
    RankedIdea, TextRef,
};
use crate::ids::{CharacterId, DocumentId, SlotId, SubmissionId, TaskId, TeamId, ThreadId, WorkerId};
use crate::orchestrator::{
    AssignmentOffer, AssignmentSlot, GateConfig, IdeaSubmission, IdeationTask, Orchestrator, OrchestratorError,
    RejectionReason, SubmitDecision, TaskLatencyReport, TaskRequest, TaskStatus,
};
use crate::time::{Clock, Timestamp};
use crate::workspace::{
    CharacterPatch, CharacterProfile, CommentThread, Document, Edit, Reply, Team, TeamPatch, Workspace,
    WorkspaceError,
};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("storage unavailable: {0}")]
pub struct StorageError(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    CharacterCreated { character: CharacterProfile },
    CharacterUpdated { character: CharacterProfile },
    CharacterDeleted { id: CharacterId },
    TeamCreated { team: Team },
    TeamUpdated { team: Team },
    TeamDeleted { id: TeamId },
    DocumentCreated { document: Document },
    DocumentEdited { id: DocumentId, edit: Edit },
    ThreadCreated { thread: CommentThread },
    ReplyAppended { thread_id: ThreadId, reply: Reply },
    TaskCreated {
        task: IdeationTask,
        slots: Vec<AssignmentSlot>,
        thread: CommentThread,
    },
    SlotClaimed { slot_id: SlotId, worker_id: WorkerId },
    ReadAttested { slot_id: SlotId, worker_id: WorkerId },
    SubmissionAccepted { submission: IdeaSubmission },
    SubmissionRejected {
        slot_id: SlotId,
        worker_id: WorkerId,
        reason: RejectionReason,
    },
    TaskCancelled { task_id: TaskId },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::CharacterCreated { .. } => "character_created",
            Event::CharacterUpdated { .. } => "character_updated",
            Event::CharacterDeleted { .. } => "character_deleted",
            Event::TeamCreated { .. } => "team_created",
            Event::TeamUpdated { .. } => "team_updated",
            Event::TeamDeleted { .. } => "team_deleted",
            Event::DocumentCreated { .. } => "document_created",
            Event::DocumentEdited { .. } => "document_edited",
            Event::ThreadCreated { .. } => "thread_created",
            Event::ReplyAppended { .. } => "reply_appended",
            Event::TaskCreated { .. } => "task_created",
            Event::SlotClaimed { .. } => "slot_claimed",
            Event::ReadAttested { .. } => "read_attested",
            Event::SubmissionAccepted { .. } => "submission_accepted",
            Event::SubmissionRejected { .. } => "submission_rejected",
            Event::TaskCancelled { .. } => "task_cancelled",
        }
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub event: Event,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

pub trait EventSink: Send + Sync {
    fn append(&mut self, record: &EventRecord) -> Result<(), StorageError>;
}

/// Discards events.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _record: &EventRecord) -> Result<(), StorageError> {
        Ok(())
    }
}

/// Keeps events in a shared vector; handy for tests and in-process replay.
#[derive(Debug, Default, Clone)]
pub struct MemorySink(pub Arc<Mutex<Vec<EventRecord>>>);

impl MemorySink {
    pub fn records(&self) -> Vec<EventRecord> {
        self.0.lock().map(|r| r.clone()).unwrap_or_default()
    }
}

impl EventSink for MemorySink {
    fn append(&mut self, record: &EventRecord) -> Result<(), StorageError> {
        self.0
            .lock()
            .map_err(|_| StorageError("memory sink poisoned".into()))?
            .push(record.clone());
        Ok(())
    }
}

/// What a worker mutation returned, remembered per idempotency key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WorkerOutcome {
    Claimed { offer: AssignmentOffer },
    Attested { slot_id: SlotId },
    Accepted { submission_id: SubmissionId },
    Rejected { slot_id: SlotId, reason: RejectionReason },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubmitOutcome {
    Accepted(IdeaSubmission),
    Rejected { slot_id: SlotId, reason: RejectionReason },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub workspace: Workspace,
    pub orchestrator: Orchestrator,
    idempotency: BTreeMap<WorkerId, BTreeMap<String, WorkerOutcome>>,
}

impl State {
    pub fn remembered(&self, worker: &WorkerId, key: &str) -> Option<&WorkerOutcome> {
        self.idempotency.get(worker).and_then(|m| m.get(key))
    }

    fn remember(&mut self, worker: &WorkerId, key: &Option<String>, outcome: WorkerOutcome) {
        if let Some(key) = key {
            self.idempotency
                .entry(worker.clone())
                .or_default()
                .insert(key.clone(), outcome);
        }
    }

    /// Applies an already-validated event. Never fails.
    pub fn apply(&mut self, record: &EventRecord, gates: &GateConfig) {
        let at = record.at;
        let key = &record.idempotency_key;
        match &record.event {
            Event::CharacterCreated { character } | Event::CharacterUpdated { character } => {
                self.workspace.commit_character(character.clone())
            }
            Event::CharacterDeleted { id } => self.workspace.commit_delete_character(*id),
            Event::TeamCreated { team } | Event::TeamUpdated { team } => self.workspace.commit_team(team.clone()),
            Event::TeamDeleted { id } => self.workspace.commit_delete_team(*id),
            Event::DocumentCreated { document } => self.workspace.commit_document(document.clone()),
            Event::DocumentEdited { id, edit } => self.workspace.commit_edit(*id, edit),
            Event::ThreadCreated { thread } => self.workspace.commit_thread(thread.clone()),
            Event::ReplyAppended { thread_id, reply } => self.workspace.commit_reply(*thread_id, reply.clone()),
            Event::TaskCreated { task, slots, thread } => {
                self.workspace.commit_thread(thread.clone());
                self.orchestrator.commit_task(task.clone(), slots.clone());
            }
            Event::SlotClaimed { slot_id, worker_id } => {
                self.orchestrator.commit_claim(*slot_id, worker_id, at);
                if let Ok(offer) = self.orchestrator.offer(&self.workspace, gates, *slot_id) {
                    self.remember(worker_id, key, WorkerOutcome::Claimed { offer });
                }
            }
            Event::ReadAttested { slot_id, worker_id } => {
                self.orchestrator.commit_attest(*slot_id);
                self.remember(worker_id, key, WorkerOutcome::Attested { slot_id: *slot_id });
            }
            Event::SubmissionAccepted { submission } => {
                let thread_id = self.orchestrator.task(submission.task_id).map(|t| t.thread_id);
                if let Some(thread_id) = thread_id {
                    self.workspace.commit_reply(
                        thread_id,
                        Reply {
                            author_label: submission.role_label.clone(),
                            body: submission.body.clone(),
                            at,
                        },
                    );
                }
                self.remember(
                    &submission.worker_id,
                    key,
                    WorkerOutcome::Accepted {
                        submission_id: submission.id,
                    },
                );
                self.orchestrator.commit_accept(submission.clone());
            }
            Event::SubmissionRejected {
                slot_id,
                worker_id,
                reason,
            } => {
                self.orchestrator.commit_reject(*slot_id);
                self.remember(
                    worker_id,
                    key,
                    WorkerOutcome::Rejected {
                        slot_id: *slot_id,
                        reason: *reason,
                    },
                );
            }
            Event::TaskCancelled { task_id } => self.orchestrator.commit_cancel(*task_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub gates: GateConfig,
    pub duplicate_distance_threshold: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            gates: GateConfig::default(),
            duplicate_distance_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("event log jumps from sequence {expected} to {found}")]
    Gap { expected: u64, found: u64 },
}

/// An accepted idea together with its rank and duplicate flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedIdeaView {
    pub rank: usize,
    pub submission: IdeaSubmission,
    pub distance: Option<f64>,
    pub unscored: bool,
    pub near_duplicate: bool,
}

pub struct Engine {
    state: State,
    seq: u64,
    sink: Box<dyn EventSink>,
    clock: Arc<dyn Clock>,
    settings: Settings,
    scorer: DistanceScorer,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("seq", &self.seq).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(clock: Arc<dyn Clock>, sink: Box<dyn EventSink>) -> Self {
        Engine {
            state: State::default(),
            seq: 0,
            sink,
            clock,
            settings: Settings::default(),
            scorer: DistanceScorer::default(),
        }
    }

    pub fn with_settings(mut self, settings: Settings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_scorer(mut self, scorer: DistanceScorer) -> Self {
        self.scorer = scorer;
        self
    }

    /// Starts from a snapshot taken at `seq`.
    pub fn with_snapshot(mut self, state: State, seq: u64) -> Self {
        self.state = state;
        self.seq = seq;
        self
    }

    /// Applies logged events after the current sequence number. Events at or
    /// below it are already part of the state and are skipped.
    pub fn replay<I: IntoIterator<Item = EventRecord>>(&mut self, records: I) -> Result<usize, ReplayError> {
        let mut applied = 0;
        for record in records {
            if record.seq <= self.seq {
                continue;
            }
            if record.seq != self.seq + 1 {
                return Err(ReplayError::Gap {
                    expected: self.seq + 1,
                    found: record.seq,
                });
            }
            self.state.apply(&record, &self.settings.gates);
            self.seq = record.seq;
            applied += 1;
        }
        Ok(applied)
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn scorer(&self) -> &DistanceScorer {
        &self.scorer
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn workspace(&self) -> &Workspace {
        &self.state.workspace
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.state.orchestrator
    }

    fn commit(&mut self, event: Event, at: Timestamp, idempotency_key: Option<String>) -> Result<(), EngineError> {
        let record = EventRecord {
            seq: self.seq + 1,
            at,
            event,
            idempotency_key,
        };
        self.sink.append(&record)?;
        self.seq = record.seq;
        self.state.apply(&record, &self.settings.gates);
        Ok(())
    }

    // ---- workspace ----

    pub fn create_character(
        &mut self,
        name: &str,
        description: &str,
        image_ref: Option<String>,
    ) -> Result<CharacterProfile, EngineError> {
        let now = self.now();
        let character = self
            .state
            .workspace
            .prepare_create_character(name, description, image_ref, now)?;
        self.commit(Event::CharacterCreated { character: character.clone() }, now, None)?;
        Ok(character)
    }

    pub fn update_character(&mut self, id: CharacterId, patch: &CharacterPatch) -> Result<CharacterProfile, EngineError> {
        let character = self.state.workspace.prepare_update_character(id, patch)?;
        self.commit(Event::CharacterUpdated { character: character.clone() }, self.now(), None)?;
        Ok(character)
    }

    pub fn delete_character(&mut self, id: CharacterId) -> Result<(), EngineError> {
        self.state.workspace.prepare_delete_character(id)?;
        self.commit(Event::CharacterDeleted { id }, self.now(), None)
    }

    pub fn create_team(&mut self, name: &str, member_ids: &[CharacterId]) -> Result<Team, EngineError> {
        let team = self.state.workspace.prepare_create_team(name, member_ids)?;
        self.commit(Event::TeamCreated { team: team.clone() }, self.now(), None)?;
        Ok(team)
    }

    pub fn update_team(&mut self, id: TeamId, patch: &TeamPatch) -> Result<Team, EngineError> {
        let team = self.state.workspace.prepare_update_team(id, patch)?;
        self.commit(Event::TeamUpdated { team: team.clone() }, self.now(), None)?;
        Ok(team)
    }

    pub fn delete_team(&mut self, id: TeamId) -> Result<(), EngineError> {
        self.state.workspace.prepare_delete_team(id)?;
        self.commit(Event::TeamDeleted { id }, self.now(), None)
    }

    pub fn create_document(&mut self, title: &str, body: &str) -> Result<Document, EngineError> {
        let document = self.state.workspace.prepare_create_document(title, body);
        self.commit(Event::DocumentCreated { document: document.clone() }, self.now(), None)?;
        Ok(document)
    }

    pub fn edit_document(&mut self, id: DocumentId, edit: Edit) -> Result<Document, EngineError> {
        self.state.workspace.prepare_edit_document(id, &edit)?;
        self.commit(Event::DocumentEdited { id, edit }, self.now(), None)?;
        Ok(self.state.workspace.document(id).cloned().expect("document exists after edit"))
    }

    pub fn create_thread(
        &mut self,
        document_id: DocumentId,
        start: usize,
        end: usize,
        overview: &str,
    ) -> Result<CommentThread, EngineError> {
        let now = self.now();
        let thread = self
            .state
            .workspace
            .prepare_create_thread(document_id, start, end, overview, now)?;
        self.commit(Event::ThreadCreated { thread: thread.clone() }, now, None)?;
        Ok(thread)
    }

    pub fn append_reply(&mut self, thread_id: ThreadId, author_label: &str, body: &str) -> Result<CommentThread, EngineError> {
        self.state.workspace.prepare_append_reply(thread_id)?;
        let now = self.now();
        let reply = Reply {
            author_label: author_label.to_string(),
            body: body.to_string(),
            at: now,
        };
        self.commit(Event::ReplyAppended { thread_id, reply }, now, None)?;
        Ok(self.state.workspace.thread(thread_id).cloned().expect("thread exists after reply"))
    }

    // ---- orchestrator ----

    pub fn create_task(&mut self, req: &TaskRequest) -> Result<IdeationTask, EngineError> {
        let now = self.now();
        let new = self
            .state
            .orchestrator
            .prepare_create_task(&self.state.workspace, req, now)?;
        let task = new.task.clone();
        self.commit(
            Event::TaskCreated {
                task: new.task,
                slots: new.slots,
                thread: new.thread,
            },
            now,
            None,
        )?;
        Ok(task)
    }

    pub fn claim(&mut self, worker: &WorkerId, idempotency_key: Option<&str>) -> Result<AssignmentOffer, EngineError> {
        if let Some(WorkerOutcome::Claimed { offer }) = idempotency_key.and_then(|k| self.state.remembered(worker, k)) {
            return Ok(offer.clone());
        }
        let slot_id = self.state.orchestrator.prepare_claim(&self.state.workspace, worker)?;
        self.commit(
            Event::SlotClaimed {
                slot_id,
                worker_id: worker.clone(),
            },
            self.now(),
            idempotency_key.map(str::to_string),
        )?;
        Ok(self
            .state
            .orchestrator
            .offer(&self.state.workspace, &self.settings.gates, slot_id)?)
    }

    pub fn attest_read_bottom(
        &mut self,
        slot_id: SlotId,
        worker: &WorkerId,
        idempotency_key: Option<&str>,
    ) -> Result<(), EngineError> {
        if let Some(WorkerOutcome::Attested { .. }) = idempotency_key.and_then(|k| self.state.remembered(worker, k)) {
            return Ok(());
        }
        self.state.orchestrator.prepare_attest(slot_id, worker)?;
        self.commit(
            Event::ReadAttested {
                slot_id,
                worker_id: worker.clone(),
            },
            self.now(),
            idempotency_key.map(str::to_string),
        )
    }

    pub fn submit_idea(
        &mut self,
        slot_id: SlotId,
        worker: &WorkerId,
        body: &str,
        idempotency_key: Option<&str>,
    ) -> Result<SubmitOutcome, EngineError> {
        match idempotency_key.and_then(|k| self.state.remembered(worker, k)) {
            Some(WorkerOutcome::Accepted { submission_id }) => {
                if let Some(sub) = self.state.orchestrator.submission(*submission_id) {
                    return Ok(SubmitOutcome::Accepted(sub.clone()));
                }
            }
            Some(WorkerOutcome::Rejected { slot_id, reason }) => {
                return Ok(SubmitOutcome::Rejected {
                    slot_id: *slot_id,
                    reason: *reason,
                })
            }
            _ => {}
        }
        let now = self.now();
        let decision = self.state.orchestrator.prepare_submit(
            &self.state.workspace,
            &self.settings.gates,
            slot_id,
            worker,
            body,
            now,
        )?;
        let key = idempotency_key.map(str::to_string);
        match decision {
            SubmitDecision::Accept(mut submission) => {
                if let Some(task) = self.state.orchestrator.task(submission.task_id) {
                    let prompt_id = prompt_text_id(task.id);
                    let idea_id = idea_text_id(submission.id);
                    submission.distance_scores = self.scorer.score_all(
                        TextRef {
                            id: &prompt_id,
                            body: &task.prompt.snapshot,
                        },
                        TextRef {
                            id: &idea_id,
                            body: &submission.body,
                        },
                    );
                }
                self.commit(
                    Event::SubmissionAccepted {
                        submission: submission.clone(),
                    },
                    now,
                    key,
                )?;
                Ok(SubmitOutcome::Accepted(submission))
            }
            SubmitDecision::Reject(reason) => {
                self.commit(
                    Event::SubmissionRejected {
                        slot_id,
                        worker_id: worker.clone(),
                        reason,
                    },
                    now,
                    key,
                )?;
                Ok(SubmitOutcome::Rejected { slot_id, reason })
            }
        }
    }

    pub fn cancel_task(&mut self, task_id: TaskId) -> Result<(), EngineError> {
        self.state.orchestrator.prepare_cancel(task_id)?;
        self.commit(Event::TaskCancelled { task_id }, self.now(), None)
    }

    pub fn task_status(&self, task_id: TaskId) -> Result<TaskStatus, EngineError> {
        Ok(self.state.orchestrator.status(task_id)?)
    }

    pub fn latency_report(&self, task_id: TaskId) -> Result<TaskLatencyReport, EngineError> {
        Ok(self.state.orchestrator.latency_report(task_id)?)
    }

    /// Ideas of a task, farthest from the prompt first when a metric is given,
    /// otherwise in arrival order. Near-duplicates are flagged either way when
    /// a metric is available.
    pub fn ranked_ideas(&self, task_id: TaskId, metric: Option<Metric>) -> Result<Vec<RankedIdeaView>, EngineError> {
        let task = self
            .state
            .orchestrator
            .task(task_id)
            .ok_or(OrchestratorError::NotFound {
                kind: "task",
                id: task_id.0,
            })?;
        let ideas: Vec<IdeaSubmission> = self
            .state
            .orchestrator
            .submissions_of(task_id)
            .into_iter()
            .cloned()
            .collect();
        let Some(metric) = metric else {
            return Ok(ideas
                .into_iter()
                .enumerate()
                .map(|(i, submission)| RankedIdeaView {
                    rank: i + 1,
                    submission,
                    distance: None,
                    unscored: false,
                    near_duplicate: false,
                })
                .collect());
        };
        if !self.scorer.metrics().contains(&metric) {
            return Err(DistanceError::MetricUnavailable(metric).into());
        }
        let prompt_id = prompt_text_id(task.id);
        let prompt = TextRef {
            id: &prompt_id,
            body: &task.prompt.snapshot,
        };
        let m = self.scorer.metric(metric);
        let ranked: Vec<RankedIdea> = rank_ideas(&m, prompt, &ideas);
        let flags = near_duplicate_flags(&m, &ideas, self.settings.duplicate_distance_threshold);
        let by_id: BTreeMap<SubmissionId, IdeaSubmission> = ideas.into_iter().map(|i| (i.id, i)).collect();
        Ok(ranked
            .into_iter()
            .enumerate()
            .filter_map(|(i, r)| {
                by_id.get(&r.submission_id).map(|s| RankedIdeaView {
                    rank: i + 1,
                    submission: s.clone(),
                    distance: r.distance,
                    unscored: r.distance.is_none(),
                    near_duplicate: flags.contains(&r.submission_id),
                })
            })
            .collect())
    }
}
