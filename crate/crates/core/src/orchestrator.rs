//! Ideation task lifecycle: slot minting, reward, claim and submit protocol,
//! latency accounting.
//!
//! Like the workspace, every mutation has a validating `prepare_*` step that
//! leaves state untouched and an infallible `commit_*` step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{bump, CharacterId, DocumentId, SlotId, SubmissionId, TaskId, TeamId, ThreadId, WorkerId};
use crate::time::Timestamp;
use crate::workspace::{tokens, word_count, CommentThread, SelectionRange, Workspace, WorkspaceError};

/// Reply label used for ideas from slots that carry no character.
pub const NO_ROLE_LABEL: &str = "no role";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("team {0} does not exist")]
    UnknownTeam(TeamId),
    #[error("team includes deleted character {0}")]
    DeletedCharacterInTeam(CharacterId),
    #[error("invalid selection: {0}")]
    InvalidSelection(WorkspaceError),
    #[error("per-character quota must be at least 1")]
    InvalidQuota,
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: u64 },
    #[error("no work available")]
    NoWorkAvailable,
    #[error("worker already holds slot {0}")]
    AlreadyActive(SlotId),
    #[error("worker already submitted an idea for task {0}")]
    AlreadyWorkedTask(TaskId),
    #[error("slot is not claimed by this worker")]
    NotClaimant,
    #[error("operation not allowed in state {0}")]
    BadState(String),
    #[error("no ideas accepted yet")]
    NoIdeasYet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    RolePlay,
    NoRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Open,
    Complete,
    Cancelled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlotState {
    Unclaimed,
    Claimed,
    Submitted,
    /// Left unfilled when its task was cancelled.
    Void,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionReason {
    TimeLock,
    NoReadAttestation,
    TooShort,
    CopyOverlap,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::TimeLock => "TIME_LOCK",
            RejectionReason::NoReadAttestation => "NO_READ_ATTESTATION",
            RejectionReason::TooShort => "TOO_SHORT",
            RejectionReason::CopyOverlap => "COPY_OVERLAP",
        }
    }
}

/// Server-side integrity gates applied to every submission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub time_lock_ms: i64,
    pub min_idea_words: usize,
    pub copy_overlap_tokens: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            time_lock_ms: 30_000,
            min_idea_words: 50,
            copy_overlap_tokens: 15,
        }
    }
}

pub const DEFAULT_QUOTA: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeationTask {
    pub id: TaskId,
    pub document_id: DocumentId,
    pub prompt: SelectionRange,
    pub team_id: TeamId,
    /// Team roster at creation time.
    pub character_ids: Vec<CharacterId>,
    pub note: Option<String>,
    pub strategy: Strategy,
    pub per_character_quota: u32,
    pub reward_cents: u64,
    pub thread_id: ThreadId,
    pub created_at: Timestamp,
    pub state: TaskState,
}

impl IdeationTask {
    pub fn total_slots(&self) -> usize {
        self.character_ids.len() * self.per_character_quota as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentSlot {
    pub id: SlotId,
    pub task_id: TaskId,
    pub role: Option<CharacterId>,
    pub state: SlotState,
    pub claimed_by: Option<WorkerId>,
    pub offered_at: Option<Timestamp>,
    pub read_bottom_attested: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdeaSubmission {
    pub id: SubmissionId,
    pub slot_id: SlotId,
    pub task_id: TaskId,
    pub worker_id: WorkerId,
    pub role: Option<CharacterId>,
    pub role_label: String,
    pub body: String,
    pub submitted_at: Timestamp,
    pub elapsed_read_ms: i64,
    #[serde(default)]
    pub distance_scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCard {
    pub name: String,
    pub description: String,
}

/// Everything a worker sees for one assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentOffer {
    pub slot_id: SlotId,
    pub task_id: TaskId,
    pub prompt: String,
    pub role: Option<RoleCard>,
    pub note: Option<String>,
    pub reward_cents: u64,
    pub min_read_ack_required: bool,
    pub time_lock_seconds: f64,
    pub min_idea_words: usize,
    pub offered_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLatencyReport {
    pub first_idea_ms: i64,
    /// Time until every character has at least one idea; absent until then,
    /// and always absent for role-less tasks.
    pub per_character_coverage_ms: Option<i64>,
    pub last_idea_ms: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub unclaimed: usize,
    pub claimed: usize,
    pub submitted: usize,
    pub void: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub task_id: TaskId,
    pub state: TaskState,
    pub strategy: Strategy,
    pub reward_cents: u64,
    pub slots: SlotCounts,
    pub ideas_by_role: BTreeMap<String, Vec<IdeaSubmission>>,
    pub latency: Option<TaskLatencyReport>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub document_id: DocumentId,
    pub start: usize,
    pub end: usize,
    pub team_id: TeamId,
    #[serde(default)]
    pub note: Option<String>,
    pub strategy: Strategy,
    pub per_character_quota: u32,
}

/// A validated task, its slots and overview thread, not yet stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewTask {
    pub task: IdeationTask,
    pub slots: Vec<AssignmentSlot>,
    pub thread: CommentThread,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubmitDecision {
    Accept(IdeaSubmission),
    Reject(RejectionReason),
}

/// Payment in cents for a prompt of `prompt_word_count` words: one dollar for
/// writing plus a dollar per thousand words read, rounded half-up to the cent.
pub fn compute_reward(prompt_word_count: u64) -> u64 {
    // 100 * (w / 1000 + 1) = 100 + w / 10
    100 + prompt_word_count.saturating_add(5) / 10
}

fn normalize_token(t: &str) -> String {
    t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Length of the longest run of consecutive tokens shared by `a` and `b`,
/// comparing case-insensitively and ignoring edge punctuation.
pub fn longest_common_token_run(a: &str, b: &str) -> usize {
    let a: Vec<String> = tokens(a).map(normalize_token).collect();
    let b: Vec<String> = tokens(b).map(normalize_token).collect();
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for ta in &a {
        for (j, tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Slot roles in minting order. Characters are interleaved round by round so
/// the lowest slot ids cover every character first.
pub fn mint_roles(members: &[CharacterId], quota: u32, strategy: Strategy) -> Vec<Option<CharacterId>> {
    let mut roles = Vec::with_capacity(members.len() * quota as usize);
    for _ in 0..quota {
        for &m in members {
            roles.push(match strategy {
                Strategy::RolePlay => Some(m),
                Strategy::NoRole => None,
            });
        }
    }
    roles
}

pub fn overview_text(task_id: TaskId, team_name: &str, strategy: Strategy, quota: u32, names: &[&str]) -> String {
    let mode = match strategy {
        Strategy::RolePlay => format!("role play, {quota} ideas per character"),
        Strategy::NoRole => format!("no assigned roles, {} ideas in total", quota as usize * names.len()),
    };
    format!(
        "Ideation task {task_id} using team \"{team_name}\" ({mode}). Characters: {}.",
        names.join(", ")
    )
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Orchestrator {
    tasks: BTreeMap<TaskId, IdeationTask>,
    slots: BTreeMap<SlotId, AssignmentSlot>,
    submissions: BTreeMap<SubmissionId, IdeaSubmission>,
    active: BTreeMap<WorkerId, SlotId>,
    worked: BTreeMap<WorkerId, BTreeSet<TaskId>>,
    last_task: u64,
    last_slot: u64,
    last_submission: u64,
}

impl Orchestrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self, id: TaskId) -> Option<&IdeationTask> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &IdeationTask> {
        self.tasks.values()
    }

    pub fn slot(&self, id: SlotId) -> Option<&AssignmentSlot> {
        self.slots.get(&id)
    }

    pub fn slots_of(&self, task_id: TaskId) -> impl Iterator<Item = &AssignmentSlot> {
        self.slots.values().filter(move |s| s.task_id == task_id)
    }

    pub fn submission(&self, id: SubmissionId) -> Option<&IdeaSubmission> {
        self.submissions.get(&id)
    }

    /// Accepted ideas for a task, in arrival order.
    pub fn submissions_of(&self, task_id: TaskId) -> Vec<&IdeaSubmission> {
        let mut subs: Vec<_> = self.submissions.values().filter(|s| s.task_id == task_id).collect();
        subs.sort_by_key(|s| (s.submitted_at, s.id));
        subs
    }

    fn task_or_err(&self, id: TaskId) -> Result<&IdeationTask, OrchestratorError> {
        self.tasks.get(&id).ok_or(OrchestratorError::NotFound { kind: "task", id: id.0 })
    }

    fn slot_or_err(&self, id: SlotId) -> Result<&AssignmentSlot, OrchestratorError> {
        self.slots.get(&id).ok_or(OrchestratorError::NotFound { kind: "slot", id: id.0 })
    }

    // ---- task creation ----

    pub fn prepare_create_task(
        &self,
        ws: &Workspace,
        req: &TaskRequest,
        now: Timestamp,
    ) -> Result<NewTask, OrchestratorError> {
        if req.per_character_quota == 0 {
            return Err(OrchestratorError::InvalidQuota);
        }
        let team = ws.team(req.team_id).ok_or(OrchestratorError::UnknownTeam(req.team_id))?;
        let mut names = Vec::with_capacity(team.member_ids.len());
        for &member in &team.member_ids {
            match ws.character(member) {
                Some(c) if !c.deleted => names.push(c.name.as_str()),
                _ => return Err(OrchestratorError::DeletedCharacterInTeam(member)),
            }
        }
        let prompt = ws
            .capture_selection(req.document_id, req.start, req.end)
            .map_err(|e| match e {
                WorkspaceError::NotFound { kind, id } => OrchestratorError::NotFound { kind, id },
                other => OrchestratorError::InvalidSelection(other),
            })?;

        let task_id = TaskId(self.last_task + 1);
        let overview = overview_text(task_id, &team.name, req.strategy, req.per_character_quota, &names);
        let thread = ws.thread_for(prompt.clone(), overview, now);
        let reward_cents = compute_reward(word_count(&prompt.snapshot) as u64);
        let slots = mint_roles(&team.member_ids, req.per_character_quota, req.strategy)
            .into_iter()
            .enumerate()
            .map(|(i, role)| AssignmentSlot {
                id: SlotId(self.last_slot + 1 + i as u64),
                task_id,
                role,
                state: SlotState::Unclaimed,
                claimed_by: None,
                offered_at: None,
                read_bottom_attested: false,
            })
            .collect();
        let task = IdeationTask {
            id: task_id,
            document_id: req.document_id,
            prompt,
            team_id: team.id,
            character_ids: team.member_ids.clone(),
            note: req.note.clone().filter(|n| !n.trim().is_empty()),
            strategy: req.strategy,
            per_character_quota: req.per_character_quota,
            reward_cents,
            thread_id: thread.id,
            created_at: now,
            state: TaskState::Open,
        };
        Ok(NewTask { task, slots, thread })
    }

    pub(crate) fn commit_task(&mut self, task: IdeationTask, slots: Vec<AssignmentSlot>) {
        bump(&mut self.last_task, task.id.0);
        for slot in slots {
            bump(&mut self.last_slot, slot.id.0);
            self.slots.insert(slot.id, slot);
        }
        self.tasks.insert(task.id, task);
    }

    // ---- claim ----

    /// Picks the slot a worker would receive: oldest open task first, then
    /// lowest slot id, skipping tasks the worker already delivered on and
    /// slots whose character has since been deleted.
    pub fn prepare_claim(&self, ws: &Workspace, worker: &WorkerId) -> Result<SlotId, OrchestratorError> {
        if let Some(&slot) = self.active.get(worker) {
            return Err(OrchestratorError::AlreadyActive(slot));
        }
        let worked = self.worked.get(worker);
        let mut blocked_by_history = None;
        for task in self.tasks.values().filter(|t| t.state == TaskState::Open) {
            let candidate = self.slots_of(task.id).find(|s| {
                s.state == SlotState::Unclaimed
                    && s.role.is_none_or(|c| ws.character(c).is_some_and(|c| !c.deleted))
            });
            let Some(slot) = candidate else { continue };
            if worked.is_some_and(|w| w.contains(&task.id)) {
                blocked_by_history.get_or_insert(task.id);
                continue;
            }
            return Ok(slot.id);
        }
        Err(match blocked_by_history {
            Some(task) => OrchestratorError::AlreadyWorkedTask(task),
            None => OrchestratorError::NoWorkAvailable,
        })
    }

    pub(crate) fn commit_claim(&mut self, slot_id: SlotId, worker: &WorkerId, at: Timestamp) {
        if let Some(slot) = self.slots.get_mut(&slot_id) {
            slot.state = SlotState::Claimed;
            slot.claimed_by = Some(worker.clone());
            slot.offered_at = Some(at);
            slot.read_bottom_attested = false;
            self.active.insert(worker.clone(), slot_id);
        }
    }

    pub fn offer(&self, ws: &Workspace, gates: &GateConfig, slot_id: SlotId) -> Result<AssignmentOffer, OrchestratorError> {
        let slot = self.slot_or_err(slot_id)?;
        let task = self.task_or_err(slot.task_id)?;
        let role = slot.role.and_then(|c| ws.character(c)).map(|c| RoleCard {
            name: c.name.clone(),
            description: c.description.clone(),
        });
        Ok(AssignmentOffer {
            slot_id,
            task_id: task.id,
            prompt: task.prompt.snapshot.clone(),
            role,
            note: task.note.clone(),
            reward_cents: task.reward_cents,
            min_read_ack_required: true,
            time_lock_seconds: gates.time_lock_ms as f64 / 1000.0,
            min_idea_words: gates.min_idea_words,
            offered_at: slot.offered_at.unwrap_or(task.created_at),
        })
    }

    fn claimed_slot(&self, slot_id: SlotId, worker: &WorkerId) -> Result<&AssignmentSlot, OrchestratorError> {
        let slot = self.slot_or_err(slot_id)?;
        match slot.state {
            SlotState::Submitted | SlotState::Void => Err(OrchestratorError::BadState(format!("{:?}", slot.state))),
            SlotState::Claimed if slot.claimed_by.as_ref() == Some(worker) => Ok(slot),
            _ => Err(OrchestratorError::NotClaimant),
        }
    }

    // ---- read-bottom attestation ----

    pub fn prepare_attest(&self, slot_id: SlotId, worker: &WorkerId) -> Result<(), OrchestratorError> {
        self.claimed_slot(slot_id, worker).map(|_| ())
    }

    pub(crate) fn commit_attest(&mut self, slot_id: SlotId) {
        if let Some(slot) = self.slots.get_mut(&slot_id) {
            slot.read_bottom_attested = true;
        }
    }

    // ---- submit ----

    /// Runs the integrity gates in order: time lock, read attestation, minimum
    /// length, copy overlap with the prompt.
    pub fn prepare_submit(
        &self,
        ws: &Workspace,
        gates: &GateConfig,
        slot_id: SlotId,
        worker: &WorkerId,
        body: &str,
        now: Timestamp,
    ) -> Result<SubmitDecision, OrchestratorError> {
        let slot = self.claimed_slot(slot_id, worker)?;
        let task = self.task_or_err(slot.task_id)?;
        let offered_at = slot.offered_at.unwrap_or(task.created_at);
        let elapsed = now.millis_since(offered_at);
        if elapsed < gates.time_lock_ms {
            return Ok(SubmitDecision::Reject(RejectionReason::TimeLock));
        }
        if !slot.read_bottom_attested {
            return Ok(SubmitDecision::Reject(RejectionReason::NoReadAttestation));
        }
        if word_count(body) < gates.min_idea_words {
            return Ok(SubmitDecision::Reject(RejectionReason::TooShort));
        }
        if longest_common_token_run(body, &task.prompt.snapshot) >= gates.copy_overlap_tokens {
            return Ok(SubmitDecision::Reject(RejectionReason::CopyOverlap));
        }
        let role_label = match slot.role {
            Some(c) => ws
                .character(c)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| format!("character {c}")),
            None => NO_ROLE_LABEL.to_string(),
        };
        Ok(SubmitDecision::Accept(IdeaSubmission {
            id: SubmissionId(self.last_submission + 1),
            slot_id,
            task_id: task.id,
            worker_id: worker.clone(),
            role: slot.role,
            role_label,
            body: body.to_string(),
            submitted_at: now,
            elapsed_read_ms: elapsed,
            distance_scores: BTreeMap::new(),
        }))
    }

    pub(crate) fn commit_accept(&mut self, submission: IdeaSubmission) {
        bump(&mut self.last_submission, submission.id.0);
        let task_id = submission.task_id;
        if let Some(slot) = self.slots.get_mut(&submission.slot_id) {
            slot.state = SlotState::Submitted;
        }
        self.active.remove(&submission.worker_id);
        self.worked
            .entry(submission.worker_id.clone())
            .or_default()
            .insert(task_id);
        self.submissions.insert(submission.id, submission);
        let all_done = self.slots_of(task_id).all(|s| s.state == SlotState::Submitted);
        if let Some(task) = self.tasks.get_mut(&task_id) {
            if all_done && task.state == TaskState::Open {
                task.state = TaskState::Complete;
            }
        }
    }

    /// A rejected slot goes back to the pool.
    pub(crate) fn commit_reject(&mut self, slot_id: SlotId) {
        if let Some(slot) = self.slots.get_mut(&slot_id) {
            if let Some(worker) = slot.claimed_by.take() {
                self.active.remove(&worker);
            }
            slot.state = SlotState::Unclaimed;
            slot.offered_at = None;
            slot.read_bottom_attested = false;
        }
    }

    // ---- cancel ----

    pub fn prepare_cancel(&self, task_id: TaskId) -> Result<(), OrchestratorError> {
        let task = self.task_or_err(task_id)?;
        if task.state != TaskState::Open {
            return Err(OrchestratorError::BadState(format!("{:?}", task.state)));
        }
        Ok(())
    }

    pub(crate) fn commit_cancel(&mut self, task_id: TaskId) {
        if let Some(task) = self.tasks.get_mut(&task_id) {
            task.state = TaskState::Cancelled;
        }
        for slot in self.slots.values_mut().filter(|s| s.task_id == task_id) {
            if matches!(slot.state, SlotState::Unclaimed | SlotState::Claimed) {
                if let Some(worker) = slot.claimed_by.take() {
                    self.active.remove(&worker);
                }
                slot.state = SlotState::Void;
            }
        }
    }

    // ---- reporting ----

    pub fn status(&self, task_id: TaskId) -> Result<TaskStatus, OrchestratorError> {
        let task = self.task_or_err(task_id)?;
        let mut counts = SlotCounts::default();
        for slot in self.slots_of(task_id) {
            counts.total += 1;
            match slot.state {
                SlotState::Unclaimed => counts.unclaimed += 1,
                SlotState::Claimed => counts.claimed += 1,
                SlotState::Submitted => counts.submitted += 1,
                SlotState::Void => counts.void += 1,
            }
        }
        let mut ideas_by_role: BTreeMap<String, Vec<IdeaSubmission>> = BTreeMap::new();
        for sub in self.submissions_of(task_id) {
            ideas_by_role.entry(sub.role_label.clone()).or_default().push(sub.clone());
        }
        Ok(TaskStatus {
            task_id,
            state: task.state,
            strategy: task.strategy,
            reward_cents: task.reward_cents,
            slots: counts,
            ideas_by_role,
            latency: self.latency_report(task_id).ok(),
        })
    }

    /// Latencies from task (and overview comment) creation to accepted ideas.
    pub fn latency_report(&self, task_id: TaskId) -> Result<TaskLatencyReport, OrchestratorError> {
        let task = self.task_or_err(task_id)?;
        let events: Vec<(Option<CharacterId>, i64)> = self
            .submissions_of(task_id)
            .into_iter()
            .map(|s| (s.role, s.submitted_at.millis_since(task.created_at)))
            .collect();
        latency_from_events(task.strategy, &task.character_ids, &events)
    }
}

/// Latency summary over `(role, ms since task creation)` idea arrivals.
pub fn latency_from_events(
    strategy: Strategy,
    characters: &[CharacterId],
    events: &[(Option<CharacterId>, i64)],
) -> Result<TaskLatencyReport, OrchestratorError> {
    let first = events.iter().map(|e| e.1).min().ok_or(OrchestratorError::NoIdeasYet)?;
    let last = events.iter().map(|e| e.1).max().ok_or(OrchestratorError::NoIdeasYet)?;
    let coverage = match strategy {
        Strategy::NoRole => None,
        Strategy::RolePlay => characters
            .iter()
            .map(|c| events.iter().filter(|e| e.0 == Some(*c)).map(|e| e.1).min())
            .collect::<Option<Vec<i64>>>()
            .and_then(|earliest| earliest.into_iter().max()),
    };
    Ok(TaskLatencyReport {
        first_idea_ms: first,
        per_character_coverage_ms: coverage,
        last_idea_ms: last,
    })
}
