//! Writer-owned assets: characters, teams, documents and anchored comment threads.
//!
//! Mutations are split in two steps. A `prepare_*` method validates against the
//! current state and returns the fully-formed value that would be stored,
//! without touching `self`. The matching `commit_*` method stores it and cannot
//! fail. The engine records the prepared value in the event log between the two
//! steps, which is what makes replay exact.
//!
//! Offsets into document bodies are character (Unicode scalar) offsets.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{bump, CharacterId, DocumentId, TeamId, ThreadId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkspaceError {
    #[error("name must not be empty")]
    EmptyName,
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: u64 },
    #[error("team member {0} does not exist or was deleted")]
    UnknownMember(CharacterId),
    #[error("character {0} listed more than once")]
    DuplicateMember(CharacterId),
    #[error("a team needs at least one member")]
    EmptyTeam,
    #[error("edit at {at} deleting {delete_len} is outside a body of {len} characters")]
    OutOfBounds { at: usize, delete_len: usize, len: usize },
    #[error("anchor [{start}, {end}) is not a non-empty range inside a body of {len} characters")]
    InvalidAnchor { start: usize, end: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub id: CharacterId,
    pub name: String,
    pub description: String,
    pub image_ref: Option<String>,
    pub created_at: Timestamp,
    pub deleted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub id: TeamId,
    pub name: String,
    pub member_ids: Vec<CharacterId>,
    pub deleted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocumentId,
    pub title: String,
    pub body: String,
    pub revision: u64,
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.body.chars().count()
    }
}

/// A captured span of a document. The snapshot never changes after capture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRange {
    pub document_id: DocumentId,
    pub start: usize,
    pub end: usize,
    pub snapshot: String,
    pub revision_at_capture: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub author_label: String,
    pub body: String,
    pub at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentThread {
    pub id: ThreadId,
    pub document_id: DocumentId,
    pub anchor: SelectionRange,
    pub overview: String,
    pub replies: Vec<Reply>,
    pub orphaned: bool,
    pub created_at: Timestamp,
}

/// Replace `delete_len` characters at `at` with `insert`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub at: usize,
    #[serde(default)]
    pub delete_len: usize,
    #[serde(default)]
    pub insert: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    /// `Some(None)` clears the image.
    #[serde(default, with = "double_option")]
    pub image_ref: Option<Option<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub member_ids: Option<Vec<CharacterId>>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Option<String>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(inner) => inner.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
        Option::<String>::deserialize(d).map(Some)
    }
}

/// Where an anchor ends up after an edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorRemap {
    Unchanged,
    Shifted { start: usize, end: usize },
    Overlapped,
}

/// Remaps the half-open anchor `[start, end)` through `edit`.
///
/// Edits that end at or before `start` shift the anchor by the net length
/// change; edits that begin at or after `end` leave it alone; anything else
/// touches the anchored text.
pub fn remap_anchor(start: usize, end: usize, edit: &Edit) -> AnchorRemap {
    let edit_end = edit.at + edit.delete_len;
    if edit_end <= start {
        let inserted = edit.insert.chars().count() as isize;
        let delta = inserted - edit.delete_len as isize;
        if delta == 0 {
            AnchorRemap::Unchanged
        } else {
            AnchorRemap::Shifted {
                start: (start as isize + delta) as usize,
                end: (end as isize + delta) as usize,
            }
        }
    } else if edit.at >= end {
        AnchorRemap::Unchanged
    } else {
        AnchorRemap::Overlapped
    }
}

fn is_word_separator(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

/// Maximal runs of non-whitespace, where whitespace is space, tab, LF and CR.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(is_word_separator).filter(|t| !t.is_empty())
}

pub fn word_count(text: &str) -> usize {
    tokens(text).count()
}

/// Byte offset of the `idx`-th character, allowing `idx == len`.
fn byte_offset(s: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    match s.char_indices().nth(idx) {
        Some((b, _)) => Some(b),
        None if s.chars().count() == idx => Some(s.len()),
        None => None,
    }
}

fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    let b0 = byte_offset(s, start)?;
    let b1 = byte_offset(s, end)?;
    s.get(b0..b1)
}

fn non_blank(name: &str) -> Result<String, WorkspaceError> {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        Err(WorkspaceError::EmptyName)
    } else {
        Ok(trimmed.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    characters: BTreeMap<CharacterId, CharacterProfile>,
    teams: BTreeMap<TeamId, Team>,
    documents: BTreeMap<DocumentId, Document>,
    threads: BTreeMap<ThreadId, CommentThread>,
    last_character: u64,
    last_team: u64,
    last_document: u64,
    last_thread: u64,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    // ---- queries ----

    pub fn character(&self, id: CharacterId) -> Option<&CharacterProfile> {
        self.characters.get(&id)
    }

    /// Characters that have not been deleted, in creation order.
    pub fn characters(&self) -> impl Iterator<Item = &CharacterProfile> {
        self.characters.values().filter(|c| !c.deleted)
    }

    pub fn team(&self, id: TeamId) -> Option<&Team> {
        self.teams.get(&id).filter(|t| !t.deleted)
    }

    pub fn list_teams(&self) -> impl Iterator<Item = &Team> {
        self.teams.values().filter(|t| !t.deleted)
    }

    pub fn document(&self, id: DocumentId) -> Option<&Document> {
        self.documents.get(&id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn thread(&self, id: ThreadId) -> Option<&CommentThread> {
        self.threads.get(&id)
    }

    pub fn threads_on(&self, document_id: DocumentId) -> impl Iterator<Item = &CommentThread> {
        self.threads.values().filter(move |t| t.document_id == document_id)
    }

    fn live_character(&self, id: CharacterId) -> Result<&CharacterProfile, WorkspaceError> {
        self.characters
            .get(&id)
            .filter(|c| !c.deleted)
            .ok_or(WorkspaceError::NotFound { kind: "character", id: id.0 })
    }

    fn document_or_err(&self, id: DocumentId) -> Result<&Document, WorkspaceError> {
        self.documents
            .get(&id)
            .ok_or(WorkspaceError::NotFound { kind: "document", id: id.0 })
    }

    fn check_members(&self, member_ids: &[CharacterId]) -> Result<(), WorkspaceError> {
        if member_ids.is_empty() {
            return Err(WorkspaceError::EmptyTeam);
        }
        let mut seen = HashSet::new();
        for &id in member_ids {
            if !seen.insert(id) {
                return Err(WorkspaceError::DuplicateMember(id));
            }
            if self.live_character(id).is_err() {
                return Err(WorkspaceError::UnknownMember(id));
            }
        }
        Ok(())
    }

    /// Captures `[start, end)` of the document at its current revision.
    pub fn capture_selection(
        &self,
        document_id: DocumentId,
        start: usize,
        end: usize,
    ) -> Result<SelectionRange, WorkspaceError> {
        let doc = self.document_or_err(document_id)?;
        let len = doc.char_len();
        if start >= end || end > len {
            return Err(WorkspaceError::InvalidAnchor { start, end, len });
        }
        let snapshot = char_slice(&doc.body, start, end)
            .ok_or(WorkspaceError::InvalidAnchor { start, end, len })?
            .to_string();
        Ok(SelectionRange {
            document_id,
            start,
            end,
            snapshot,
            revision_at_capture: doc.revision,
        })
    }

    /// The text currently under a thread's anchor.
    pub fn anchored_text(&self, thread_id: ThreadId) -> Option<&str> {
        let thread = self.threads.get(&thread_id)?;
        let doc = self.documents.get(&thread.document_id)?;
        char_slice(&doc.body, thread.anchor.start, thread.anchor.end)
    }

    // ---- characters ----

    pub fn prepare_create_character(
        &self,
        name: &str,
        description: &str,
        image_ref: Option<String>,
        now: Timestamp,
    ) -> Result<CharacterProfile, WorkspaceError> {
        Ok(CharacterProfile {
            id: CharacterId(self.last_character + 1),
            name: non_blank(name)?,
            description: description.to_string(),
            image_ref,
            created_at: now,
            deleted: false,
        })
    }

    pub fn prepare_update_character(
        &self,
        id: CharacterId,
        patch: &CharacterPatch,
    ) -> Result<CharacterProfile, WorkspaceError> {
        let mut updated = self.live_character(id)?.clone();
        if let Some(name) = &patch.name {
            updated.name = non_blank(name)?;
        }
        if let Some(description) = &patch.description {
            updated.description = description.clone();
        }
        if let Some(image_ref) = &patch.image_ref {
            updated.image_ref = image_ref.clone();
        }
        Ok(updated)
    }

    pub fn prepare_delete_character(&self, id: CharacterId) -> Result<(), WorkspaceError> {
        self.live_character(id).map(|_| ())
    }

    pub(crate) fn commit_character(&mut self, character: CharacterProfile) {
        bump(&mut self.last_character, character.id.0);
        self.characters.insert(character.id, character);
    }

    pub(crate) fn commit_delete_character(&mut self, id: CharacterId) {
        if let Some(c) = self.characters.get_mut(&id) {
            c.deleted = true;
        }
    }

    // ---- teams ----

    pub fn prepare_create_team(&self, name: &str, member_ids: &[CharacterId]) -> Result<Team, WorkspaceError> {
        let name = non_blank(name)?;
        self.check_members(member_ids)?;
        Ok(Team {
            id: TeamId(self.last_team + 1),
            name,
            member_ids: member_ids.to_vec(),
            deleted: false,
        })
    }

    pub fn prepare_update_team(&self, id: TeamId, patch: &TeamPatch) -> Result<Team, WorkspaceError> {
        let mut team = self
            .team(id)
            .ok_or(WorkspaceError::NotFound { kind: "team", id: id.0 })?
            .clone();
        if let Some(name) = &patch.name {
            team.name = non_blank(name)?;
        }
        if let Some(members) = &patch.member_ids {
            self.check_members(members)?;
            team.member_ids = members.clone();
        }
        Ok(team)
    }

    pub fn prepare_delete_team(&self, id: TeamId) -> Result<(), WorkspaceError> {
        self.team(id)
            .map(|_| ())
            .ok_or(WorkspaceError::NotFound { kind: "team", id: id.0 })
    }

    pub(crate) fn commit_team(&mut self, team: Team) {
        bump(&mut self.last_team, team.id.0);
        self.teams.insert(team.id, team);
    }

    pub(crate) fn commit_delete_team(&mut self, id: TeamId) {
        if let Some(t) = self.teams.get_mut(&id) {
            t.deleted = true;
        }
    }

    // ---- documents ----

    pub fn prepare_create_document(&self, title: &str, body: &str) -> Document {
        Document {
            id: DocumentId(self.last_document + 1),
            title: title.to_string(),
            body: body.to_string(),
            revision: 0,
        }
    }

    pub fn prepare_edit_document(&self, id: DocumentId, edit: &Edit) -> Result<(), WorkspaceError> {
        let len = self.document_or_err(id)?.char_len();
        match edit.at.checked_add(edit.delete_len) {
            Some(edit_end) if edit_end <= len => Ok(()),
            _ => Err(WorkspaceError::OutOfBounds {
                at: edit.at,
                delete_len: edit.delete_len,
                len,
            }),
        }
    }

    pub(crate) fn commit_document(&mut self, document: Document) {
        bump(&mut self.last_document, document.id.0);
        self.documents.insert(document.id, document);
    }

    /// Applies a validated edit and remaps every live anchor on the document.
    pub(crate) fn commit_edit(&mut self, id: DocumentId, edit: &Edit) {
        let Some(doc) = self.documents.get_mut(&id) else {
            return;
        };
        let (Some(b0), Some(b1)) = (
            byte_offset(&doc.body, edit.at),
            byte_offset(&doc.body, edit.at + edit.delete_len),
        ) else {
            return;
        };
        doc.body.replace_range(b0..b1, &edit.insert);
        doc.revision += 1;
        for thread in self.threads.values_mut() {
            if thread.document_id != id || thread.orphaned {
                continue;
            }
            match remap_anchor(thread.anchor.start, thread.anchor.end, edit) {
                AnchorRemap::Unchanged => {}
                AnchorRemap::Shifted { start, end } => {
                    thread.anchor.start = start;
                    thread.anchor.end = end;
                }
                AnchorRemap::Overlapped => thread.orphaned = true,
            }
        }
    }

    // ---- threads ----

    pub fn prepare_create_thread(
        &self,
        document_id: DocumentId,
        start: usize,
        end: usize,
        overview: &str,
        now: Timestamp,
    ) -> Result<CommentThread, WorkspaceError> {
        let anchor = self.capture_selection(document_id, start, end)?;
        Ok(self.thread_for(anchor, overview.to_string(), now))
    }

    /// Builds (without storing) a thread over an already-captured anchor.
    pub fn thread_for(&self, anchor: SelectionRange, overview: String, now: Timestamp) -> CommentThread {
        CommentThread {
            id: ThreadId(self.last_thread + 1),
            document_id: anchor.document_id,
            anchor,
            overview,
            replies: Vec::new(),
            orphaned: false,
            created_at: now,
        }
    }

    pub fn prepare_append_reply(&self, thread_id: ThreadId) -> Result<(), WorkspaceError> {
        self.threads
            .get(&thread_id)
            .map(|_| ())
            .ok_or(WorkspaceError::NotFound { kind: "thread", id: thread_id.0 })
    }

    pub(crate) fn commit_thread(&mut self, thread: CommentThread) {
        bump(&mut self.last_thread, thread.id.0);
        self.threads.insert(thread.id, thread);
    }

    pub(crate) fn commit_reply(&mut self, thread_id: ThreadId, reply: Reply) {
        if let Some(t) = self.threads.get_mut(&thread_id) {
            t.replies.push(reply);
        }
    }
}
