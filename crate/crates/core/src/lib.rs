//! Core of the heteroglossia ideation service.
//!
//! - [`workspace`]: characters, teams, documents and anchored comment threads.
//! - [`orchestrator`]: ideation tasks, assignment slots, integrity gates, payment and latency.
//! - [`distance`]: embedding-based semantic distance between a prompt and its ideas.
//! - [`stats`]: correlation, paired tests and the study report.
//! - [`engine`]: event-sourced front door that records every mutation before applying it.

pub mod distance;
pub mod engine;
pub mod ids;
pub mod orchestrator;
pub mod stats;
pub mod time;
pub mod workspace;

pub use engine::{Engine, EngineError, Event, EventRecord, EventSink, MemorySink, NullSink, Settings, State, StorageError, SubmitOutcome};
pub use ids::{CharacterId, DocumentId, SlotId, SubmissionId, TaskId, TeamId, ThreadId, WorkerId};
pub use orchestrator::{compute_reward, GateConfig, RejectionReason, Strategy, TaskRequest};
pub use time::{Clock, ManualClock, SystemClock, Timestamp};
