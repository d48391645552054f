use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! numeric_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

numeric_id!(CharacterId);
numeric_id!(TeamId);
numeric_id!(DocumentId);
numeric_id!(ThreadId);
numeric_id!(TaskId);
numeric_id!(SlotId);
numeric_id!(SubmissionId);

/// Self-chosen bearer token identifying a crowd worker.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub String);

impl WorkerId {
    pub fn new(token: impl Into<String>) -> Self {
        WorkerId(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Raises a last-used counter so ids are never reissued, also on replay.
pub(crate) fn bump(counter: &mut u64, used: u64) {
    if used > *counter {
        *counter = used;
    }
}
