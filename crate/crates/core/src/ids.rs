//! Process and task identities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Client,
    Server,
    Replica,
    ModelOwner,
}

impl ProcessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProcessKind::Client => "client",
            ProcessKind::Server => "server",
            ProcessKind::Replica => "replica",
            ProcessKind::ModelOwner => "owner",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ProcessKind::Client => 0,
            ProcessKind::Server => 1,
            ProcessKind::Replica => 2,
            ProcessKind::ModelOwner => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ProcessKind::Client,
            1 => ProcessKind::Server,
            2 => ProcessKind::Replica,
            3 => ProcessKind::ModelOwner,
            _ => return None,
        })
    }
}

/// A participant in a scenario, rendered as `kind:index` (e.g. `server:3`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId {
    pub kind: ProcessKind,
    pub index: u32,
}

impl ProcessId {
    pub const fn new(kind: ProcessKind, index: u32) -> Self {
        Self { kind, index }
    }

    pub const fn client(index: u32) -> Self {
        Self::new(ProcessKind::Client, index)
    }

    pub const fn server(index: u32) -> Self {
        Self::new(ProcessKind::Server, index)
    }

    pub const fn replica(index: u32) -> Self {
        Self::new(ProcessKind::Replica, index)
    }

    pub const fn owner() -> Self {
        Self::new(ProcessKind::ModelOwner, 0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.index)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid process id `{0}`, expected kind:index")]
pub struct ParseProcessIdError(String);

impl FromStr for ProcessId {
    type Err = ParseProcessIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseProcessIdError(s.to_string());
        let (kind, index) = s.split_once(':').ok_or_else(err)?;
        let kind = match kind {
            "client" => ProcessKind::Client,
            "server" => ProcessKind::Server,
            "replica" => ProcessKind::Replica,
            "owner" => ProcessKind::ModelOwner,
            _ => return Err(err()),
        };
        let index = index.parse().map_err(|_| err())?;
        Ok(ProcessId { kind, index })
    }
}

impl Serialize for ProcessId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task:{}", self.0)
    }
}
