//! Append-only record of the grants this service made or revoked.
//!
//! Only grants that are live in the ledger may ever be revoked, which keeps
//! assignments made by administrators out of reach.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entitlement::Assignment;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ledger {path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrantAction {
    Granted,
    Revoked,
}

/// One JSON line: `{"user":..,"project":..,"role":..,"action":"granted","ts":"<rfc3339>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub user: String,
    pub project: String,
    pub role: String,
    pub action: GrantAction,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiveGrant {
    pub user: String,
    pub project: String,
    pub role: String,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<LedgerEntry>,
    sink: Option<(PathBuf, File)>,
}

/// Shared handle; appends are serialized internally.
#[derive(Debug, Default)]
pub struct GrantsLedger {
    inner: Mutex<Inner>,
}

impl GrantsLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        Self {
            inner: Mutex::new(Inner {
                entries,
                sink: None,
            }),
        }
    }

    /// Loads the JSON-lines file at `path` (creating it if missing) and
    /// appends every later entry to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LedgerError::Io {
            path: path.clone(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|source| LedgerError::Parse {
                path: path.clone(),
                line: i + 1,
                source,
            })?;
            entries.push(entry);
        }
        Ok(Self {
            inner: Mutex::new(Inner {
                entries,
                sink: Some((path, file)),
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, entry: LedgerEntry) -> Result<(), LedgerError> {
        let mut inner = self.lock();
        if let Some((path, file)) = inner.sink.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("ledger entries serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| LedgerError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        inner.entries.push(entry);
        Ok(())
    }

    pub fn record(
        &self,
        user: &str,
        assignment: &Assignment,
        action: GrantAction,
    ) -> Result<(), LedgerError> {
        self.append(LedgerEntry {
            user: user.to_owned(),
            project: assignment.project.clone(),
            role: assignment.role.clone(),
            action,
            ts: Utc::now(),
        })
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.lock().entries.clone()
    }

    /// Grants whose most recent entry is `granted`.
    pub fn live_set(&self) -> BTreeSet<LiveGrant> {
        let mut live = BTreeSet::new();
        for e in &self.lock().entries {
            let key = LiveGrant {
                user: e.user.clone(),
                project: e.project.clone(),
                role: e.role.clone(),
            };
            match e.action {
                GrantAction::Granted => live.insert(key),
                GrantAction::Revoked => live.remove(&key),
            };
        }
        live
    }

    pub fn live_for(&self, user: &str) -> BTreeSet<Assignment> {
        self.live_set()
            .into_iter()
            .filter(|g| g.user == user)
            .map(|g| Assignment::new(g.project, g.role))
            .collect()
    }
}
