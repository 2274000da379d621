//! Consent records, keyed by identifier and a digest of the released
//! attributes. A change in what the federation releases produces a new
//! digest and so asks for consent again.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::AttributeBundle;
use crate::planner::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentDecision {
    Accepted,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub identifier: String,
    pub attribute_digest: String,
    pub decision: ConsentDecision,
    pub timestamp: DateTime<Utc>,
}

/// SHA-256 over a length-prefixed encoding of the bundle with entitlements
/// sorted, so delivery order does not matter but multiplicity does.
pub fn attribute_digest(bundle: &AttributeBundle) -> String {
    fn field(hasher: &mut Sha256, tag: u8, value: &str) {
        hasher.update([tag]);
        hasher.update((value.len() as u64).to_be_bytes());
        hasher.update(value.as_bytes());
    }
    let mut hasher = Sha256::new();
    field(&mut hasher, b'i', &bundle.identifier);
    if let Some(mail) = &bundle.mail {
        field(&mut hasher, b'm', mail);
    }
    let mut entitlements: Vec<&str> = bundle.entitlements.iter().map(String::as_str).collect();
    entitlements.sort_unstable();
    for e in entitlements {
        field(&mut hasher, b'e', e);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Default)]
struct Inner {
    live: HashMap<(String, String), ConsentRecord>,
    sink: Option<(PathBuf, File)>,
}

/// JSON-lines consent store; the last record per (identifier, digest) wins.
#[derive(Debug, Default)]
pub struct ConsentStore {
    inner: Mutex<Inner>,
}

impl ConsentStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

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
        let mut live = HashMap::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ConsentRecord =
                serde_json::from_str(&line).map_err(|source| LedgerError::Parse {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })?;
            live.insert(
                (record.identifier.clone(), record.attribute_digest.clone()),
                record,
            );
        }
        Ok(Self {
            inner: Mutex::new(Inner {
                live,
                sink: Some((path, file)),
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record(&self, record: ConsentRecord) -> Result<(), LedgerError> {
        let mut inner = self.lock();
        if let Some((path, file)) = inner.sink.as_mut() {
            let mut line = serde_json::to_string(&record).expect("consent records serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| LedgerError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        inner.live.insert(
            (record.identifier.clone(), record.attribute_digest.clone()),
            record,
        );
        Ok(())
    }

    pub fn lookup(&self, identifier: &str, digest: &str) -> Option<ConsentRecord> {
        self.lock()
            .live
            .get(&(identifier.to_owned(), digest.to_owned()))
            .cloned()
    }

    pub fn is_accepted(&self, identifier: &str, digest: &str) -> bool {
        self.lookup(identifier, digest)
            .is_some_and(|r| r.decision == ConsentDecision::Accepted)
    }
}
