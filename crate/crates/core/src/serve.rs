//! Line-delimited JSON scoring protocol.
//!
//! Request: `{"user": u64, "items": [u64, ...]}`
//! Response: `{"user": u64, "scores": [f64, ...]}` or `{"error": "..."}`.
//! A `{"control": "reload"}` line re-opens the store from its path and
//! answers `{"reloaded": generation}`.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::datagen::{ItemCatalog, ItemId, UserId};
use crate::error::{Error, Result};
use crate::inference::{attend, ScoringHead};
use crate::numerics::Relevance;
use crate::store::{ServerState, Snapshot};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Request {
    Score { user: UserId, items: Vec<ItemId> },
    Control { control: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Scores { user: UserId, scores: Vec<f64> },
    Reloaded { reloaded: u64 },
    Error { error: String },
}

impl Response {
    fn error(msg: impl Into<String>) -> Self {
        Response::Error { error: msg.into() }
    }
}

/// Everything a request needs. The store is the only mutable part.
#[derive(Debug)]
pub struct Scorer {
    pub state: ServerState,
    pub head: ScoringHead,
    pub catalog: ItemCatalog,
    pub relevance: Relevance,
    store_path: Option<PathBuf>,
}

impl Scorer {
    pub fn new(
        snapshot: Snapshot,
        head: ScoringHead,
        catalog: ItemCatalog,
        relevance: Relevance,
    ) -> Result<Self> {
        if head.realtime {
            return Err(Error::Config(
                "serving does not carry real-time behaviors; use a head trained without them".into(),
            ));
        }
        if head.d != snapshot.dim() {
            return Err(Error::dim(snapshot.dim(), head.d));
        }
        if catalog.dim() != snapshot.dim() {
            return Err(Error::dim(snapshot.dim(), catalog.dim()));
        }
        let store_path = snapshot.path().map(|p| p.to_path_buf());
        Ok(Scorer {
            state: ServerState::new(snapshot),
            head,
            catalog,
            relevance,
            store_path,
        })
    }

    /// Scores against a single snapshot taken at the start of the request.
    pub fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        let current = self.state.current();
        let set = current.snapshot.lookup(user)?;
        items
            .iter()
            .map(|&item| {
                let x = self.catalog.embedding(item)?;
                let (interest, _) = attend(&set, x, self.relevance)?;
                self.head.score(&interest, x, None)
            })
            .collect()
    }

    pub fn reload(&self) -> Result<u64> {
        let path = self
            .store_path
            .as_deref()
            .ok_or_else(|| Error::Config("store was not opened from a file".into()))?;
        self.state.swap_snapshot(path)
    }

    pub fn handle(&self, request: &Request) -> Response {
        match request {
            Request::Score { user, items } => match self.score(*user, items) {
                Ok(scores) => Response::Scores { user: *user, scores },
                Err(Error::NotFound(what)) if what.starts_with("user") => Response::error("user_not_found"),
                Err(Error::NotFound(_)) => Response::error("item_not_found"),
                Err(e) => Response::error(format!("internal: {e}")),
            },
            Request::Control { control } if control == "reload" => match self.reload() {
                Ok(generation) => Response::Reloaded { reloaded: generation },
                Err(e) => Response::error(format!("reload_failed: {e}")),
            },
            Request::Control { .. } => Response::error("unknown_control"),
        }
    }

    pub fn handle_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(_) => Response::error("bad_request"),
        };
        serde_json::to_string(&response).expect("responses serialize")
    }

    /// Answers one line per request until end of input. When `reload_flag`
    /// is set (e.g. by a signal handler) the store is reopened before the
    /// next request.
    pub fn serve_stream<R: BufRead, W: Write>(
        &self,
        reader: R,
        mut writer: W,
        reload_flag: Option<&AtomicBool>,
    ) -> Result<()> {
        for line in reader.lines() {
            let line = line?;
            if let Some(flag) = reload_flag {
                if flag.swap(false, Ordering::SeqCst) {
                    // a bad new store keeps the old one serving
                    let _ = self.reload();
                }
            }
            if line.trim().is_empty() {
                continue;
            }
            writeln!(writer, "{}", self.handle_line(&line))?;
            writer.flush()?;
        }
        Ok(())
    }
}
