//! Interest store: the file handed from offline extraction to the online
//! scorer, plus snapshot swapping for a running server.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ENCS" | u16 version | u32 d | u32 K-max | [u8; 32] config hash | u64 count
//! | count × (u64 user, u64 offset)
//! | count × (u64 user, u16 K', K'·d f32, u64 created_at)
//! | u32 CRC32 of everything before it
//! ```
//!
//! Offsets are absolute byte positions of each record. The index is sorted by
//! user id.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::datagen::UserId;
use crate::error::{Error, Result};
use crate::interest::{ConfigHash, InterestSet};

pub const STORE_MAGIC: &[u8; 4] = b"ENCS";
pub const STORE_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 32 + 8;
const INDEX_ENTRY_LEN: usize = 16;

pub fn encode_store(sets: &[InterestSet], hash: &ConfigHash) -> Result<Vec<u8>> {
    let first = sets.first().ok_or(Error::EmptyInput("write_store"))?;
    let d = first.dim();
    let mut seen = HashSet::new();
    for s in sets {
        if !seen.insert(s.user_id) {
            return Err(Error::DuplicateKey(s.user_id));
        }
        if s.interests.is_empty() {
            return Err(Error::EmptyInput("interest set"));
        }
        if let Some(u) = s.interests.iter().find(|u| u.len() != d) {
            return Err(Error::dim(d, u.len()));
        }
        if s.interests.len() > u16::MAX as usize {
            return Err(Error::Config(format!("{} interests exceed u16", s.interests.len())));
        }
        if &s.config_hash != hash {
            return Err(Error::Config(format!(
                "interest set for user {} was extracted under a different config",
                s.user_id
            )));
        }
    }
    let mut order: Vec<&InterestSet> = sets.iter().collect();
    order.sort_by_key(|s| s.user_id);
    let k_max = order.iter().map(|s| s.k_eff()).max().unwrap_or(0);

    let mut out = Vec::new();
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(k_max as u32).to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&(order.len() as u64).to_le_bytes());

    let mut offset = (HEADER_LEN + INDEX_ENTRY_LEN * order.len()) as u64;
    for s in &order {
        out.extend_from_slice(&s.user_id.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += record_len(s.k_eff(), d) as u64;
    }
    for s in &order {
        out.extend_from_slice(&s.user_id.to_le_bytes());
        out.extend_from_slice(&(s.k_eff() as u16).to_le_bytes());
        for u in &s.interests {
            for &x in u {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&s.created_at.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn record_len(k: usize, d: usize) -> usize {
    8 + 2 + 4 * k * d + 8
}

/// Writes the store atomically: a temporary file in the destination
/// directory is written, synced and renamed over `path`.
pub fn write_store(path: &Path, sets: &[InterestSet], hash: &ConfigHash) -> Result<()> {
    let bytes = encode_store(sets, hash)?;
    write_atomic(path, &bytes)
}

/// Temp file + fsync + rename, so readers see either the old file or the
/// complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// A validated, immutable store image.
#[derive(Debug)]
pub struct Snapshot {
    bytes: Vec<u8>,
    d: usize,
    k_max: usize,
    config_hash: ConfigHash,
    index: Vec<(UserId, usize)>,
    path: Option<PathBuf>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptStore(msg.into())
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}
fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}
fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

impl Snapshot {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..4] != STORE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u16(&bytes, 4);
        if version != STORE_VERSION {
            return Err(Error::Version {
                expected: STORE_VERSION as u32,
                found: version as u32,
            });
        }
        let body = bytes.len() - 4;
        if crc32fast::hash(&bytes[..body]) != read_u32(&bytes, body) {
            return Err(corrupt("checksum mismatch"));
        }
        let d = read_u32(&bytes, 6) as usize;
        let k_max = read_u32(&bytes, 10) as usize;
        let config_hash: ConfigHash = bytes[14..46].try_into().unwrap();
        let count = read_u64(&bytes, 46) as usize;
        let index_end = count
            .checked_mul(INDEX_ENTRY_LEN)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .filter(|&end| end <= body)
            .ok_or_else(|| corrupt("index exceeds file"))?;
        let mut index = Vec::with_capacity(count);
        for e in 0..count {
            let at = HEADER_LEN + e * INDEX_ENTRY_LEN;
            let user = read_u64(&bytes, at);
            let offset = read_u64(&bytes, at + 8) as usize;
            if index.last().is_some_and(|&(prev, _)| prev >= user) {
                return Err(corrupt("index not strictly sorted"));
            }
            if offset < index_end || offset + 10 > body || read_u64(&bytes, offset) != user {
                return Err(corrupt(format!("bad offset for user {user}")));
            }
            let k = read_u16(&bytes, offset + 8) as usize;
            if k == 0 || k > k_max || offset + record_len(k, d) > body {
                return Err(corrupt(format!("bad record for user {user}")));
            }
            index.push((user, offset));
        }
        Ok(Snapshot {
            bytes,
            d,
            k_max,
            config_hash,
            index,
            path: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn config_hash(&self) -> &ConfigHash {
        &self.config_hash
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.index.iter().map(|&(u, _)| u)
    }

    /// Binary search on the index.
    pub fn lookup(&self, user: UserId) -> Result<InterestSet> {
        let pos = self
            .index
            .binary_search_by_key(&user, |&(u, _)| u)
            .map_err(|_| Error::NotFound(format!("user {user}")))?;
        let offset = self.index[pos].1;
        let b = &self.bytes;
        let k = read_u16(b, offset + 8) as usize;
        let mut at = offset + 10;
        let mut interests = Vec::with_capacity(k);
        for _ in 0..k {
            let u = (0..self.d)
                .map(|c| f32::from_le_bytes(b[at + 4 * c..at + 4 * c + 4].try_into().unwrap()) as f64)
                .collect();
            interests.push(u);
            at += 4 * self.d;
        }
        Ok(InterestSet {
            user_id: user,
            interests,
            within_weights: Vec::new(),
            created_at: read_u64(b, at),
            config_hash: self.config_hash,
        })
    }
}

pub fn open_snapshot(path: &Path) -> Result<Snapshot> {
    let mut snap = Snapshot::from_bytes(std::fs::read(path)?)?;
    snap.path = Some(path.to_path_buf());
    Ok(snap)
}

/// A snapshot together with a generation number that increases on every
/// successful swap.
#[derive(Debug, Clone)]
pub struct Versioned {
    pub generation: u64,
    pub snapshot: Arc<Snapshot>,
}

/// Serving state. Requests grab the current snapshot once and use it for
/// their whole lifetime; a swap only replaces the pointer.
#[derive(Debug)]
pub struct ServerState {
    current: RwLock<Versioned>,
    next_generation: AtomicU64,
}

impl ServerState {
    pub fn new(snapshot: Snapshot) -> Self {
        ServerState {
            current: RwLock::new(Versioned {
                generation: 0,
                snapshot: Arc::new(snapshot),
            }),
            next_generation: AtomicU64::new(1),
        }
    }

    pub fn current(&self) -> Versioned {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Opens and validates `path`, then installs it. On any error the old
    /// snapshot stays in place.
    pub fn swap_snapshot(&self, path: &Path) -> Result<u64> {
        let snap = open_snapshot(path)?;
        let expected = self.current().snapshot.dim();
        if snap.dim() != expected {
            return Err(Error::dim(expected, snap.dim()));
        }
        let generation = self.next_generation.fetch_add(1, Ordering::SeqCst);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Versioned {
            generation,
            snapshot: Arc::new(snap),
        };
        Ok(generation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(user: u64, k: usize, d: usize) -> InterestSet {
        InterestSet {
            user_id: user,
            interests: (0..k)
                .map(|i| (0..d).map(|c| (user as f64 + 0.1) * (i as f64 - c as f64) / 7.0).collect())
                .collect(),
            within_weights: Vec::new(),
            created_at: 1000 + user,
            config_hash: [9; 32],
        }
    }

    #[test]
    fn round_trip_is_exact_after_f32_narrowing() {
        let sets = vec![set(5, 3, 4), set(2, 1, 4), set(9, 2, 4)];
        let bytes = encode_store(&sets, &[9; 32]).unwrap();
        let snap = Snapshot::from_bytes(bytes.clone()).unwrap();
        assert_eq!(snap.len(), 3);
        assert_eq!(snap.k_max(), 3);
        assert_eq!(snap.users().collect::<Vec<_>>(), vec![2, 5, 9]);
        for s in &sets {
            let got = snap.lookup(s.user_id).unwrap();
            assert_eq!(got.created_at, s.created_at);
            for (a, b) in got.interests.iter().zip(&s.interests) {
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(*x, *y as f32 as f64);
                    assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-30));
                }
            }
        }
        let again: Vec<InterestSet> = [2, 5, 9].iter().map(|&u| snap.lookup(u).unwrap()).collect();
        assert_eq!(encode_store(&again, &[9; 32]).unwrap(), bytes);
    }

    #[test]
    fn duplicate_and_missing_users() {
        assert!(matches!(
            encode_store(&[set(1, 1, 2), set(1, 2, 2)], &[9; 32]),
            Err(Error::DuplicateKey(1))
        ));
        let snap = Snapshot::from_bytes(encode_store(&[set(1, 1, 2)], &[9; 32]).unwrap()).unwrap();
        assert!(matches!(snap.lookup(2), Err(Error::NotFound(_))));
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let bytes = encode_store(&[set(1, 2, 3), set(4, 1, 3)], &[9; 32]).unwrap();
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x40;
            assert!(Snapshot::from_bytes(b).is_err(), "byte {i}");
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_store(&[set(1, 1, 2)], &[9; 32]).unwrap();
        bytes[4] = 7;
        assert!(matches!(
            Snapshot::from_bytes(bytes),
            Err(Error::Version { expected: 1, found: 7 })
        ));
    }
}
