//! Group-scoped message persistence.
//!
//! Each record is one pretty-printed JSON document at
//! `<root>/messages/GROUP#<group_id>/MSG#<timestamp_ms:020>#<message_id>.json`,
//! so a directory listing sorts the same way the wall does. Photos live under
//! `<root>/blobs/<sha256>` with a `<sha256>.meta.json` sidecar. A store
//! opened without a root keeps everything in memory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BellVector;
use crate::sig::Badge;

pub const MAX_TEXT_CHARS: usize = 4096;
pub const MAX_BLOB_BYTES: usize = 20 * 1024 * 1024;
const MAX_ID_LEN: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(&'static str),
    #[error("message {group_id}/{message_id} not found")]
    NotFound {
        group_id: String,
        message_id: String,
    },
    #[error("position ({x_pct}, {y_pct}) outside [0, 100]")]
    InvalidPosition { x_pct: f64, y_pct: f64 },
    #[error("blob of {size} bytes exceeds the {MAX_BLOB_BYTES}-byte limit")]
    BlobTooLarge { size: usize },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record {path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureStatus {
    Generating,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x_pct: f64,
    pub y_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub device: String,
    pub algorithm: String,
    pub duration_ms: u64,
    pub bell: BellVector,
    pub q_num: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub group_id: String,
    pub message_id: String,
    pub timestamp_ms: u64,
    pub sender_name: String,
    pub sender_handle: String,
    pub text: String,
    pub photo_ref: Option<String>,
    pub position: Option<Position>,
    pub hidden: bool,
    pub signature_status: SignatureStatus,
    pub badge: Option<Badge>,
    pub provenance: Option<Provenance>,
}

impl MessageRecord {
    /// A fresh phase-1 record.
    pub fn generating(
        group_id: impl Into<String>,
        message_id: impl Into<String>,
        timestamp_ms: u64,
        sender_name: impl Into<String>,
        sender_handle: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            group_id: group_id.into(),
            message_id: message_id.into(),
            timestamp_ms,
            sender_name: sender_name.into(),
            sender_handle: sender_handle.into(),
            text: text.into(),
            photo_ref: None,
            position: None,
            hidden: false,
            signature_status: SignatureStatus::Generating,
            badge: None,
            provenance: None,
        }
    }

    fn sort_key(&self) -> (u64, String) {
        (self.timestamp_ms, self.message_id.clone())
    }

    fn file_name(&self) -> String {
        format!("MSG#{:020}#{}.json", self.timestamp_ms, self.message_id)
    }

    /// The persisted encoding.
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("record serialises");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub sender_handle: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub message_count: usize,
    pub leaderboard: Vec<LeaderboardEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub key: String,
    pub size_bytes: usize,
    pub media_type: String,
}

#[derive(Default)]
struct Group {
    records: BTreeMap<(u64, String), MessageRecord>,
    timestamps: HashMap<String, u64>,
}

impl Group {
    fn get_mut(&mut self, message_id: &str) -> Option<&mut MessageRecord> {
        let ts = *self.timestamps.get(message_id)?;
        self.records.get_mut(&(ts, message_id.to_owned()))
    }

    fn insert(&mut self, record: MessageRecord) {
        self.timestamps
            .insert(record.message_id.clone(), record.timestamp_ms);
        self.records.insert(record.sort_key(), record);
    }
}

/// Identifiers become path components, so they are restricted to
/// `[A-Za-z0-9_.-]` (no leading dot).
pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_owned()))
    }
}

type BlobCache = HashMap<String, (BlobRef, Arc<Vec<u8>>)>;

pub struct Store {
    root: Option<PathBuf>,
    groups: RwLock<BTreeMap<String, Arc<Mutex<Group>>>>,
    blobs: Mutex<BlobCache>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            groups: RwLock::default(),
            blobs: Mutex::default(),
        }
    }

    /// Opens (creating if needed) a file-backed store and loads every record.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("messages"))?;
        fs::create_dir_all(root.join("blobs"))?;
        let mut groups = BTreeMap::new();
        for entry in fs::read_dir(root.join("messages"))? {
            let dir = entry?.path();
            let Some(group_id) = dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("GROUP#"))
            else {
                continue;
            };
            let mut group = Group::default();
            for file in fs::read_dir(&dir)? {
                let path = file?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let bytes = fs::read(&path)?;
                let record: MessageRecord = serde_json::from_slice(&bytes)
                    .map_err(|source| StoreError::Corrupt { path, source })?;
                group.insert(record);
            }
            groups.insert(group_id.to_owned(), Arc::new(Mutex::new(group)));
        }
        Ok(Self {
            root: Some(root),
            groups: RwLock::new(groups),
            blobs: Mutex::default(),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn group(&self, group_id: &str) -> Option<Arc<Mutex<Group>>> {
        self.groups.read().unwrap().get(group_id).cloned()
    }

    fn group_or_create(&self, group_id: &str) -> Arc<Mutex<Group>> {
        if let Some(g) = self.group(group_id) {
            return g;
        }
        self.groups
            .write()
            .unwrap()
            .entry(group_id.to_owned())
            .or_default()
            .clone()
    }

    fn persist(&self, record: &MessageRecord) -> Result<(), StoreError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let dir = root
            .join("messages")
            .join(format!("GROUP#{}", record.group_id));
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(record.file_name()), &record.to_json())
    }

    /// Phase 1: stores a `generating` record. Returns `false` if the
    /// (group, message) pair already exists, leaving the stored copy untouched.
    pub fn put_phase1(&self, record: MessageRecord) -> Result<bool, StoreError> {
        validate_id(&record.group_id)?;
        validate_id(&record.message_id)?;
        if record.signature_status != SignatureStatus::Generating
            || record.badge.is_some()
            || record.provenance.is_some()
        {
            return Err(StoreError::InvalidRecord(
                "phase-1 record must be generating without badge",
            ));
        }
        if record.text.chars().count() > MAX_TEXT_CHARS {
            return Err(StoreError::InvalidRecord("text exceeds 4096 characters"));
        }
        let group = self.group_or_create(&record.group_id);
        let mut group = group.lock().unwrap();
        if group.timestamps.contains_key(&record.message_id) {
            return Ok(false);
        }
        self.persist(&record)?;
        group.insert(record);
        Ok(true)
    }

    /// Phase 2: attaches badge and provenance. Returns `false` when the
    /// record was already completed.
    pub fn complete_signature(
        &self,
        group_id: &str,
        message_id: &str,
        badge: Badge,
        provenance: Provenance,
    ) -> Result<bool, StoreError> {
        self.update(group_id, message_id, |rec| {
            if rec.signature_status == SignatureStatus::Completed {
                return Ok(false);
            }
            rec.badge = Some(badge);
            rec.provenance = Some(provenance);
            rec.signature_status = SignatureStatus::Completed;
            Ok(true)
        })
    }

    pub fn soft_delete(&self, group_id: &str, message_id: &str) -> Result<(), StoreError> {
        self.update(group_id, message_id, |rec| {
            rec.hidden = true;
            Ok(())
        })
    }

    pub fn set_position(
        &self,
        group_id: &str,
        message_id: &str,
        x_pct: f64,
        y_pct: f64,
    ) -> Result<(), StoreError> {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !in_range(x_pct) || !in_range(y_pct) {
            return Err(StoreError::InvalidPosition { x_pct, y_pct });
        }
        self.update(group_id, message_id, |rec| {
            rec.position = Some(Position { x_pct, y_pct });
            Ok(())
        })
    }

    /// Applies `f` to a copy of the record and commits it only if `f`
    /// succeeds and the write lands, so readers never observe a partial update.
    fn update<T>(
        &self,
        group_id: &str,
        message_id: &str,
        f: impl FnOnce(&mut MessageRecord) -> Result<T, StoreError>,
    ) -> Result<T, StoreError> {
        let not_found = || StoreError::NotFound {
            group_id: group_id.to_owned(),
            message_id: message_id.to_owned(),
        };
        let group = self.group(group_id).ok_or_else(not_found)?;
        let mut group = group.lock().unwrap();
        let stored = group.get_mut(message_id).ok_or_else(not_found)?;
        let mut next = stored.clone();
        let out = f(&mut next)?;
        if next != *stored {
            self.persist(&next)?;
            *stored = next;
        }
        Ok(out)
    }

    pub fn get(&self, group_id: &str, message_id: &str) -> Option<MessageRecord> {
        let group = self.group(group_id)?;
        let mut group = group.lock().unwrap();
        group.get_mut(message_id).cloned()
    }

    /// Visible records ordered by (timestamp, message id); with `since_ms`,
    /// only records strictly newer than it.
    pub fn list_messages(&self, group_id: &str, since_ms: Option<u64>) -> Vec<MessageRecord> {
        self.collect(group_id, |r| {
            !r.hidden && since_ms.is_none_or(|since| r.timestamp_ms > since)
        })
    }

    /// Every record including hidden ones.
    pub fn admin_list(&self, group_id: &str) -> Vec<MessageRecord> {
        self.collect(group_id, |_| true)
    }

    fn collect(&self, group_id: &str, keep: impl Fn(&MessageRecord) -> bool) -> Vec<MessageRecord> {
        let Some(group) = self.group(group_id) else {
            return Vec::new();
        };
        let group = group.lock().unwrap();
        group
            .records
            .values()
            .filter(|r| keep(r))
            .cloned()
            .collect()
    }

    /// Total records in the group, hidden included.
    pub fn count(&self, group_id: &str) -> usize {
        self.group(group_id)
            .map(|g| g.lock().unwrap().records.len())
            .unwrap_or(0)
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.groups.read().unwrap().keys().cloned().collect()
    }

    pub fn summary(&self, group_id: &str) -> GroupSummary {
        let visible = self.list_messages(group_id, None);
        GroupSummary {
            group_id: group_id.to_owned(),
            message_count: visible.len(),
            leaderboard: leaderboard(&visible),
        }
    }

    pub fn summaries(&self) -> Vec<GroupSummary> {
        self.group_ids().iter().map(|g| self.summary(g)).collect()
    }

    pub fn put_blob(&self, bytes: &[u8], media_type: &str) -> Result<BlobRef, StoreError> {
        if bytes.len() > MAX_BLOB_BYTES {
            return Err(StoreError::BlobTooLarge { size: bytes.len() });
        }
        let key = hex::encode(Sha256::digest(bytes));
        let blob = BlobRef {
            key: key.clone(),
            size_bytes: bytes.len(),
            media_type: media_type.to_owned(),
        };
        match &self.root {
            Some(root) => {
                let dir = root.join("blobs");
                write_atomic(&dir.join(&key), bytes)?;
                let meta = serde_json::to_vec_pretty(&blob).expect("blob ref serialises");
                write_atomic(&dir.join(format!("{key}.meta.json")), &meta)?;
            }
            None => {
                self.blobs
                    .lock()
                    .unwrap()
                    .insert(key, (blob.clone(), Arc::new(bytes.to_vec())));
            }
        }
        Ok(blob)
    }

    pub fn get_blob(&self, key: &str) -> Result<Option<(BlobRef, Vec<u8>)>, StoreError> {
        if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Ok(None);
        }
        match &self.root {
            Some(root) => {
                let dir = root.join("blobs");
                let meta_path = dir.join(format!("{key}.meta.json"));
                let meta = match fs::read(&meta_path) {
                    Ok(m) => m,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(e.into()),
                };
                let blob: BlobRef =
                    serde_json::from_slice(&meta).map_err(|source| StoreError::Corrupt {
                        path: meta_path,
                        source,
                    })?;
                Ok(Some((blob, fs::read(dir.join(key))?)))
            }
            None => Ok(self
                .blobs
                .lock()
                .unwrap()
                .get(key)
                .map(|(b, bytes)| (b.clone(), bytes.as_ref().clone()))),
        }
    }
}

/// Message counts per sender, descending; ties by handle.
pub fn leaderboard(records: &[MessageRecord]) -> Vec<LeaderboardEntry> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.hidden) {
        *counts.entry(r.sender_handle.as_str()).or_default() += 1;
    }
    let mut board: Vec<_> = counts
        .into_iter()
        .map(|(h, count)| LeaderboardEntry {
            sender_handle: h.to_owned(),
            count,
        })
        .collect();
    board.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.sender_handle.cmp(&b.sender_handle))
    });
    board
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sig::HslColor;

    fn rec(id: &str, ts: u64, handle: &str) -> MessageRecord {
        MessageRecord::generating("g1", id, ts, "Name", handle, "hello")
    }

    fn badge() -> Badge {
        Badge {
            q_num: 3,
            pk_hash: "0123456789AB".into(),
            signature: "A".repeat(24),
            color: HslColor {
                h: 52.5,
                s: 85.0,
                l: 55.0,
            },
            nonce_hex: "00".repeat(32),
        }
    }

    fn prov() -> Provenance {
        Provenance {
            device: "SV1-embedded".into(),
            algorithm: "ToyLWE-Braket-SV1".into(),
            duration_ms: 4,
            bell: BellVector::PHI_PLUS,
            q_num: 3,
        }
    }

    #[test]
    fn phase1_then_list() {
        let s = Store::in_memory();
        assert!(s.put_phase1(rec("1", 10, "a")).unwrap());
        let listed = s.list_messages("g1", None);
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].signature_status, SignatureStatus::Generating);
    }

    #[test]
    fn phase1_is_idempotent() {
        let s = Store::in_memory();
        assert!(s.put_phase1(rec("1", 10, "a")).unwrap());
        let mut dup = rec("1", 99, "b");
        dup.text = "other".into();
        assert!(!s.put_phase1(dup).unwrap());
        assert_eq!(s.count("g1"), 1);
        assert_eq!(s.get("g1", "1").unwrap().text, "hello");
    }

    #[test]
    fn phase1_rejects_long_text_and_completed() {
        let s = Store::in_memory();
        let mut r = rec("1", 1, "a");
        r.text = "x".repeat(4097);
        assert!(matches!(s.put_phase1(r), Err(StoreError::InvalidRecord(_))));
        let mut r = rec("2", 1, "a");
        r.signature_status = SignatureStatus::Completed;
        assert!(matches!(s.put_phase1(r), Err(StoreError::InvalidRecord(_))));
        assert!(matches!(
            s.put_phase1(MessageRecord::generating("../x", "1", 0, "", "", "")),
            Err(StoreError::InvalidId(_))
        ));
    }

    #[test]
    fn complete_transitions_once() {
        let s = Store::in_memory();
        s.put_phase1(rec("1", 10, "a")).unwrap();
        assert!(s.complete_signature("g1", "1", badge(), prov()).unwrap());
        let mut other = prov();
        other.device = "local-fallback".into();
        assert!(!s.complete_signature("g1", "1", badge(), other).unwrap());
        let r = s.get("g1", "1").unwrap();
        assert_eq!(r.signature_status, SignatureStatus::Completed);
        assert_eq!(r.provenance.unwrap().device, "SV1-embedded");
    }

    #[test]
    fn complete_unknown_is_error() {
        let s = Store::in_memory();
        assert!(matches!(
            s.complete_signature("g1", "nope", badge(), prov()),
            Err(StoreError::NotFound { .. })
        ));
    }

    #[test]
    fn completing_hidden_record_keeps_it_hidden() {
        let s = Store::in_memory();
        s.put_phase1(rec("1", 10, "a")).unwrap();
        s.soft_delete("g1", "1").unwrap();
        s.complete_signature("g1", "1", badge(), prov()).unwrap();
        let r = s.get("g1", "1").unwrap();
        assert!(r.hidden && r.badge.is_some());
        assert!(s.list_messages("g1", None).is_empty());
        assert_eq!(s.admin_list("g1").len(), 1);
    }

    #[test]
    fn ordering_and_since() {
        let s = Store::in_memory();
        s.put_phase1(rec("b", 20, "x")).unwrap();
        s.put_phase1(rec("a", 20, "x")).unwrap();
        s.put_phase1(rec("c", 10, "x")).unwrap();
        let ids: Vec<_> = s
            .list_messages("g1", None)
            .into_iter()
            .map(|r| r.message_id)
            .collect();
        assert_eq!(ids, ["c", "a", "b"]);
        let ids: Vec<_> = s
            .list_messages("g1", Some(10))
            .into_iter()
            .map(|r| r.message_id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(s.list_messages("nope", None).is_empty());
    }

    #[test]
    fn position_range() {
        let s = Store::in_memory();
        s.put_phase1(rec("1", 1, "a")).unwrap();
        s.set_position("g1", "1", 30.0, 60.0).unwrap();
        assert_eq!(
            s.get("g1", "1").unwrap().position,
            Some(Position {
                x_pct: 30.0,
                y_pct: 60.0
            })
        );
        assert!(matches!(
            s.set_position("g1", "1", 100.5, 0.0),
            Err(StoreError::InvalidPosition { .. })
        ));
        assert!(matches!(
            s.set_position("g1", "1", f64::NAN, 0.0),
            Err(StoreError::InvalidPosition { .. })
        ));
        assert!(matches!(
            s.set_position("g1", "2", 1.0, 1.0),
            Err(StoreError::NotFound { .. })
        ));
    }

    #[test]
    fn leaderboard_excludes_hidden() {
        let s = Store::in_memory();
        for (i, h) in ["amy", "bob", "bob", "cy", "cy", "cy"].iter().enumerate() {
            s.put_phase1(rec(&i.to_string(), i as u64, h)).unwrap();
        }
        s.soft_delete("g1", "3").unwrap();
        let sum = s.summary("g1");
        assert_eq!(sum.message_count, 5);
        let board: Vec<_> = sum
            .leaderboard
            .iter()
            .map(|e| (e.sender_handle.as_str(), e.count))
            .collect();
        assert_eq!(board, [("bob", 2), ("cy", 2), ("amy", 1)]);
    }

    #[test]
    fn durable_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let s = Store::open(dir.path()).unwrap();
            s.put_phase1(rec("1", 1, "a")).unwrap();
            s.put_phase1(rec("2", 2, "a")).unwrap();
            s.complete_signature("g1", "1", badge(), prov()).unwrap();
            s.set_position("g1", "2", 12.5, 99.0).unwrap();
            s.soft_delete("g1", "2").unwrap();
            s.admin_list("g1")
        };
        let s = Store::open(dir.path()).unwrap();
        let after = s.admin_list("g1");
        assert_eq!(before, after);
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_json(), b.to_json());
        }
        let path = dir
            .path()
            .join("messages/GROUP#g1/MSG#00000000000000000001#1.json");
        assert_eq!(fs::read(path).unwrap(), after[0].to_json());
    }

    #[test]
    fn blobs() {
        for s in [
            Store::in_memory(),
            Store::open(tempfile::tempdir().unwrap().keep()).unwrap(),
        ] {
            let b = s.put_blob(b"jpeg bytes", "image/jpeg").unwrap();
            assert_eq!(b.size_bytes, 10);
            let (meta, bytes) = s.get_blob(&b.key).unwrap().unwrap();
            assert_eq!((meta, bytes.as_slice()), (b.clone(), &b"jpeg bytes"[..]));
            assert!(s.get_blob("../../etc/passwd").unwrap().is_none());
            assert!(s.get_blob(&"0".repeat(64)).unwrap().is_none());
        }
        let s = Store::in_memory();
        let big = vec![0u8; MAX_BLOB_BYTES + 1];
        assert!(matches!(
            s.put_blob(&big, "image/jpeg"),
            Err(StoreError::BlobTooLarge { .. })
        ));
    }
}
