//! Durable, append-only persistence: one JSON-lines event log per
//! conversation, content-addressed artifact blobs and a summary index.
//!
//! Layout under the root directory:
//!
//! ```text
//! conversations/{id}.jsonl
//! artifacts/{first two hex digits}/{sha256 hex}
//! index.json
//! ```

mod archive;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Conversation, ConversationMeta, ConversationSummary, DialogueEntry};
use crate::hash::{is_sha256_hex, sha256_hex};

pub use archive::{ExportArchive, ARCHIVE_VERSION};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full: {0}")]
    StorageFull(io::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unknown conversation '{0}'")]
    UnknownConversation(String),
    #[error("conversation '{0}' already exists")]
    AlreadyExists(String),
    #[error("corrupt log for conversation '{id}' at line {line}: {reason}")]
    CorruptLog { id: String, line: u64, reason: String },
    #[error("artifact {0} not found")]
    NotFound(String),
    #[error("entry references artifact {0}, which is not in the store")]
    DanglingArtifact(String),
    #[error("artifact {0} does not match its hash")]
    HashMismatch(String),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u64),
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
}

impl StoreError {
    pub const fn code(&self) -> &'static str {
        match self {
            StoreError::StorageFull(_) => "storage_full",
            StoreError::Io(_) => "io_error",
            StoreError::UnknownConversation(_) => "unknown_conversation",
            StoreError::AlreadyExists(_) => "already_exists",
            StoreError::CorruptLog { .. } => "corrupt_log",
            StoreError::NotFound(_) => "not_found",
            StoreError::DanglingArtifact(_) => "dangling_artifact",
            StoreError::HashMismatch(_) => "hash_mismatch",
            StoreError::UnsupportedVersion(_) => "unsupported_version",
            StoreError::InvalidArchive(_) => "invalid_archive",
        }
    }
}

fn io_err(e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull(e)
    } else {
        StoreError::Io(e)
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

/// One line of a conversation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogRecord {
    Conversation(ConversationMeta),
    Entry(DialogueEntry),
}

/// A problem found while reading a log; lines from `line` on were ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogWarning {
    pub conversation: String,
    /// Zero-based log line (equal to the seq the line would have had).
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for LogWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "corrupt log for conversation {} at line {}: {}; later lines ignored",
            self.conversation, self.line, self.message
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConversation {
    pub conversation: Conversation,
    pub warnings: Vec<LogWarning>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StoreOptions {
    /// fsync logs, blobs and the index after every write.
    pub sync: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingRef {
    pub conversation: String,
    pub seq: u64,
    pub hash: String,
}

/// Result of a referential-integrity scan.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCheck {
    pub conversations: usize,
    pub entries: usize,
    pub artifacts: usize,
    pub dangling: Vec<DanglingRef>,
    /// Blobs whose content does not hash to their file name.
    pub corrupt_blobs: Vec<String>,
    pub log_warnings: Vec<String>,
    pub index_mismatches: Vec<String>,
}

impl StoreCheck {
    pub fn is_ok(&self) -> bool {
        self.dangling.is_empty()
            && self.corrupt_blobs.is_empty()
            && self.log_warnings.is_empty()
            && self.index_mismatches.is_empty()
    }
}

#[derive(Debug)]
struct LogState {
    /// Number of complete lines, i.e. the seq of the next record.
    len: u64,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    options: StoreOptions,
    logs: Mutex<HashMap<String, Arc<Mutex<LogState>>>>,
    index: Mutex<Option<BTreeMap<String, ConversationSummary>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Conversation ids become file names, so only a conservative alphabet is
/// accepted.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> StoreResult<Self> {
        Self::open_with(root, StoreOptions::default())
    }

    pub fn open_with(root: impl Into<PathBuf>, options: StoreOptions) -> StoreResult<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("conversations")).map_err(io_err)?;
        fs::create_dir_all(root.join("artifacts")).map_err(io_err)?;
        Ok(Store {
            root,
            options,
            logs: Mutex::new(HashMap::new()),
            index: Mutex::new(None),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.root.join("conversations").join(format!("{id}.jsonl"))
    }

    pub fn artifact_path(&self, hash: &str) -> PathBuf {
        self.root.join("artifacts").join(&hash[..2.min(hash.len())]).join(hash)
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    // ---- artifacts ----

    /// Store `bytes` under their SHA-256 digest. Idempotent.
    pub fn put_artifact(&self, bytes: &[u8]) -> StoreResult<String> {
        let hash = sha256_hex(bytes);
        let path = self.artifact_path(&hash);
        if path.is_file() {
            return Ok(hash);
        }
        let dir = path.parent().expect("artifact paths have a parent");
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
        tmp.write_all(bytes).map_err(io_err)?;
        if self.options.sync {
            tmp.as_file().sync_all().map_err(io_err)?;
        }
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(hash),
            // lost a race with an identical put
            Err(e) if path.is_file() => {
                drop(e);
                Ok(hash)
            }
            Err(e) => Err(io_err(e.error)),
        }
    }

    pub fn has_artifact(&self, hash: &str) -> bool {
        is_sha256_hex(hash) && self.artifact_path(hash).is_file()
    }

    pub fn get_artifact(&self, hash: &str) -> StoreResult<Vec<u8>> {
        if !is_sha256_hex(hash) {
            return Err(StoreError::NotFound(hash.to_string()));
        }
        match fs::read(self.artifact_path(hash)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(hash.to_string())),
            Err(e) => Err(io_err(e)),
        }
    }

    // ---- logs ----

    fn state(&self, id: &str) -> StoreResult<Arc<Mutex<LogState>>> {
        if !is_valid_id(id) {
            return Err(StoreError::UnknownConversation(id.to_string()));
        }
        let mut logs = lock(&self.logs);
        if let Some(s) = logs.get(id) {
            return Ok(s.clone());
        }
        let path = self.log_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownConversation(id.to_string()))
            }
            Err(e) => return Err(io_err(e)),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            // An interrupted append left a partial line; drop it so the next
            // record starts on a fresh line.
            tracing::warn!(conversation = id, "truncating incomplete final log line");
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err)?;
            f.set_len(complete as u64).map_err(io_err)?;
        }
        let len = bytes[..complete].iter().filter(|&&b| b == b'\n').count() as u64;
        let state = Arc::new(Mutex::new(LogState { len }));
        logs.insert(id.to_string(), state.clone());
        Ok(state)
    }

    fn write_line(&self, path: &Path, record: &LogRecord, create: bool) -> StoreResult<()> {
        let mut line = serde_json::to_vec(record).expect("log records always serialize");
        line.push(b'\n');
        let mut opts = OpenOptions::new();
        opts.append(true);
        if create {
            opts.create_new(true);
        }
        let mut f = opts.open(path).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                StoreError::AlreadyExists(path.file_stem().unwrap_or_default().to_string_lossy().into_owned())
            } else {
                io_err(e)
            }
        })?;
        f.write_all(&line).map_err(io_err)?;
        if self.options.sync {
            f.sync_data().map_err(io_err)?;
        }
        Ok(())
    }

    /// Write the creation record (seq 0) of a new conversation.
    pub fn create_conversation(&self, meta: &ConversationMeta) -> StoreResult<()> {
        if !is_valid_id(&meta.id) {
            return Err(StoreError::InvalidArchive(format!(
                "invalid conversation id '{}'",
                meta.id
            )));
        }
        let mut logs = lock(&self.logs);
        self.write_line(&self.log_path(&meta.id), &LogRecord::Conversation(meta.clone()), true)?;
        logs.insert(meta.id.clone(), Arc::new(Mutex::new(LogState { len: 1 })));
        drop(logs);
        self.update_index(|index| {
            index.insert(
                meta.id.clone(),
                ConversationSummary {
                    id: meta.id.clone(),
                    created_at: meta.created_at,
                    entry_count: 0,
                    llm_config: meta.llm_config.clone(),
                    interpreter_config: meta.interpreter_config.clone(),
                },
            );
        })
    }

    /// Append `entry`, assigning its seq (the number of prior log lines).
    /// Every referenced artifact must already be stored.
    pub fn append_entry(&self, id: &str, mut entry: DialogueEntry) -> StoreResult<DialogueEntry> {
        for a in &entry.artifacts {
            if !self.has_artifact(&a.hash) {
                return Err(StoreError::DanglingArtifact(a.hash.clone()));
            }
        }
        let state = self.state(id)?;
        let mut state = lock(&state);
        entry.seq = state.len;
        let record = LogRecord::Entry(entry);
        self.write_line(&self.log_path(id), &record, false)?;
        state.len += 1;
        let LogRecord::Entry(entry) = record else {
            unreachable!()
        };
        let change = entry.config_change.clone();
        self.update_index(|index| {
            if let Some(s) = index.get_mut(id) {
                s.entry_count = entry.seq;
                if let Some(c) = change.as_ref().and_then(|c| c.llm.as_ref()) {
                    s.llm_config = c.new.clone();
                }
                if let Some(c) = change.as_ref().and_then(|c| c.interpreter.as_ref()) {
                    s.interpreter_config = c.new.clone();
                }
            }
        })?;
        Ok(entry)
    }

    /// Rebuild a conversation from its log. A corrupt or incomplete line
    /// ends the readable prefix and is reported as a warning.
    pub fn load_conversation(&self, id: &str) -> StoreResult<LoadedConversation> {
        if !is_valid_id(id) {
            return Err(StoreError::UnknownConversation(id.to_string()));
        }
        let bytes = match fs::read(self.log_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownConversation(id.to_string()))
            }
            Err(e) => return Err(io_err(e)),
        };
        parse_log(id, &bytes)
    }

    pub fn conversation_ids(&self) -> StoreResult<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("conversations")).map_err(io_err)? {
            let name = entry.map_err(io_err)?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".jsonl") {
                if is_valid_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    // ---- index ----

    fn rebuild_index(&self) -> StoreResult<BTreeMap<String, ConversationSummary>> {
        let mut index = BTreeMap::new();
        for id in self.conversation_ids()? {
            let Ok(loaded) = self.load_conversation(&id) else {
                continue;
            };
            index.insert(id, summary_of(&loaded.conversation));
        }
        Ok(index)
    }

    fn index_guard(&self) -> StoreResult<MutexGuard<'_, Option<BTreeMap<String, ConversationSummary>>>> {
        let mut guard = lock(&self.index);
        if guard.is_none() {
            let from_disk = fs::read(self.index_path())
                .ok()
                .and_then(|b| serde_json::from_slice::<BTreeMap<String, ConversationSummary>>(&b).ok());
            *guard = Some(match from_disk {
                Some(i) => i,
                None => self.rebuild_index()?,
            });
        }
        Ok(guard)
    }

    fn with_index<R>(&self, f: impl FnOnce(&BTreeMap<String, ConversationSummary>) -> R) -> StoreResult<R> {
        let guard = self.index_guard()?;
        Ok(f(guard.as_ref().expect("loaded by index_guard")))
    }

    /// Apply `f` and rewrite index.json, holding the index lock throughout
    /// so concurrent updates persist in order.
    fn update_index(&self, f: impl FnOnce(&mut BTreeMap<String, ConversationSummary>)) -> StoreResult<()> {
        let mut guard = self.index_guard()?;
        let index = guard.as_mut().expect("loaded by index_guard");
        f(index);
        let bytes = serde_json::to_vec_pretty(index).expect("index serializes");
        // write-then-rename keeps index.json whole at all times
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io_err)?;
        tmp.write_all(&bytes).map_err(io_err)?;
        if self.options.sync {
            tmp.as_file().sync_all().map_err(io_err)?;
        }
        tmp.persist(self.index_path()).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    /// Summaries ordered by creation time, then id.
    pub fn list_conversations(&self) -> StoreResult<Vec<ConversationSummary>> {
        let mut list = self.with_index(|index| index.values().cloned().collect::<Vec<_>>())?;
        list.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(list)
    }

    // ---- integrity ----

    /// Scan every log and blob: dangling references, blobs that fail their
    /// hash, unreadable log lines and index entries that disagree with logs.
    pub fn check_store(&self) -> StoreResult<StoreCheck> {
        let mut check = StoreCheck::default();
        let mut from_logs = BTreeMap::new();
        for id in self.conversation_ids()? {
            let loaded = match self.load_conversation(&id) {
                Ok(l) => l,
                Err(e) => {
                    check.log_warnings.push(e.to_string());
                    continue;
                }
            };
            check.conversations += 1;
            check.entries += loaded.conversation.entries.len();
            check
                .log_warnings
                .extend(loaded.warnings.iter().map(ToString::to_string));
            for entry in &loaded.conversation.entries {
                for a in &entry.artifacts {
                    if !self.has_artifact(&a.hash) {
                        check.dangling.push(DanglingRef {
                            conversation: id.clone(),
                            seq: entry.seq,
                            hash: a.hash.clone(),
                        });
                    }
                }
            }
            from_logs.insert(id, summary_of(&loaded.conversation));
        }
        let artifacts_dir = self.root.join("artifacts");
        for shard in fs::read_dir(&artifacts_dir).map_err(io_err)? {
            let shard = shard.map_err(io_err)?;
            if !shard.file_type().map_err(io_err)?.is_dir() {
                continue;
            }
            for blob in fs::read_dir(shard.path()).map_err(io_err)? {
                let blob = blob.map_err(io_err)?;
                let name = blob.file_name().to_string_lossy().into_owned();
                if !is_sha256_hex(&name) {
                    // leftover temp file from an interrupted put
                    continue;
                }
                check.artifacts += 1;
                let bytes = fs::read(blob.path()).map_err(io_err)?;
                if sha256_hex(&bytes) != name || shard.file_name().to_string_lossy() != name[..2] {
                    check.corrupt_blobs.push(name);
                }
            }
        }
        check.corrupt_blobs.sort();
        let indexed = self.with_index(|i| i.clone())?;
        for (id, summary) in &from_logs {
            match indexed.get(id) {
                None => check.index_mismatches.push(format!("{id}: missing from index")),
                Some(s) if s != summary => check.index_mismatches.push(format!("{id}: index summary is stale")),
                _ => {}
            }
        }
        for id in indexed.keys().filter(|id| !from_logs.contains_key(*id)) {
            check.index_mismatches.push(format!("{id}: indexed but has no log"));
        }
        Ok(check)
    }
}

fn summary_of(c: &Conversation) -> ConversationSummary {
    ConversationSummary {
        id: c.id.clone(),
        created_at: c.created_at,
        entry_count: c.entries.last().map_or(0, |e| e.seq),
        llm_config: c.llm_config.clone(),
        interpreter_config: c.interpreter_config.clone(),
    }
}

fn parse_log(id: &str, bytes: &[u8]) -> StoreResult<LoadedConversation> {
    let mut warnings = Vec::new();
    let mut conversation: Option<Conversation> = None;
    let mut rest = bytes;
    let mut line_no = 0u64;
    while !rest.is_empty() {
        let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(p) => {
                let l = &rest[..p];
                rest = &rest[p + 1..];
                (l, true)
            }
            None => {
                let l = rest;
                rest = &[];
                (l, false)
            }
        };
        let fail = |message: String| LogWarning {
            conversation: id.to_string(),
            line: line_no,
            message,
        };
        let record = if complete {
            serde_json::from_slice::<LogRecord>(line).map_err(|e| fail(e.to_string()))
        } else {
            Err(fail("incomplete final line".into()))
        };
        let outcome = match (record, conversation.as_mut()) {
            (Ok(LogRecord::Conversation(meta)), None) if meta.id == id => {
                conversation = Some(Conversation::from_meta(meta));
                Ok(())
            }
            (Ok(LogRecord::Conversation(_)), None) => Err(fail("creation record names another conversation".into())),
            (Ok(LogRecord::Entry(_)), None) => Err(fail("first line is not a creation record".into())),
            (Ok(LogRecord::Conversation(_)), Some(_)) => Err(fail("unexpected second creation record".into())),
            (Ok(LogRecord::Entry(e)), Some(_)) if e.seq != line_no => {
                Err(fail(format!("entry seq {} does not match its position", e.seq)))
            }
            (Ok(LogRecord::Entry(e)), Some(c)) => {
                c.push(e);
                Ok(())
            }
            (Err(w), _) => Err(w),
        };
        if let Err(w) = outcome {
            if conversation.is_none() {
                return Err(StoreError::CorruptLog {
                    id: id.to_string(),
                    line: w.line,
                    reason: w.message,
                });
            }
            tracing::warn!("{w}");
            warnings.push(w);
            break;
        }
        line_no += 1;
    }
    match conversation {
        Some(conversation) => Ok(LoadedConversation { conversation, warnings }),
        None => Err(StoreError::CorruptLog {
            id: id.to_string(),
            line: 0,
            reason: "empty log".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{ArtifactRef, Role};
    use crate::gateway::{LlmConfig, ModelDescriptor};
    use crate::interpreter::{InterpreterConfig, OutputFormat};
    use crate::syntax::Language;
    use chrono::Utc;

    pub(crate) fn meta(id: &str) -> ConversationMeta {
        ConversationMeta {
            id: id.into(),
            created_at: Utc::now(),
            llm_config: LlmConfig::replay("script.json", ModelDescriptor::gpt4()),
            interpreter_config: InterpreterConfig::fallback(Language::Plantuml),
        }
    }

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn first_user_entry_is_seq_one() {
        let (_d, s) = store();
        s.create_conversation(&meta("c1")).unwrap();
        let e = s.append_entry("c1", DialogueEntry::new(Role::User, "hi")).unwrap();
        assert_eq!(e.seq, 1);
        assert_eq!(
            s.append_entry("c1", DialogueEntry::new(Role::Llm, "yo")).unwrap().seq,
            2
        );
    }

    #[test]
    fn append_after_reopen_continues() {
        let (d, s) = store();
        s.create_conversation(&meta("c1")).unwrap();
        for i in 0..3 {
            s.append_entry("c1", DialogueEntry::new(Role::User, format!("m{i}")))
                .unwrap();
        }
        drop(s);
        let s = Store::open(d.path()).unwrap();
        assert_eq!(
            s.append_entry("c1", DialogueEntry::new(Role::User, "x")).unwrap().seq,
            4
        );
        let c = s.load_conversation("c1").unwrap();
        assert!(c.warnings.is_empty());
        let seqs: Vec<u64> = c.conversation.entries.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [1, 2, 3, 4]);
    }

    #[test]
    fn artifacts_content_addressed() {
        let (d, s) = store();
        let h = s.put_artifact(b"").unwrap();
        assert_eq!(h, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        let h1 = s.put_artifact(b"svg bytes").unwrap();
        let h2 = s.put_artifact(b"svg bytes").unwrap();
        assert_eq!(h1, h2);
        assert_eq!(s.get_artifact(&h1).unwrap(), b"svg bytes");
        let shard = d.path().join("artifacts").join(&h1[..2]);
        assert_eq!(fs::read_dir(shard).unwrap().count(), 1);
        assert!(matches!(s.get_artifact(&"0".repeat(64)), Err(StoreError::NotFound(_))));
        assert!(matches!(
            s.get_artifact("../../etc/passwd"),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn dangling_reference_rejected() {
        let (_d, s) = store();
        s.create_conversation(&meta("c1")).unwrap();
        let mut e = DialogueEntry::new(Role::Interpreter, "");
        e.artifacts.push(ArtifactRef {
            hash: "a".repeat(64),
            format: OutputFormat::Txt,
            renderer_id: "x".into(),
            block_index: 0,
        });
        assert!(matches!(s.append_entry("c1", e), Err(StoreError::DanglingArtifact(_))));
        assert!(s.check_store().unwrap().is_ok());
    }

    #[test]
    fn unknown_conversation() {
        let (_d, s) = store();
        assert!(matches!(
            s.append_entry("nope", DialogueEntry::new(Role::User, "x")),
            Err(StoreError::UnknownConversation(_))
        ));
        assert!(matches!(
            s.load_conversation("../x"),
            Err(StoreError::UnknownConversation(_))
        ));
        assert!(s.list_conversations().unwrap().is_empty());
    }

    #[test]
    fn truncated_tail_returns_prefix_then_heals() {
        let (d, s) = store();
        s.create_conversation(&meta("c1")).unwrap();
        for i in 0..5 {
            s.append_entry("c1", DialogueEntry::new(Role::User, format!("m{i}")))
                .unwrap();
        }
        drop(s);
        let path = d.path().join("conversations/c1.jsonl");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();

        let s = Store::open(d.path()).unwrap();
        let loaded = s.load_conversation("c1").unwrap();
        assert_eq!(loaded.conversation.entries.len(), 4);
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.warnings[0].line, 5);

        assert_eq!(
            s.append_entry("c1", DialogueEntry::new(Role::User, "again"))
                .unwrap()
                .seq,
            5
        );
        let loaded = s.load_conversation("c1").unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.conversation.entries.len(), 5);
    }

    #[test]
    fn corrupt_creation_record_is_error() {
        let (d, s) = store();
        fs::write(d.path().join("conversations/bad.jsonl"), b"{not json}\n").unwrap();
        assert!(matches!(
            s.load_conversation("bad"),
            Err(StoreError::CorruptLog { line: 0, .. })
        ));
    }

    #[test]
    fn list_and_index() {
        let (d, s) = store();
        s.create_conversation(&meta("b")).unwrap();
        s.create_conversation(&meta("a")).unwrap();
        s.append_entry("a", DialogueEntry::new(Role::User, "x")).unwrap();
        let list = s.list_conversations().unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list.iter().find(|c| c.id == "a").unwrap().entry_count, 1);
        assert!(s.check_store().unwrap().is_ok());
        assert!(d.path().join("index.json").is_file());

        // a missing index is rebuilt from the logs
        fs::remove_file(d.path().join("index.json")).unwrap();
        let s = Store::open(d.path()).unwrap();
        assert_eq!(s.list_conversations().unwrap(), list);
    }

    #[test]
    fn duplicate_create_rejected() {
        let (_d, s) = store();
        s.create_conversation(&meta("c")).unwrap();
        assert!(matches!(
            s.create_conversation(&meta("c")),
            Err(StoreError::AlreadyExists(_))
        ));
    }

    #[test]
    fn log_lines_carry_kind() {
        let (d, s) = store();
        s.create_conversation(&meta("c")).unwrap();
        s.append_entry("c", DialogueEntry::new(Role::User, "x")).unwrap();
        let text = fs::read_to_string(d.path().join("conversations/c.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["kind"], "conversation");
        assert_eq!(lines[1]["kind"], "entry");
        assert_eq!(lines[1]["role"], "user");
        assert_eq!(lines[1]["seq"], 1);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn concurrent_appends_to_distinct_conversations() {
        let (_d, s) = store();
        let s = Arc::new(s);
        for i in 0..4 {
            s.create_conversation(&meta(&format!("c{i}"))).unwrap();
        }
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for j in 0..25 {
                        let e = s.append_entry(&format!("c{i}"), DialogueEntry::new(Role::User, format!("{j}")));
                        assert_eq!(e.unwrap().seq, j + 1);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for i in 0..4 {
            let c = s.load_conversation(&format!("c{i}")).unwrap();
            assert_eq!(c.conversation.entries.len(), 25);
            assert!(c.warnings.is_empty());
        }
        assert!(s.check_store().unwrap().is_ok());
    }
}
