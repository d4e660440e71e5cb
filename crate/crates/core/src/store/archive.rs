//! Single-document export/import of a conversation with its artifacts.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Store, StoreError, StoreResult};
use crate::dialogue::{ConversationMeta, DialogueEntry};
use crate::hash::sha256_hex;

pub const ARCHIVE_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportArchive {
    pub version: u64,
    /// The creation record: configs as they were when the conversation began.
    pub conversation: ConversationMeta,
    pub entries: Vec<DialogueEntry>,
    /// Content hash → base64 bytes, in hash order.
    pub artifacts: BTreeMap<String, String>,
}

impl Store {
    /// Serialize a conversation and every artifact it references.
    /// Deterministic: exporting the same stored state twice gives the same bytes.
    pub fn export_conversation(&self, id: &str) -> StoreResult<Vec<u8>> {
        let loaded = self.load_conversation(id)?;
        if let Some(w) = loaded.warnings.first() {
            return Err(StoreError::CorruptLog {
                id: id.to_string(),
                line: w.line,
                reason: w.message.clone(),
            });
        }
        let first = self.first_record(id)?;
        let mut artifacts = BTreeMap::new();
        for entry in &loaded.conversation.entries {
            for a in &entry.artifacts {
                if !artifacts.contains_key(&a.hash) {
                    let bytes = self.get_artifact(&a.hash)?;
                    artifacts.insert(a.hash.clone(), B64.encode(bytes));
                }
            }
        }
        let archive = ExportArchive {
            version: ARCHIVE_VERSION,
            conversation: first,
            entries: loaded.conversation.entries,
            artifacts,
        };
        Ok(serde_json::to_vec(&archive).expect("archives serialize"))
    }

    fn first_record(&self, id: &str) -> StoreResult<ConversationMeta> {
        let text = std::fs::read_to_string(self.log_path(id)).map_err(super::io_err)?;
        let line = text.lines().next().unwrap_or_default();
        match serde_json::from_str::<super::LogRecord>(line) {
            Ok(super::LogRecord::Conversation(meta)) => Ok(meta),
            _ => Err(StoreError::CorruptLog {
                id: id.to_string(),
                line: 0,
                reason: "missing creation record".into(),
            }),
        }
    }

    /// Verify and import an archive under a fresh conversation id.
    pub fn import_conversation(&self, archive: &[u8]) -> StoreResult<String> {
        let value: serde_json::Value =
            serde_json::from_slice(archive).map_err(|e| StoreError::InvalidArchive(e.to_string()))?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(ARCHIVE_VERSION) => {}
            Some(v) => return Err(StoreError::UnsupportedVersion(v)),
            None => return Err(StoreError::InvalidArchive("missing version".into())),
        }
        let archive: ExportArchive =
            serde_json::from_value(value).map_err(|e| StoreError::InvalidArchive(e.to_string()))?;

        let mut blobs = Vec::with_capacity(archive.artifacts.len());
        for (hash, encoded) in &archive.artifacts {
            let bytes = B64
                .decode(encoded)
                .map_err(|e| StoreError::InvalidArchive(format!("artifact {hash}: {e}")))?;
            if sha256_hex(&bytes) != *hash {
                return Err(StoreError::HashMismatch(hash.clone()));
            }
            blobs.push(bytes);
        }
        for (i, entry) in archive.entries.iter().enumerate() {
            if entry.seq != i as u64 + 1 {
                return Err(StoreError::InvalidArchive(format!(
                    "entry {i} has seq {}, expected {}",
                    entry.seq,
                    i + 1
                )));
            }
            if let Some(a) = entry
                .artifacts
                .iter()
                .find(|a| !archive.artifacts.contains_key(&a.hash))
            {
                return Err(StoreError::InvalidArchive(format!(
                    "entry {} references missing artifact {}",
                    entry.seq, a.hash
                )));
            }
        }

        for bytes in &blobs {
            self.put_artifact(bytes)?;
        }
        let id = uuid::Uuid::new_v4().to_string();
        let meta = ConversationMeta {
            id: id.clone(),
            ..archive.conversation
        };
        self.create_conversation(&meta)?;
        for entry in archive.entries {
            self.append_entry(&id, entry)?;
        }
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{ArtifactRef, Role};
    use crate::interpreter::OutputFormat;
    use crate::store::tests::meta;

    fn populated() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        s.create_conversation(&meta("c1")).unwrap();
        s.append_entry("c1", DialogueEntry::new(Role::User, "draw it")).unwrap();
        s.append_entry("c1", DialogueEntry::new(Role::Llm, "@startuml\nclass A\n@enduml"))
            .unwrap();
        let hash = s
            .put_artifact(b"# plantuml fallback rendering\nclass A (0 members)\n")
            .unwrap();
        let mut e = DialogueEntry::new(Role::Interpreter, "");
        e.artifacts.push(ArtifactRef {
            hash,
            format: OutputFormat::Txt,
            renderer_id: "builtin-fallback".into(),
            block_index: 0,
        });
        s.append_entry("c1", e).unwrap();
        (dir, s)
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let (_d, s) = populated();
        let first = s.export_conversation("c1").unwrap();
        let new_id = s.import_conversation(&first).unwrap();
        assert_ne!(new_id, "c1");
        let second = s.export_conversation(&new_id).unwrap();
        let second = String::from_utf8(second).unwrap().replace(&new_id, "c1");
        assert_eq!(second.as_bytes(), first.as_slice());
        assert!(s.check_store().unwrap().is_ok());

        let other = tempfile::tempdir().unwrap();
        let s2 = Store::open(other.path()).unwrap();
        let id2 = s2.import_conversation(&first).unwrap();
        let c = s2.load_conversation(&id2).unwrap().conversation;
        assert_eq!(c.entries.len(), 3);
        assert_eq!(
            s2.get_artifact(&c.entries[2].artifacts[0].hash).unwrap(),
            s.get_artifact(&c.entries[2].artifacts[0].hash).unwrap()
        );
    }

    #[test]
    fn corrupted_blob_names_hash() {
        let (_d, s) = populated();
        let mut archive: ExportArchive = serde_json::from_slice(&s.export_conversation("c1").unwrap()).unwrap();
        let hash = archive.artifacts.keys().next().unwrap().clone();
        archive.artifacts.insert(hash.clone(), B64.encode(b"tampered"));
        let bytes = serde_json::to_vec(&archive).unwrap();
        match s.import_conversation(&bytes) {
            Err(StoreError::HashMismatch(h)) => assert_eq!(h, hash),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_version() {
        let (_d, s) = populated();
        assert!(matches!(
            s.import_conversation(br#"{"version": 99}"#),
            Err(StoreError::UnsupportedVersion(99))
        ));
        assert!(matches!(
            s.import_conversation(b"[]"),
            Err(StoreError::InvalidArchive(_))
        ));
    }
}
