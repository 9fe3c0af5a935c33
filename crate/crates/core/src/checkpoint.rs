//! Versioned binary artifact files. Every stage output (index, encoder,
//! document ranker, joint model) uses the same container: magic bytes, a
//! format version, the artifact kind, the config hash that produced it, then
//! a bincode payload. Kind and version mismatches are hard errors; a config
//! hash mismatch is only a warning so ablation runs can reuse stages.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"FFAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactKind {
    Index,
    Encoder,
    DocRank,
    Joint,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Index => "index",
            ArtifactKind::Encoder => "encoder",
            ArtifactKind::DocRank => "docrank",
            ArtifactKind::Joint => "joint",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: ArtifactKind,
    config_hash: String,
}

pub fn save_artifact<T: Serialize>(
    path: impl AsRef<Path>,
    kind: ArtifactKind,
    config_hash: &str,
    payload: &T,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&MAGIC)?;
    let header = Header { version: VERSION, kind, config_hash: config_hash.to_string() };
    bincode::serialize_into(&mut w, &header)
        .map_err(|e| Error::Format(format!("writing header: {e}")))?;
    bincode::serialize_into(&mut w, payload)
        .map_err(|e| Error::Format(format!("writing payload: {e}")))?;
    w.flush()?;
    Ok(())
}

pub fn load_artifact<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    kind: ArtifactKind,
    config_hash: &str,
) -> Result<T> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: too short to be an artifact", path.display())))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("{}: not an artifact file", path.display())));
    }
    let header: Header = bincode::deserialize_from(&mut r)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "{}: format version {} not supported (expected {VERSION})",
            path.display(),
            header.version
        )));
    }
    if header.kind != kind {
        return Err(Error::Format(format!(
            "{}: holds a {} artifact, expected {}",
            path.display(),
            header.kind.as_str(),
            kind.as_str()
        )));
    }
    if header.config_hash != config_hash {
        log::warn!(
            "{}: built under config {}, current config is {config_hash}",
            path.display(),
            header.config_hash
        );
    }
    bincode::deserialize_from(&mut r)
        .map_err(|e| Error::Format(format!("{}: bad payload: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Payload {
        name: String,
        values: Vec<f64>,
    }

    fn sample() -> Payload {
        Payload { name: "weights".into(), values: vec![1.5, -0.25, 3.0] }
    }

    #[test]
    fn round_trip_preserves_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_artifact(&path, ArtifactKind::Encoder, "abc123", &sample()).unwrap();
        let back: Payload = load_artifact(&path, ArtifactKind::Encoder, "abc123").unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not an artifact at all").unwrap();
        let err = load_artifact::<Payload>(&path, ArtifactKind::Index, "h").unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err:?}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        std::fs::write(&path, b"FF").unwrap();
        let err = load_artifact::<Payload>(&path, ArtifactKind::Index, "h").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        let header = Header { version: VERSION + 1, kind: ArtifactKind::Index, config_hash: "h".into() };
        bytes.extend_from_slice(&bincode::serialize(&header).unwrap());
        bytes.extend_from_slice(&bincode::serialize(&sample()).unwrap());
        std::fs::write(&path, bytes).unwrap();
        let err = load_artifact::<Payload>(&path, ArtifactKind::Index, "h").unwrap_err();
        assert!(err.to_string().contains("version"), "got {err}");
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_artifact(&path, ArtifactKind::DocRank, "h", &sample()).unwrap();
        let err = load_artifact::<Payload>(&path, ArtifactKind::Joint, "h").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("docrank") && msg.contains("joint"), "got {msg}");
    }

    #[test]
    fn hash_mismatch_still_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_artifact(&path, ArtifactKind::Index, "old", &sample()).unwrap();
        let back: Payload = load_artifact(&path, ArtifactKind::Index, "new").unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn corrupt_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_artifact(&path, ArtifactKind::Index, "h", &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        let err = load_artifact::<Payload>(&path, ArtifactKind::Index, "h").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
