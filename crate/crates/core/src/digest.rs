//! Content addresses for configs and input files.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(short_hex(&Sha256::digest(&bytes)))
}

fn short_hex(bytes: &[u8]) -> String {
    hex::encode(&bytes[..8])
}

/// Git-style blob address (`sha256("blob <len>\0" ++ content)`) of a file.
pub fn file_address(path: &Path) -> Result<String> {
    let content = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(&content);
    Ok(hex::encode(h.finalize()))
}

/// Combined address of several files, order-sensitive.
pub fn inputs_address(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(file_address(p)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_address_matches_git_sha256_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        fs::write(&p, b"hello\n").unwrap();
        let mut h = Sha256::new();
        h.update(b"blob 6\0hello\n");
        assert_eq!(file_address(&p).unwrap(), hex::encode(h.finalize()));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&(1, "x")).unwrap();
        assert_eq!(a, config_hash(&(1, "x")).unwrap());
        assert_ne!(a, config_hash(&(2, "x")).unwrap());
        assert_eq!(a.len(), 16);
    }
}
