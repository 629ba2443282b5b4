//! Content-addressed blob storage for weight files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::crypto::{hash, Digest};

const URI_SCHEME: &str = "cas://";

pub fn uri_for(digest: &Digest) -> String {
    format!("{URI_SCHEME}{}", digest.to_hex())
}

pub fn digest_from_uri(uri: &str) -> Option<Digest> {
    uri.strip_prefix(URI_SCHEME).and_then(Digest::from_hex)
}

pub trait BlobStore {
    /// Stores `bytes` under their digest and returns it.
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<Digest>;
    fn get(&self, digest: &Digest) -> std::io::Result<Option<Vec<u8>>>;
    fn contains(&self, digest: &Digest) -> bool;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    blobs: HashMap<Digest, Vec<u8>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}

impl BlobStore for MemoryStore {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<Digest> {
        let d = hash(bytes);
        self.blobs.entry(d).or_insert_with(|| bytes.to_vec());
        Ok(d)
    }

    fn get(&self, digest: &Digest) -> std::io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.get(digest).cloned())
    }

    fn contains(&self, digest: &Digest) -> bool {
        self.blobs.contains_key(digest)
    }
}

/// One file per blob, named by the hex digest.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn open(root: impl AsRef<Path>) -> std::io::Result<Self> {
        std::fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
        })
    }

    fn path(&self, digest: &Digest) -> PathBuf {
        self.root.join(format!("{}.bin", digest.to_hex()))
    }
}

impl BlobStore for DirStore {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<Digest> {
        let d = hash(bytes);
        let p = self.path(&d);
        if !p.exists() {
            std::fs::write(p, bytes)?;
        }
        Ok(d)
    }

    fn get(&self, digest: &Digest) -> std::io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.path(digest)) {
            Ok(b) if hash(&b) == *digest => Ok(Some(b)),
            Ok(_) => Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "blob content does not match its digest",
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn contains(&self, digest: &Digest) -> bool {
        self.path(digest).exists()
    }
}
