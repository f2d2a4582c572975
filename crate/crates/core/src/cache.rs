//! On-disk store for compiled module artifacts.
//!
//! Layout is a flat directory of `<engine_tag>-<checksum>-<variant>.obj`
//! files. Every file starts with a magic tag and the sha256 of its payload,
//! so a torn or truncated file is detected on read and dropped.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

const MAGIC: &[u8; 8] = b"MULLWOB1";
const HEADER_LEN: usize = MAGIC.len() + 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    Mutant(String),
}

impl Variant {
    pub fn as_str(&self) -> &str {
        match self {
            Variant::Original => "original",
            Variant::Mutant(mp_id) => mp_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    /// Checksum of the original (unmutated, uninstrumented) module bytes.
    pub checksum: String,
    pub variant: Variant,
}

impl CacheKey {
    pub fn original(checksum: impl Into<String>) -> Self {
        CacheKey {
            checksum: checksum.into(),
            variant: Variant::Original,
        }
    }

    pub fn mutant(checksum: impl Into<String>, mp_id: impl Into<String>) -> Self {
        CacheKey {
            checksum: checksum.into(),
            variant: Variant::Mutant(mp_id.into()),
        }
    }

    pub fn file_name(&self, engine_tag: &str) -> String {
        format!(
            "{engine_tag}-{}-{}.obj",
            self.checksum,
            sanitize_variant(self.variant.as_str())
        )
    }
}

/// Non-alphanumerics become `_`; the 8-hex suffix keeps the mapping
/// injective for variants that differ only in replaced characters.
pub fn sanitize_variant(variant: &str) -> String {
    let cleaned: String = variant
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let digest = Sha256::digest(variant.as_bytes());
    format!("{cleaned}_{}", &hex::encode(digest)[..8])
}

#[derive(Debug, Clone)]
pub struct ArtifactCache {
    dir: PathBuf,
    engine_tag: String,
}

impl ArtifactCache {
    pub fn open(dir: impl Into<PathBuf>, engine_tag: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactCache {
            dir,
            engine_tag: engine_tag.into(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn engine_tag(&self) -> &str {
        &self.engine_tag
    }

    pub fn path_of(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.file_name(&self.engine_tag))
    }

    /// Payload of a well-formed entry. Corrupt entries are removed.
    pub fn get(&self, key: &CacheKey) -> Option<Vec<u8>> {
        let path = self.path_of(key);
        let data = match fs::read(&path) {
            Ok(data) => data,
            Err(e) => {
                if e.kind() != io::ErrorKind::NotFound {
                    log::warn!("cache read {}: {e}", path.display());
                }
                return None;
            }
        };
        match unframe(&data) {
            Some(payload) => Some(payload.to_vec()),
            None => {
                log::warn!("cache entry {} is corrupt; removing", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Atomic write. Failures are logged and swallowed.
    pub fn put(&self, key: &CacheKey, payload: &[u8]) {
        if let Err(e) = self.try_put(key, payload) {
            log::warn!("cache write {}: {e}", self.path_of(key).display());
        }
    }

    pub fn try_put(&self, key: &CacheKey, payload: &[u8]) -> io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(MAGIC)?;
        tmp.write_all(&Sha256::digest(payload))?;
        tmp.write_all(payload)?;
        tmp.as_file().sync_data()?;
        tmp.persist(self.path_of(key)).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn invalidate(&self, key: &CacheKey) {
        let _ = fs::remove_file(self.path_of(key));
    }

    /// Names of all entries currently in the directory.
    pub fn entries(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(".obj") {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }
}

fn unframe(data: &[u8]) -> Option<&[u8]> {
    if data.len() < HEADER_LEN || &data[..MAGIC.len()] != MAGIC {
        return None;
    }
    let (digest, payload) = data[MAGIC.len()..].split_at(32);
    (Sha256::digest(payload).as_slice() == digest).then_some(payload)
}
