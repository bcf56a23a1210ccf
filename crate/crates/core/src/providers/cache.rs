//! Content-addressed embedding cache.
//!
//! Layout: `<dir>/<xx>.jsonl` where `xx` is the first digest byte in hex,
//! one record per line: `{"key":hex,"model":string,"dim":int,"v":[...]}`.
//! Floats are written in shortest round-trip form, so a vector read back is
//! bit-identical to the one written. Unparseable lines are moved to
//! `<xx>.jsonl.quarantine` and treated as misses.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub digest: [u8; 32],
}

impl CacheKey {
    /// SHA-256 of `model_id`, a zero byte, then the UTF-8 text.
    pub fn new(model_id: &str, text: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(model_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        Self {
            digest: hasher.finalize().into(),
        }
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }

    fn shard(&self) -> usize {
        self.digest[0] as usize
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    model: String,
    dim: usize,
    v: Vec<f64>,
}

type Shard = HashMap<[u8; 32], EmbeddingVector>;

pub struct EmbeddingCache {
    dir: PathBuf,
    shards: Vec<Mutex<Option<Shard>>>,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache").field("dir", &self.dir).finish()
    }
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            shards: (0..256).map(|_| Mutex::new(None)).collect(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn shard_path(&self, shard: usize) -> PathBuf {
        self.dir.join(format!("{shard:02x}.jsonl"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<EmbeddingVector>> {
        let mut guard = self.shards[key.shard()].lock().expect("cache shard poisoned");
        let shard = self.loaded(&mut guard, key.shard())?;
        Ok(shard.get(&key.digest).cloned())
    }

    pub fn put(&self, key: &CacheKey, v: &EmbeddingVector) -> Result<()> {
        let mut guard = self.shards[key.shard()].lock().expect("cache shard poisoned");
        let shard = self.loaded(&mut guard, key.shard())?;
        if shard.contains_key(&key.digest) {
            return Ok(());
        }
        let record = Record {
            key: key.hex(),
            model: v.model_id.clone(),
            dim: v.dim,
            v: v.values.clone(),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let path = self.shard_path(key.shard());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        let written = file.write_all(line.as_bytes());
        file.unlock().map_err(|e| Error::io(&path, e))?;
        written.map_err(|e| Error::io(&path, e))?;
        shard.insert(key.digest, v.clone());
        Ok(())
    }

    fn loaded<'a>(&self, slot: &'a mut Option<Shard>, shard: usize) -> Result<&'a mut Shard> {
        if slot.is_none() {
            *slot = Some(self.read_shard(shard)?);
        }
        Ok(slot.as_mut().expect("shard just loaded"))
    }

    fn read_shard(&self, shard: usize) -> Result<Shard> {
        let path = self.shard_path(shard);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Shard::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut entries = Shard::new();
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            match parse_record(line) {
                Some((digest, v)) => {
                    entries.entry(digest).or_insert(v);
                    good.push(line);
                }
                None => bad.push(line),
            }
        }
        if !bad.is_empty() {
            log::warn!(
                "cache shard {}: {} corrupt record(s) quarantined",
                path.display(),
                bad.len()
            );
            self.quarantine(&path, &good, &bad)?;
        }
        Ok(entries)
    }

    fn quarantine(&self, path: &Path, good: &[&str], bad: &[&str]) -> Result<()> {
        let side = path.with_extension("jsonl.quarantine");
        let mut q = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&side)
            .map_err(|e| Error::io(&side, e))?;
        for line in bad {
            writeln!(q, "{line}").map_err(|e| Error::io(&side, e))?;
        }
        let file = File::options().write(true).open(path).map_err(|e| Error::io(path, e))?;
        file.lock().map_err(|e| Error::io(path, e))?;
        let mut body = good.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        let result = fs::write(path, body);
        file.unlock().map_err(|e| Error::io(path, e))?;
        result.map_err(|e| Error::io(path, e))
    }
}

fn parse_record(line: &str) -> Option<([u8; 32], EmbeddingVector)> {
    let record: Record = serde_json::from_str(line).ok()?;
    let digest: [u8; 32] = hex::decode(&record.key).ok()?.try_into().ok()?;
    if record.dim == 0 || record.v.len() != record.dim || record.v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let norm = crate::numerics::l2_norm(&record.v);
    Some((
        digest,
        EmbeddingVector {
            model_id: record.model,
            dim: record.dim,
            normalized: (norm - 1.0).abs() <= 1e-6,
            values: record.v,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector {
            model_id: "m".into(),
            dim: values.len(),
            values,
            normalized: false,
        }
    }

    #[test]
    fn key_depends_on_model_and_text() {
        assert_eq!(CacheKey::new("m", "t"), CacheKey::new("m", "t"));
        assert_ne!(CacheKey::new("m", "t"), CacheKey::new("m2", "t"));
        // The separator keeps ("ab", "c") and ("a", "bc") apart.
        assert_ne!(CacheKey::new("ab", "c"), CacheKey::new("a", "bc"));
        assert_eq!(CacheKey::new("m", "t").hex().len(), 64);
    }

    #[test]
    fn put_get_exact_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let awkward = vec![0.1 + 0.2, 1.0 / 3.0, -2.0f64.sqrt(), 5e-324, 1.7976931348623157e308, -0.0];
        let key = CacheKey::new("m", "hello");
        {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            assert!(cache.get(&CacheKey::new("m", "unknown")).unwrap().is_none());
            cache.put(&key, &vector(awkward.clone())).unwrap();
            let back = cache.get(&key).unwrap().unwrap();
            assert_eq!(back.values, awkward);
        }
        let reopened = EmbeddingCache::open(dir.path()).unwrap();
        let back = reopened.get(&key).unwrap().unwrap();
        for (a, b) in back.values.iter().zip(&awkward) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_lines_are_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("m", "good");
        {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            cache.put(&key, &vector(vec![1.0, 2.0])).unwrap();
        }
        let shard = dir.path().join(format!("{:02x}.jsonl", key.digest[0]));
        let mut body = fs::read_to_string(&shard).unwrap();
        body.push_str("{\"key\":\"zz\",\"model\":\"m\"\n");
        body.push_str(&format!(
            "{{\"key\":\"{}\",\"model\":\"m\",\"dim\":3,\"v\":[1.0]}}\n",
            CacheKey::new("m", "other").hex()
        ));
        fs::write(&shard, body).unwrap();

        let cache = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&key).unwrap().unwrap().values, vec![1.0, 2.0]);
        let side = fs::read_to_string(shard.with_extension("jsonl.quarantine")).unwrap();
        assert_eq!(side.lines().count(), 2);
        assert_eq!(fs::read_to_string(&shard).unwrap().lines().count(), 1);
    }
}
