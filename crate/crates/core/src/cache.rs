//! Content-addressed store for analyzer reports.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/objects/<d0d1>/<digest>.json   "<sha256 of payload>\n" followed by the payload
//! <root>/index.jsonl                    one {"digest", "key", "size"} row per stored key
//! ```
//!
//! `digest` is the SHA-256 of the canonical JSON encoding of the
//! [`CacheKey`]. Objects are written to a temporary file and renamed into
//! place. An object whose checksum does not match its payload is reported
//! as `CORRUPT_ENTRY` and treated as a miss.

use crate::registry::PackageCoordinate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnalyzerKind {
    Metadata,
    Static,
    Dynamic,
}

impl AnalyzerKind {
    pub const ALL: [AnalyzerKind; 3] = [AnalyzerKind::Metadata, AnalyzerKind::Static, AnalyzerKind::Dynamic];

    pub fn as_str(self) -> &'static str {
        match self {
            AnalyzerKind::Metadata => "METADATA",
            AnalyzerKind::Static => "STATIC",
            AnalyzerKind::Dynamic => "DYNAMIC",
        }
    }
}

impl fmt::Display for AnalyzerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AnalyzerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "metadata" => Ok(AnalyzerKind::Metadata),
            "s" | "static" => Ok(AnalyzerKind::Static),
            "d" | "dynamic" => Ok(AnalyzerKind::Dynamic),
            _ => Err(format!("unknown analyzer `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub coordinate: PackageCoordinate,
    pub analyzer: AnalyzerKind,
    pub analyzer_version: String,
    /// Hash of every input of the analyzer other than the package itself.
    pub config_digest: String,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("keys serialize"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Incremental digest over named parts; each part is length-prefixed so
/// boundaries cannot shift.
#[derive(Clone, Default)]
pub struct DigestBuilder {
    hasher: Sha256,
}

impl DigestBuilder {
    pub fn new() -> DigestBuilder {
        DigestBuilder::default()
    }

    pub fn bytes(mut self, name: &str, bytes: &[u8]) -> DigestBuilder {
        for part in [name.as_bytes(), bytes] {
            self.hasher.update((part.len() as u64).to_le_bytes());
            self.hasher.update(part);
        }
        self
    }

    /// Adds the canonical JSON encoding of `value`. Maps must be ordered
    /// (`BTreeMap`) for the encoding to be canonical.
    pub fn json<T: Serialize + ?Sized>(self, name: &str, value: &T) -> DigestBuilder {
        let bytes = serde_json::to_vec(value).expect("digest inputs serialize");
        self.bytes(name, &bytes)
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("IO_ERROR: {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CORRUPT_ENTRY: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRef {
    pub digest: String,
    pub key: CacheKey,
    pub size: u64,
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
    pub corrupt: AtomicUsize,
    pub writes: AtomicUsize,
}

impl CacheStats {
    pub fn snapshot(&self) -> (usize, usize, usize, usize) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
            self.corrupt.load(Ordering::Relaxed),
            self.writes.load(Ordering::Relaxed),
        )
    }
}

pub struct ReportCache {
    root: PathBuf,
    index: Mutex<BTreeMap<String, StoredRef>>,
    pub stats: CacheStats,
}

const INDEX: &str = "index.jsonl";

impl ReportCache {
    pub fn open(root: impl AsRef<Path>) -> Result<ReportCache, CacheError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("objects")).map_err(io_err(&root))?;
        let index = read_index(&root.join(INDEX))?;
        Ok(ReportCache { root, index: Mutex::new(index), stats: CacheStats::default() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, digest: &str) -> PathBuf {
        self.root.join("objects").join(&digest[..2]).join(format!("{digest}.json"))
    }

    /// Stores `payload` under `key`. Storing an identical payload again is
    /// a no-op.
    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<StoredRef, CacheError> {
        let digest = key.digest();
        let path = self.object_path(&digest);
        let sum = sha256_hex(payload);
        let stored = StoredRef { digest: digest.clone(), key: key.clone(), size: payload.len() as u64 };
        let unchanged = std::fs::read(&path).ok().is_some_and(|b| split_object(&b).is_some_and(|(s, p)| s == sum && p == payload));
        if !unchanged {
            let dir = path.parent().expect("object paths have a parent");
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
            tmp.write_all(sum.as_bytes()).and_then(|_| tmp.write_all(b"\n")).and_then(|_| tmp.write_all(payload)).map_err(io_err(&path))?;
            tmp.persist(&path).map_err(|e| CacheError::Io { path: path.display().to_string(), source: e.error })?;
            self.stats.writes.fetch_add(1, Ordering::Relaxed);
        }
        let mut index = self.index.lock().expect("cache index lock");
        if index.get(&digest) != Some(&stored) {
            append_index(&self.root.join(INDEX), &stored)?;
            index.insert(digest, stored.clone());
        }
        Ok(stored)
    }

    /// Payload stored under `key`, or `None` on a miss or a corrupt entry.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, CacheError> {
        let digest = key.digest();
        let path = self.object_path(&digest);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.stats.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        match split_object(&bytes) {
            Some((sum, payload)) if sha256_hex(payload) == sum => {
                self.stats.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Some(payload.to_vec()))
            }
            _ => {
                tracing::warn!(%digest, coordinate = %key.coordinate, analyzer = %key.analyzer, "CORRUPT_ENTRY: checksum mismatch; treating as miss");
                self.stats.corrupt.fetch_add(1, Ordering::Relaxed);
                self.stats.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    pub fn put_json<T: Serialize>(&self, key: &CacheKey, value: &T) -> Result<StoredRef, CacheError> {
        self.put(key, &serde_json::to_vec(value).expect("reports serialize"))
    }

    /// Typed lookup; an undecodable payload counts as corrupt.
    pub fn get_json<T: DeserializeOwned>(&self, key: &CacheKey) -> Result<Option<T>, CacheError> {
        let Some(bytes) = self.get(key)? else { return Ok(None) };
        match serde_json::from_slice(&bytes) {
            Ok(v) => Ok(Some(v)),
            Err(err) => {
                tracing::warn!(%err, coordinate = %key.coordinate, "CORRUPT_ENTRY: undecodable payload; treating as miss");
                self.stats.corrupt.fetch_add(1, Ordering::Relaxed);
                self.stats.hits.fetch_sub(1, Ordering::Relaxed);
                self.stats.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    pub fn entries(&self) -> Vec<StoredRef> {
        self.index.lock().expect("cache index lock").values().cloned().collect()
    }

    /// Removes every entry whose key satisfies `pred`; returns how many.
    pub fn invalidate(&self, pred: impl Fn(&CacheKey) -> bool) -> Result<usize, CacheError> {
        let mut index = self.index.lock().expect("cache index lock");
        let doomed: Vec<String> = index.values().filter(|r| pred(&r.key)).map(|r| r.digest.clone()).collect();
        for d in &doomed {
            let path = self.object_path(d);
            match std::fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(io_err(&path)(e)),
            }
            index.remove(d);
        }
        if !doomed.is_empty() {
            write_index(&self.root.join(INDEX), index.values())?;
        }
        Ok(doomed.len())
    }

    /// Writes the whole store as a gzipped tar archive.
    pub fn export(&self, out: &Path) -> Result<(), CacheError> {
        let file = std::fs::File::create(out).map_err(io_err(out))?;
        let enc = flate2::write::GzEncoder::new(file, flate2::Compression::default());
        let mut tar = tar::Builder::new(enc);
        tar.mode(tar::HeaderMode::Deterministic);
        let index = self.index.lock().expect("cache index lock");
        let append = |tar: &mut tar::Builder<_>, name: &str, bytes: &[u8]| -> Result<(), CacheError> {
            let mut h = tar::Header::new_gnu();
            h.set_size(bytes.len() as u64);
            h.set_mode(0o644);
            h.set_mtime(0);
            h.set_cksum();
            tar.append_data(&mut h, name, bytes).map_err(io_err(out))
        };
        let mut idx = Vec::new();
        for r in index.values() {
            let rel = format!("objects/{}/{}.json", &r.digest[..2], r.digest);
            let bytes = std::fs::read(self.root.join(&rel)).map_err(io_err(&self.root.join(&rel)))?;
            append(&mut tar, &rel, &bytes)?;
            idx.extend(serde_json::to_vec(r).expect("index rows serialize"));
            idx.push(b'\n');
        }
        append(&mut tar, INDEX, &idx)?;
        tar.into_inner().and_then(|enc| enc.finish()).map_err(io_err(out))?;
        Ok(())
    }

    /// Loads entries from an archive written by [`ReportCache::export`].
    /// Entries failing their checksum are skipped. Returns how many were
    /// imported.
    pub fn import(&self, archive: &Path) -> Result<usize, CacheError> {
        let file = std::fs::File::open(archive).map_err(io_err(archive))?;
        let mut tar = tar::Archive::new(flate2::read::GzDecoder::new(file));
        let mut objects: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut rows = Vec::new();
        for entry in tar.entries().map_err(io_err(archive))? {
            let mut entry = entry.map_err(io_err(archive))?;
            let name = entry.path().map_err(io_err(archive))?.to_string_lossy().into_owned();
            let mut bytes = Vec::new();
            std::io::Read::read_to_end(&mut entry, &mut bytes).map_err(io_err(archive))?;
            if name == INDEX {
                rows = parse_index(&bytes, archive)?;
            } else if let Some(stem) = name.strip_prefix("objects/").and_then(|n| n.rsplit('/').next()).and_then(|n| n.strip_suffix(".json")) {
                objects.insert(stem.to_string(), bytes);
            }
        }
        let mut n = 0;
        for row in rows {
            let Some(bytes) = objects.get(&row.digest) else { continue };
            match split_object(bytes) {
                Some((sum, payload)) if sha256_hex(payload) == sum && row.key.digest() == row.digest => {
                    self.put(&row.key, payload)?;
                    n += 1;
                }
                _ => tracing::warn!(digest = %row.digest, "CORRUPT_ENTRY in archive; skipped"),
            }
        }
        Ok(n)
    }
}

fn split_object(bytes: &[u8]) -> Option<(&str, &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((std::str::from_utf8(&bytes[..nl]).ok()?, &bytes[nl + 1..]))
}

fn parse_index(bytes: &[u8], origin: &Path) -> Result<Vec<StoredRef>, CacheError> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => tracing::warn!(index = %origin.display(), error = %e, "skipping unreadable index row"),
        }
    }
    Ok(out)
}

fn read_index(path: &Path) -> Result<BTreeMap<String, StoredRef>, CacheError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(parse_index(&bytes, path)?.into_iter().map(|r| (r.digest.clone(), r)).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn append_index(path: &Path, row: &StoredRef) -> Result<(), CacheError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut line = serde_json::to_vec(row).expect("index rows serialize");
    line.push(b'\n');
    f.write_all(&line).map_err(io_err(path))
}

fn write_index<'a>(path: &Path, rows: impl Iterator<Item = &'a StoredRef>) -> Result<(), CacheError> {
    let dir = path.parent().expect("index has a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    for r in rows {
        let mut line = serde_json::to_vec(r).expect("index rows serialize");
        line.push(b'\n');
        tmp.write_all(&line).map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| CacheError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(analyzer: AnalyzerKind, digest: &str) -> CacheKey {
        CacheKey {
            coordinate: "npm/left-pad@1.3.0".parse().unwrap(),
            analyzer,
            analyzer_version: "1.0.0".into(),
            config_digest: digest.into(),
        }
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let k = key(AnalyzerKind::Static, "abc");
        assert_eq!(cache.get(&k).unwrap(), None);
        let stored = cache.put(&k, b"{\"x\":1}").unwrap();
        cache.put(&k, b"{\"x\":1}").unwrap();
        assert_eq!(cache.stats.writes.load(Ordering::Relaxed), 1);
        assert_eq!(cache.get(&k).unwrap().as_deref(), Some(&b"{\"x\":1}"[..]));
        assert_eq!(cache.get(&key(AnalyzerKind::Static, "abd")).unwrap(), None);

        let reopened = ReportCache::open(dir.path()).unwrap();
        assert_eq!(reopened.entries(), vec![stored.clone()]);

        let path = cache.object_path(&stored.digest);
        let mut bytes = std::fs::read(&path).unwrap();
        *bytes.last_mut().unwrap() = b'2';
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(cache.get(&k).unwrap(), None);
        assert_eq!(cache.stats.corrupt.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn invalidate_export_import() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path().join("a")).unwrap();
        for a in AnalyzerKind::ALL {
            cache.put(&key(a, "d"), a.as_str().as_bytes()).unwrap();
        }
        let archive = dir.path().join("cache.tgz");
        cache.export(&archive).unwrap();
        assert_eq!(cache.invalidate(|k| k.analyzer == AnalyzerKind::Static).unwrap(), 1);
        assert_eq!(cache.get(&key(AnalyzerKind::Static, "d")).unwrap(), None);
        assert_eq!(ReportCache::open(dir.path().join("a")).unwrap().entries().len(), 2);

        let other = ReportCache::open(dir.path().join("b")).unwrap();
        assert_eq!(other.import(&archive).unwrap(), 3);
        assert_eq!(other.get(&key(AnalyzerKind::Static, "d")).unwrap().as_deref(), Some(&b"STATIC"[..]));
    }

    #[test]
    fn digest_parts_are_delimited() {
        let a = DigestBuilder::new().bytes("x", b"ab").bytes("y", b"c").finish();
        let b = DigestBuilder::new().bytes("x", b"a").bytes("y", b"bc").finish();
        assert_ne!(a, b);
        assert_eq!(a, DigestBuilder::new().bytes("x", b"ab").bytes("y", b"c").finish());
    }
}
