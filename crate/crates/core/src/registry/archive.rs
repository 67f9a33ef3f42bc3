use super::{FileEntry, FileKind, IngestError};
use flate2::read::GzDecoder;
use std::io::{Cursor, Read};
use std::path::{Component, Path};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveFile {
    /// Path relative to the package root, `/`-separated.
    pub path: String,
    pub bytes: Vec<u8>,
}

impl ArchiveFile {
    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.bytes).ok()
    }
}

/// Every regular file of a package archive, sorted by path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchiveContents {
    pub files: Vec<ArchiveFile>,
}

impl ArchiveContents {
    pub fn from_files(mut files: Vec<ArchiveFile>) -> Self {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files.dedup_by(|a, b| a.path == b.path);
        ArchiveContents { files }
    }

    /// Reads an unpacked directory, a `.tgz`/`.tar.gz`/`.tar`, a `.zip`/`.whl`
    /// or a `.gem` (outer tar holding `data.tar.gz`).
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        if path.is_dir() {
            return read_dir(path);
        }
        let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_ascii_lowercase();
        let corrupt = |message: String| IngestError::ArchiveCorrupt { path: path.display().to_string(), message };
        let files = if name.ends_with(".zip") || name.ends_with(".whl") {
            read_zip(&bytes).map_err(corrupt)?
        } else if name.ends_with(".gem") {
            read_gem(&bytes).map_err(corrupt)?
        } else if name.ends_with(".tar") {
            strip_common_root(read_tar(Cursor::new(bytes)).map_err(corrupt)?)
        } else if name.ends_with(".tgz") || name.ends_with(".tar.gz") {
            strip_common_root(read_tar(GzDecoder::new(Cursor::new(bytes))).map_err(corrupt)?)
        } else {
            return Err(corrupt("unrecognized archive format".to_string()));
        };
        Ok(ArchiveContents::from_files(files))
    }

    pub fn get(&self, path: &str) -> Option<&ArchiveFile> {
        self.files.binary_search_by(|f| f.path.as_str().cmp(path)).ok().map(|i| &self.files[i])
    }

    pub fn inventory(&self) -> Vec<FileEntry> {
        self.files.iter().map(|f| classify_bytes(&f.path, &f.bytes)).collect()
    }
}

/// Classifies every regular file of the archive at `path`.
pub fn classify_files(path: &Path) -> Result<Vec<FileEntry>, IngestError> {
    Ok(ArchiveContents::open(path)?.inventory())
}

/// Classification looks only at content, never at the file name.
pub fn classify_bytes(path: &str, bytes: &[u8]) -> FileEntry {
    let head = &bytes[..bytes.len().min(8)];
    let kind = if head.starts_with(&[0x7f, 0x45, 0x4c, 0x46]) {
        FileKind::ElfBinary
    } else if head.starts_with(&[0x4d, 0x5a]) {
        FileKind::PeBinary
    } else if is_native_module(head) {
        FileKind::NativeExt
    } else if looks_like_text(bytes) {
        FileKind::Source
    } else {
        FileKind::Other
    };
    FileEntry { path: path.to_string(), byte_size: bytes.len() as u64, kind, magic_prefix: hex::encode(head) }
}

fn is_native_module(head: &[u8]) -> bool {
    const MAGICS: [[u8; 4]; 5] = [
        [0xfe, 0xed, 0xfa, 0xce],
        [0xfe, 0xed, 0xfa, 0xcf],
        [0xce, 0xfa, 0xed, 0xfe],
        [0xcf, 0xfa, 0xed, 0xfe],
        // WebAssembly module
        [0x00, 0x61, 0x73, 0x6d],
    ];
    MAGICS.iter().any(|m| head.starts_with(m))
}

fn looks_like_text(bytes: &[u8]) -> bool {
    let sample = &bytes[..bytes.len().min(8192)];
    if sample.contains(&0) {
        return false;
    }
    match std::str::from_utf8(sample) {
        Ok(_) => true,
        // A multi-byte character may straddle the sample boundary.
        Err(e) => e.error_len().is_none() && sample.len() == 8192,
    }
}

fn read_dir(root: &Path) -> Result<ArchiveContents, IngestError> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| IngestError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| IngestError::io(&dir, e))?;
            let path = entry.path();
            let ft = entry.file_type().map_err(|e| IngestError::io(&path, e))?;
            if ft.is_dir() {
                stack.push(path);
            } else if ft.is_file() {
                let bytes = std::fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
                let rel = path.strip_prefix(root).expect("walked below root");
                files.push(ArchiveFile { path: slash_path(rel), bytes });
            }
        }
    }
    Ok(ArchiveContents::from_files(files))
}

fn slash_path(p: &Path) -> String {
    p.components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn read_tar<R: Read>(reader: R) -> Result<Vec<ArchiveFile>, String> {
    let mut archive = tar::Archive::new(reader);
    let mut files = Vec::new();
    for entry in archive.entries().map_err(|e| e.to_string())? {
        let mut entry = entry.map_err(|e| e.to_string())?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = slash_path(&entry.path().map_err(|e| e.to_string())?);
        if path.is_empty() {
            continue;
        }
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
        files.push(ArchiveFile { path, bytes });
    }
    Ok(files)
}

fn read_zip(bytes: &[u8]) -> Result<Vec<ArchiveFile>, String> {
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for i in 0..zip.len() {
        let mut file = zip.by_index(i).map_err(|e| e.to_string())?;
        if !file.is_file() {
            continue;
        }
        let Some(path) = file.enclosed_name() else { continue };
        let path = slash_path(&path);
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|e| e.to_string())?;
        files.push(ArchiveFile { path, bytes: buf });
    }
    Ok(files)
}

fn read_gem(bytes: &[u8]) -> Result<Vec<ArchiveFile>, String> {
    let outer = read_tar(Cursor::new(bytes))?;
    let mut files = Vec::new();
    let mut saw_data = false;
    for f in outer {
        match f.path.as_str() {
            "data.tar.gz" => {
                saw_data = true;
                files.extend(read_tar(GzDecoder::new(Cursor::new(f.bytes)))?);
            }
            "metadata.gz" => {
                let mut yaml = Vec::new();
                GzDecoder::new(Cursor::new(f.bytes)).read_to_end(&mut yaml).map_err(|e| e.to_string())?;
                files.push(ArchiveFile { path: "metadata".to_string(), bytes: yaml });
            }
            _ => {}
        }
    }
    if !saw_data {
        return Err("gem has no data.tar.gz".to_string());
    }
    Ok(files)
}

/// npm tarballs nest everything under `package/`, sdists under `name-version/`.
fn strip_common_root(files: Vec<ArchiveFile>) -> Vec<ArchiveFile> {
    let first = match files.first().and_then(|f| f.path.split_once('/')) {
        Some((root, _)) => root.to_string(),
        None => return files,
    };
    let prefix = format!("{first}/");
    if files.iter().all(|f| f.path.starts_with(&prefix)) {
        files.into_iter().map(|f| ArchiveFile { path: f.path[prefix.len()..].to_string(), bytes: f.bytes }).collect()
    } else {
        files
    }
}
