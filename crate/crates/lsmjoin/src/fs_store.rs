//! Directory-backed [`FileStore`] for SST files.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use lsmjoin_core::lsm::{FileStore, MemStore, StoreError};

/// One directory per backend. Files are written to a temporary name, synced
/// and renamed, so a name only ever refers to complete, durable contents.
#[derive(Debug)]
pub struct FsStore {
    dir: PathBuf,
    handles: RefCell<HashMap<String, File>>,
}

fn io_err(e: io::Error) -> StoreError {
    match e.kind() {
        io::ErrorKind::NotFound => StoreError::NotFound,
        io::ErrorKind::UnexpectedEof => StoreError::OutOfRange,
        _ => StoreError::Io(e.to_string()),
    }
}

impl FsStore {
    /// Creates `dir` if needed.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<FsStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(FsStore { dir, handles: RefCell::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Names of the files currently in the directory, sorted.
    pub fn file_names(&self) -> io::Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if !name.ends_with(".tmp") {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    fn with_handle<T>(&self, name: &str, f: impl FnOnce(&mut File) -> io::Result<T>) -> io::Result<T> {
        let mut handles = self.handles.borrow_mut();
        if !handles.contains_key(name) {
            handles.insert(name.to_owned(), File::open(self.dir.join(name))?);
        }
        f(handles.get_mut(name).expect("inserted above"))
    }
}

impl FileStore for FsStore {
    fn write_file(&mut self, name: &str, data: &[u8]) -> Result<(), StoreError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!("{name}.tmp"));
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)?;
            File::open(&self.dir)?.sync_all()
        };
        write().map_err(io_err)
    }

    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>, StoreError> {
        self.with_handle(name, |f| {
            f.seek(SeekFrom::Start(offset))?;
            let mut buf = vec![0u8; len];
            f.read_exact(&mut buf)?;
            Ok(buf)
        })
        .map_err(io_err)
    }

    fn file_len(&self, name: &str) -> Result<u64, StoreError> {
        fs::metadata(self.dir.join(name)).map(|m| m.len()).map_err(io_err)
    }

    fn delete_file(&mut self, name: &str) -> Result<(), StoreError> {
        self.handles.get_mut().remove(name);
        fs::remove_file(self.dir.join(name)).map_err(io_err)
    }
}

/// Either store, so one backend type serves both in-memory and on-disk runs.
#[derive(Debug)]
pub enum AnyStore {
    Mem(MemStore),
    Fs(FsStore),
}

impl FileStore for AnyStore {
    fn write_file(&mut self, name: &str, data: &[u8]) -> Result<(), StoreError> {
        match self {
            AnyStore::Mem(s) => s.write_file(name, data),
            AnyStore::Fs(s) => s.write_file(name, data),
        }
    }

    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>, StoreError> {
        match self {
            AnyStore::Mem(s) => s.read_at(name, offset, len),
            AnyStore::Fs(s) => s.read_at(name, offset, len),
        }
    }

    fn file_len(&self, name: &str) -> Result<u64, StoreError> {
        match self {
            AnyStore::Mem(s) => s.file_len(name),
            AnyStore::Fs(s) => s.file_len(name),
        }
    }

    fn delete_file(&mut self, name: &str) -> Result<(), StoreError> {
        match self {
            AnyStore::Mem(s) => s.delete_file(name),
            AnyStore::Fs(s) => s.delete_file(name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lsmjoin_core::lsm::{BackendConfig, LsmBackend, StoredTuple};
    use lsmjoin_core::JoinKey;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = FsStore::open(dir.path().join("a")).unwrap();
        s.write_file("x", b"hello world").unwrap();
        assert_eq!(s.read_at("x", 6, 5).unwrap(), b"world");
        assert_eq!(s.file_len("x").unwrap(), 11);
        assert_eq!(s.read_at("x", 8, 10), Err(StoreError::OutOfRange));
        assert_eq!(s.read_at("nope", 0, 1), Err(StoreError::NotFound));
        assert_eq!(s.file_names().unwrap(), ["x"]);
        s.delete_file("x").unwrap();
        assert_eq!(s.file_len("x"), Err(StoreError::NotFound));
        assert!(s.file_names().unwrap().is_empty());
    }

    #[test]
    fn backend_files_land_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        let config = BackendConfig { memtable_capacity_entries: 2, ..Default::default() };
        let mut b = LsmBackend::new(config, store).unwrap();
        for seq in 1..=4 {
            b.insert(JoinKey::int(seq as i64 % 2), StoredTuple::new(seq, seq, vec![seq as u8])).unwrap();
            b.flush_all().unwrap();
        }
        assert_eq!(b.store().file_names().unwrap(), ["L0-1.sst", "L0-2.sst"]);
        assert_eq!(b.probe(&JoinKey::int(1), 0).unwrap().len(), 2);
    }
}
