use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("file not found")]
    NotFound,
    #[error("read past end of file")]
    OutOfRange,
    #[error("{0}")]
    Io(String),
}

/// Whole-file storage for SST files.
///
/// `write_file` must only return once the file is durable; the backend
/// relies on that before it deletes the files a compaction replaced.
pub trait FileStore {
    fn write_file(&mut self, name: &str, data: &[u8]) -> Result<(), StoreError>;
    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>, StoreError>;
    fn file_len(&self, name: &str) -> Result<u64, StoreError>;
    fn delete_file(&mut self, name: &str) -> Result<(), StoreError>;
}

/// In-memory file store with optional fault injection for tests.
#[derive(Debug, Default, Clone)]
pub struct MemStore {
    files: BTreeMap<String, Vec<u8>>,
    fail_writes: usize,
    fail_reads: usize,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the next `n` writes fail with an I/O error.
    pub fn fail_next_writes(&mut self, n: usize) {
        self.fail_writes = n;
    }

    /// Makes every read fail while `on` is set.
    pub fn fail_reads(&mut self, on: bool) {
        self.fail_reads = on as usize;
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn contents(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    /// Direct mutable access, for corruption tests.
    pub fn contents_mut(&mut self, name: &str) -> Option<&mut Vec<u8>> {
        self.files.get_mut(name)
    }
}

impl FileStore for MemStore {
    fn write_file(&mut self, name: &str, data: &[u8]) -> Result<(), StoreError> {
        if self.fail_writes > 0 {
            self.fail_writes -= 1;
            return Err(StoreError::Io(String::from("injected write failure")));
        }
        self.files.insert(String::from(name), data.to_vec());
        Ok(())
    }

    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>, StoreError> {
        if self.fail_reads > 0 {
            return Err(StoreError::Io(String::from("injected read failure")));
        }
        let file = self.files.get(name).ok_or(StoreError::NotFound)?;
        let start = usize::try_from(offset).map_err(|_| StoreError::OutOfRange)?;
        let end = start.checked_add(len).ok_or(StoreError::OutOfRange)?;
        file.get(start..end).map(<[u8]>::to_vec).ok_or(StoreError::OutOfRange)
    }

    fn file_len(&self, name: &str) -> Result<u64, StoreError> {
        self.files.get(name).map(|f| f.len() as u64).ok_or(StoreError::NotFound)
    }

    fn delete_file(&mut self, name: &str) -> Result<(), StoreError> {
        self.files.remove(name).map(|_| ()).ok_or(StoreError::NotFound)
    }
}
