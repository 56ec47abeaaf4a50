//! Config loading and all-or-nothing output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use tempfile::NamedTempFile;

use crate::{io_err, CliError, CliResult};

pub fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A temporary file in the destination directory, renamed over the
/// destination only by [`commit`](Self::commit). Dropping it uncommitted
/// removes it.
pub struct AtomicFile {
    tmp: NamedTempFile,
    dest: PathBuf,
}

impl AtomicFile {
    pub fn create(dest: &Path) -> CliResult<Self> {
        let dir = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
        })
    }

    pub fn writer(&self) -> BufWriter<&File> {
        BufWriter::new(self.tmp.as_file())
    }

    pub fn commit(self) -> CliResult {
        self.tmp.as_file().sync_all().map_err(io_err(&self.dest))?;
        self.tmp
            .persist(&self.dest)
            .map(|_| ())
            .map_err(|e| io_err(&self.dest)(e.error))
    }
}

pub fn write_atomic(dest: &Path, bytes: &[u8]) -> CliResult {
    let file = AtomicFile::create(dest)?;
    {
        let mut w = file.writer();
        w.write_all(bytes).map_err(io_err(dest))?;
        w.flush().map_err(io_err(dest))?;
    }
    file.commit()
}
