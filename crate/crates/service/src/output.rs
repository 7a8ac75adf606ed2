//! All-or-nothing output files.
//!
//! Every file is written to a temporary sibling first. Nothing appears at
//! the destination until [`OutputSet::commit`]; dropping the set removes the
//! temporaries.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

#[derive(Default)]
pub struct OutputSet {
    pending: Vec<(NamedTempFile, PathBuf)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stages `path`, filled in by `fill`.
    pub fn write<E, F>(&mut self, path: &Path, fill: F) -> Result<(), E>
    where
        E: From<std::io::Error>,
        F: FnOnce(&mut dyn Write) -> Result<(), E>,
    {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir)?;
        let mut tmp = NamedTempFile::new_in(&dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush()?;
        }
        self.pending.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        self.write(path, |w| w.write_all(bytes))
    }

    /// Moves every staged file into place.
    pub fn commit(self) -> std::io::Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.pending.len());
        for (tmp, dest) in self.pending {
            tmp.persist(&dest).map_err(|e| e.error)?;
            done.push(dest);
        }
        Ok(done)
    }
}
