//! Small filesystem helpers.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::error::KvrcError;

/// Writes `bytes` via a temp file in the same directory, fsyncs, then
/// renames into place. Creates parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), KvrcError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(KvrcError::io(parent))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(KvrcError::io(&tmp))?;
    file.write_all(bytes).map_err(KvrcError::io(&tmp))?;
    file.sync_all().map_err(KvrcError::io(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(KvrcError::io(path))?;
    Ok(())
}
