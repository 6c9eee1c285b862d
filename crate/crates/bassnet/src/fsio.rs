//! Small filesystem helpers shared by checkpoints and report writers.

use crate::error::Result;
use std::fs;
use std::path::Path;

/// Write a file atomically: the bytes land in a sibling temporary file
/// which is renamed over the target, so readers never observe a partial
/// artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = path.with_file_name(format!(".{}.tmp", file_name));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
