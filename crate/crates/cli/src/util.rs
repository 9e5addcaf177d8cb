//! Shared plumbing: atomic file writes and the bounded worker pool.

use crate::CliError;
use blindsr::tensor::ImageTensor;
use std::io::Write;
use std::path::Path;

/// Number of logical cores, used when `--jobs` is absent.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1)
}

/// Builds a worker pool with exactly `jobs` threads.
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

fn parent_dir(path: &Path) -> Result<&Path, CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    })
}

/// Writes bytes to a temporary file in the target directory and renames it
/// into place, so readers never observe a partially written artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = parent_dir(path)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Atomic variant of the PNG writer (encode to a `.png` temp file, rename).
pub fn write_png_atomic(path: &Path, x: &ImageTensor) -> Result<(), CliError> {
    let dir = parent_dir(path)?;
    let tmp = tempfile::Builder::new()
        .suffix(".png")
        .tempfile_in(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create temp file in {}: {e}", dir.display())))?
        .into_temp_path();
    blindsr::io::write_png(&tmp, x)?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}
