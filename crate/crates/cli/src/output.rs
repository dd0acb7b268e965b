//! Atomic output: everything is written into a temporary sibling and
//! renamed into place, so a failed command never leaves partial files.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes a file atomically.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut builder = tempfile::Builder::new();
    builder.prefix(".smartbed-");
    // Temporary files default to owner-only; outputs are ordinary files.
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let mut tmp = builder
        .tempfile_in(&dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.as_file().sync_all())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Fills a temporary sibling directory with `fill`, then swaps it in for
/// `path` (replacing any previous directory there).
pub fn write_dir(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = parent_of(path);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::Builder::new()
        .prefix(".smartbed-")
        .tempdir_in(&dir)
        .with_context(|| format!("creating a temporary directory in {}", dir.display()))?;
    fill(tmp.path())?;
    if path.exists() {
        if !path.is_dir() {
            anyhow::bail!("{} exists and is not a directory", path.display());
        }
        std::fs::remove_dir_all(path).with_context(|| format!("replacing {}", path.display()))?;
    }
    let staged = tmp.keep();
    std::fs::rename(&staged, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_dir_are_replaced_whole() {
        let root = tempfile::tempdir().unwrap();
        let f = root.path().join("a/b.txt");
        write_file(&f, b"one").unwrap();
        write_file(&f, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&f).unwrap(), "two");

        let d = root.path().join("out");
        write_dir(&d, |p| Ok(std::fs::write(p.join("x"), "1")?)).unwrap();
        write_dir(&d, |p| Ok(std::fs::write(p.join("y"), "2")?)).unwrap();
        assert!(!d.join("x").exists() && d.join("y").exists());

        let err = write_dir(&root.path().join("bad"), |_| anyhow::bail!("boom"));
        assert!(err.is_err());
        assert!(!root.path().join("bad").exists());
        let leftovers: Vec<_> = std::fs::read_dir(root.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".smartbed-"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
