//! Canonical-path containment for everything a tool touches.
//!
//! A path is resolved by taking its longest existing prefix, canonicalizing
//! that prefix (so symlinks are followed to their real target), checking the
//! result lies under the jail root, and appending the not-yet-existing tail,
//! which may only consist of plain name components. Violations are rejected,
//! never remapped.

use std::ffi::OsStr;
use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum JailError {
    #[error("path `{0}` is outside the sandbox")]
    Escape(String),
    #[error("invalid path `{0}`")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl JailError {
    fn io(path: &Path, source: io::Error) -> JailError {
        JailError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone)]
pub struct Jail {
    root: PathBuf,
}

impl Jail {
    /// Create a jail at an existing directory.
    pub fn new(root: impl AsRef<Path>) -> io::Result<Jail> {
        let root = root.as_ref().canonicalize()?;
        if !root.is_dir() {
            return Err(io::Error::new(io::ErrorKind::NotADirectory, "jail root is not a directory"));
        }
        Ok(Jail { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contains(&self, canonical: &Path) -> bool {
        canonical.starts_with(&self.root)
    }

    /// Resolve a user-supplied path (absolute, or relative to the root).
    /// The target need not exist.
    pub fn resolve(&self, raw: &str) -> Result<PathBuf, JailError> {
        if raw.is_empty() || raw.contains('\0') {
            return Err(JailError::Invalid(raw.escape_debug().to_string()));
        }
        let given = Path::new(raw);
        let candidate = if given.is_absolute() { given.to_path_buf() } else { self.root.join(given) };

        // Longest existing prefix. symlink_metadata so a dangling symlink
        // counts as existing and gets canonicalized (and rejected) below.
        let comps: Vec<Component> = candidate.components().collect();
        let mut split = comps.len();
        loop {
            let prefix: PathBuf = comps[..split].iter().collect();
            if prefix.symlink_metadata().is_ok() {
                break;
            }
            if split == 0 {
                return Err(JailError::Escape(raw.to_string()));
            }
            split -= 1;
        }
        let prefix: PathBuf = comps[..split].iter().collect();
        let base = prefix.canonicalize().map_err(|_| JailError::Escape(raw.to_string()))?;
        if !self.contains(&base) {
            return Err(JailError::Escape(raw.to_string()));
        }
        let mut out = base;
        for c in &comps[split..] {
            match c {
                Component::Normal(name) => out.push(name),
                Component::CurDir => {}
                _ => return Err(JailError::Escape(raw.to_string())),
            }
        }
        Ok(out)
    }

    /// Resolve a path that must already exist.
    pub fn resolve_existing(&self, raw: &str) -> Result<PathBuf, JailError> {
        let p = self.resolve(raw)?;
        if p.symlink_metadata().is_err() {
            return Err(JailError::io(&p, io::Error::from(io::ErrorKind::NotFound)));
        }
        Ok(p)
    }

    /// Open an existing file for reading, refusing a final-component symlink.
    pub fn open_read(&self, raw: &str) -> Result<File, JailError> {
        let p = self.resolve_existing(raw)?;
        OpenOptions::new()
            .read(true)
            .custom_flags(libc::O_NOFOLLOW)
            .open(&p)
            .map_err(|e| JailError::io(&p, e))
    }

    /// Create or truncate a file. The parent directory must already exist.
    pub fn open_write(&self, raw: &str) -> Result<(File, PathBuf), JailError> {
        let p = self.resolve(raw)?;
        if p == self.root {
            return Err(JailError::Invalid(raw.to_string()));
        }
        let parent = p.parent().unwrap_or(&self.root);
        if !parent.is_dir() {
            return Err(JailError::io(
                &p,
                io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist"),
            ));
        }
        let f = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .custom_flags(libc::O_NOFOLLOW)
            .open(&p)
            .map_err(|e| JailError::io(&p, e))?;
        Ok((f, p))
    }

    /// `mkdir -p` inside the jail.
    pub fn create_dir_all(&self, raw: &str) -> Result<PathBuf, JailError> {
        let p = self.resolve(raw)?;
        std::fs::create_dir_all(&p).map_err(|e| JailError::io(&p, e))?;
        // A concurrent symlink swap could have redirected creation; re-check.
        let canon = p.canonicalize().map_err(|e| JailError::io(&p, e))?;
        if !self.contains(&canon) {
            return Err(JailError::Escape(raw.to_string()));
        }
        Ok(p)
    }

    /// Display form of a resolved path, relative to the root.
    pub fn display(&self, p: &Path) -> String {
        match p.strip_prefix(&self.root) {
            Ok(rel) if rel.as_os_str().is_empty() => ".".into(),
            Ok(rel) => rel.display().to_string(),
            Err(_) => p.display().to_string(),
        }
    }
}

/// True when `name` is a single plain path component.
pub fn is_plain_name(name: &OsStr) -> bool {
    let mut comps = Path::new(name).components();
    matches!((comps.next(), comps.next()), (Some(Component::Normal(_)), None))
}
