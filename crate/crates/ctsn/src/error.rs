use std::path::{Path, PathBuf};

/// Failures while reading, writing or running the pipeline from files.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed text at a known line (1-based).
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    /// Well-formed file whose content violates the expected schema.
    #[error("{}: {msg}", path.display())]
    Schema { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] ctsn_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Attaches `path` to a core validation error raised while building from a file.
pub(crate) fn in_file(path: &Path) -> impl FnOnce(ctsn_core::Error) -> Error + '_ {
    move |e| match e {
        ctsn_core::Error::Validation(msg) => Error::schema(path, msg),
        other => Error::Core(other),
    }
}
