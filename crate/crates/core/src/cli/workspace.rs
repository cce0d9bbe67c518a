use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

pub const WORKSPACE_ENV: &str = "SARC_TTS_WORKSPACE";

/// Root directory that relative paths resolve under and that every output
/// must stay inside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

impl Workspace {
    /// `explicit`, else `$SARC_TTS_WORKSPACE`, else the current directory.
    pub fn locate(explicit: Option<&Path>) -> Result<Self> {
        let root = match explicit {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(WORKSPACE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        };
        Self::new(root)
    }

    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let abs = if root.is_absolute() { root } else { std::env::current_dir()?.join(root) };
        Ok(Self { root: normalize(&abs) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input(&self, p: &Path) -> PathBuf {
        normalize(&self.root.join(p))
    }

    pub fn output(&self, p: &Path) -> Result<PathBuf> {
        let abs = self.input(p);
        if abs.starts_with(&self.root) {
            Ok(abs)
        } else {
            Err(Error::InvalidInput(format!(
                "output {} lies outside the workspace {}",
                abs.display(),
                self.root.display()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_confined() {
        let ws = Workspace::new("/w/x").unwrap();
        assert_eq!(ws.input(Path::new("a/./b")), PathBuf::from("/w/x/a/b"));
        assert_eq!(ws.input(Path::new("/abs")), PathBuf::from("/abs"));
        assert!(ws.output(Path::new("runs/../out")).is_ok());
        assert!(ws.output(Path::new("../escape")).is_err());
        assert!(ws.output(Path::new("/tmp/elsewhere")).is_err());
    }
}
