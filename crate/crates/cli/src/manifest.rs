use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grembed_core::Split;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class: String,
    pub split: Split,
}

/// One image per line: `path<TAB>class<TAB>split`. Blank lines and `#`
/// comments are ignored, except a `# dataset <name>` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dataset: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ManifestError> {
        let mut dataset = String::new();
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end_matches('\r');
            if let Some(comment) = trimmed.trim_start().strip_prefix('#') {
                if let Some(name) = comment.trim().strip_prefix("dataset ") {
                    dataset = name.trim().to_string();
                }
                continue;
            }
            if trimmed.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(ManifestError::Parse { line, message: format!("expected 3 tab-separated fields, found {}", fields.len()) });
            }
            let (path, class, split) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if path.is_empty() || class.is_empty() {
                return Err(ManifestError::Parse { line, message: "empty path or class".into() });
            }
            let split = split.parse::<Split>().map_err(|message| ManifestError::Parse { line, message })?;
            let mut path = PathBuf::from(path);
            if let Some(base) = base.filter(|_| path.is_relative()) {
                path = base.join(path);
            }
            entries.push(ManifestEntry { path, class: class.to_string(), split });
        }
        Ok(Self { dataset, entries })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent())
    }

    /// Paths under `base` are written relative to it.
    pub fn to_text(&self, base: Option<&Path>) -> String {
        let mut out = String::new();
        if !self.dataset.is_empty() {
            let _ = writeln!(out, "# dataset {}", self.dataset);
        }
        for e in &self.entries {
            let p = base.and_then(|b| e.path.strip_prefix(b).ok()).unwrap_or(&e.path);
            let _ = writeln!(out, "{}\t{}\t{}", p.display(), e.class, e.split);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let io = |source| ManifestError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_text(path.parent())).map_err(io)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class names in order of first appearance; a class's index is its label.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for e in &self.entries {
            if !names.contains(&e.class) {
                names.push(e.class.clone());
            }
        }
        names
    }

    pub fn labels(&self) -> Vec<usize> {
        let names = self.class_names();
        self.entries.iter().map(|e| names.iter().position(|n| *n == e.class).expect("class listed")).collect()
    }

    pub fn splits(&self) -> Vec<Split> {
        self.entries.iter().map(|e| e.split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Keeps only the first `k` classes (by first appearance).
    pub fn limit_classes(&self, k: usize) -> Manifest {
        let keep: Vec<String> = self.class_names().into_iter().take(k).collect();
        Manifest { dataset: self.dataset.clone(), entries: self.entries.iter().filter(|e| keep.contains(&e.class)).cloned().collect() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                out.push(format!("path {} listed twice", e.path.display()));
            }
        }
        for class in self.class_names() {
            if !self.entries.iter().any(|e| e.class == class && e.split == Split::Train) {
                out.push(format!("class {class} has no training image"));
            }
        }
        for split in [Split::Train, Split::Test] {
            if self.count(split) == 0 {
                out.push(format!("{split} split is empty"));
            }
        }
        out
    }
}
