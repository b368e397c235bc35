//! Listings of user-provided dataset directories and their protocols.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use grembed_core::Split;

use crate::manifest::{Manifest, ManifestEntry};
use crate::protocols::{split_coil_protocol, split_eth_protocol, split_fraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetKind {
    /// `obj<K>__<angle>.png` files in one directory
    Coil100,
    /// `<class>/<object>/<view>.png`
    Eth80,
    /// images anywhere below `<root>/<class>/`
    Aloi,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Coil100 => "coil100",
            DatasetKind::Eth80 => "eth80",
            DatasetKind::Aloi => "aloi",
        }
    }
}

/// Fraction of each ALOI class used for training.
pub const ALOI_TRAIN_FRACTION: f64 = 0.5;

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("png" | "ppm" | "pnm"))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    children.sort();
    for p in children {
        if p.is_dir() {
            walk(&p, out)?;
        } else if is_image(&p) {
            out.push(p);
        }
    }
    Ok(())
}

fn coil_class(p: &Path) -> Option<String> {
    let stem = p.file_stem()?.to_str()?;
    let (obj, angle) = stem.split_once("__")?;
    let digits = obj.strip_prefix("obj")?;
    (!digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && angle.chars().all(|c| c.is_ascii_digit())).then(|| obj.to_string())
}

/// Every image under `root` with its class; splits are placeholders.
pub fn list_dataset(kind: DatasetKind, root: &Path) -> anyhow::Result<Manifest> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut entries = Vec::new();
    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
        let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let class = match kind {
            DatasetKind::Coil100 => coil_class(&path),
            DatasetKind::Eth80 => (parts.len() == 3).then(|| parts[0].clone()),
            DatasetKind::Aloi => (parts.len() >= 2).then(|| parts[0].clone()),
        };
        if let Some(class) = class {
            entries.push(ManifestEntry { path, class, split: Split::Train });
        }
    }
    if entries.is_empty() {
        bail!("no {} images found under {}", kind.name(), root.display());
    }
    Ok(Manifest { dataset: kind.name().into(), entries })
}

/// Lists `root` and applies the dataset's protocol, then keeps the first
/// `limit_classes` classes if given.
pub fn dataset_manifest(kind: DatasetKind, root: &Path, seed: u64, limit_classes: Option<usize>) -> anyhow::Result<Manifest> {
    let listing = list_dataset(kind, root)?;
    let split = match kind {
        DatasetKind::Coil100 => split_coil_protocol(&listing, seed)?,
        DatasetKind::Eth80 => split_eth_protocol(&listing, seed)?,
        DatasetKind::Aloi => split_fraction(&listing, ALOI_TRAIN_FRACTION, seed)?,
    };
    Ok(match limit_classes {
        Some(k) => split.limit_classes(k),
        None => split,
    })
}
