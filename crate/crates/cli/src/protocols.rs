//! Train/test protocols applied to a flat image listing.

use std::collections::BTreeMap;

use grembed_core::Split;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifest::{Manifest, ManifestEntry};

pub const COIL_CLASSES: usize = 25;
pub const COIL_TRAIN_FRACTION: f64 = 0.11;
pub const ETH_OBJECTS_PER_CLASS: usize = 4;
pub const ETH_TRAIN_VIEWS: usize = 10;
pub const ETH_TEST_VIEWS: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("the protocol requires ≥ {required} classes, found {found}")]
    TooFewClasses { required: usize, found: usize },
    #[error("class {class}: needs {required} objects with ≥ {views} views; short objects: {}", short.join(", "))]
    MissingViews { class: String, required: usize, views: usize, short: Vec<String> },
    #[error("image {0} has no parent directory naming its object")]
    NoObject(String),
    #[error("train fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
}

/// Entries grouped by class, classes in name order, entries in path order.
fn by_class(listing: &Manifest) -> BTreeMap<String, Vec<ManifestEntry>> {
    let mut groups: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    for e in &listing.entries {
        groups.entry(e.class.clone()).or_default().push(e.clone());
    }
    for v in groups.values_mut() {
        v.sort_by(|a, b| a.path.cmp(&b.path));
    }
    groups
}

/// Per class, `max(1, round(fraction·k))` randomly chosen images train, the
/// rest test.
fn split_each_class(groups: Vec<(String, Vec<ManifestEntry>)>, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for (_, mut entries) in groups {
        let k = entries.len();
        let n_train = ((fraction * k as f64).round() as usize).clamp(1, k);
        let mut idx: Vec<usize> = (0..k).collect();
        idx.shuffle(rng);
        for &i in &idx[..n_train] {
            entries[i].split = Split::Train;
        }
        for &i in &idx[n_train..] {
            entries[i].split = Split::Test;
        }
        out.extend(entries);
    }
    out
}

/// 25 classes drawn uniformly at random; 11% of each class's images
/// (rounded, at least one) train, the rest test.
pub fn split_coil_protocol(listing: &Manifest, seed: u64) -> Result<Manifest, ProtocolError> {
    let groups = by_class(listing);
    if groups.len() < COIL_CLASSES {
        return Err(ProtocolError::TooFewClasses { required: COIL_CLASSES, found: groups.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<&String> = groups.keys().collect();
    names.shuffle(&mut rng);
    let mut chosen: Vec<String> = names[..COIL_CLASSES].iter().map(|s| s.to_string()).collect();
    chosen.sort();
    let selected = chosen.into_iter().map(|c| (c.clone(), groups[&c].clone())).collect();
    Ok(Manifest { dataset: listing.dataset.clone(), entries: split_each_class(selected, COIL_TRAIN_FRACTION, &mut rng) })
}

/// Every class, `max(1, round(fraction·k))` random images train.
pub fn split_fraction(listing: &Manifest, fraction: f64, seed: u64) -> Result<Manifest, ProtocolError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ProtocolError::Fraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = by_class(listing).into_iter().collect();
    Ok(Manifest { dataset: listing.dataset.clone(), entries: split_each_class(groups, fraction, &mut rng) })
}

/// The object an image belongs to: its parent directory's name.
pub fn object_of(entry: &ManifestEntry) -> Option<String> {
    entry.path.parent()?.file_name().map(|s| s.to_string_lossy().into_owned())
}

/// Per class: 4 random objects among those with at least 25 views; of each,
/// 25 random views, 10 train and 15 test.
pub fn split_eth_protocol(listing: &Manifest, seed: u64) -> Result<Manifest, ProtocolError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needed = ETH_TRAIN_VIEWS + ETH_TEST_VIEWS;
    let mut entries = Vec::new();
    for (class, members) in by_class(listing) {
        let mut objects: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
        for e in members {
            let obj = object_of(&e).ok_or_else(|| ProtocolError::NoObject(e.path.display().to_string()))?;
            objects.entry(obj).or_default().push(e);
        }
        let (mut usable, short): (Vec<_>, Vec<_>) = objects.into_iter().partition(|(_, v)| v.len() >= needed);
        if usable.len() < ETH_OBJECTS_PER_CLASS {
            return Err(ProtocolError::MissingViews {
                class,
                required: ETH_OBJECTS_PER_CLASS,
                views: needed,
                short: short.iter().map(|(o, v)| format!("{o} ({} views)", v.len())).collect(),
            });
        }
        usable.shuffle(&mut rng);
        let mut picked: Vec<(String, Vec<ManifestEntry>)> = usable.into_iter().take(ETH_OBJECTS_PER_CLASS).collect();
        picked.sort_by(|a, b| a.0.cmp(&b.0));
        for (_, mut views) in picked {
            views.shuffle(&mut rng);
            views.truncate(needed);
            for (i, mut e) in views.into_iter().enumerate() {
                e.split = if i < ETH_TRAIN_VIEWS { Split::Train } else { Split::Test };
                entries.push(e);
            }
        }
    }
    entries.sort_by(|a, b| a.class.cmp(&b.class).then(a.path.cmp(&b.path)));
    Ok(Manifest { dataset: listing.dataset.clone(), entries })
}
