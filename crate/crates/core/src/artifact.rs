//! On-disk artifact formats.
//!
//! Binary artifacts: `GFG1`, format version (u16 LE), artifact tag (u8), the
//! 32-byte config hash, then a tag-specific payload of little-endian
//! integers and row-major f64 values. Region graphs use a line-oriented
//! text format with the same magic and a `config <hex>` line.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigHash, RunConfig};
use crate::matrix::{CsrMatrix, Matrix};
use crate::types::{Activation, Arsrg, DatasetGraph, Descriptor, DistanceMatrix, GcnModel, GraphStats, Region, Split};
use crate::validate::validate_arsrg;

pub const MAGIC: &[u8; 4] = b"GFG1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Arsrg = 0,
    DistanceMatrix = 1,
    DatasetGraph = 2,
    GcnModel = 3,
    RunConfig = 4,
    FeatureMatrix = 5,
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic at byte 0: expected \"GFG1\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("version mismatch: file has format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("wrong artifact kind at byte 6: found tag {found}, expected {expected:?}")]
    WrongKind { found: u8, expected: ArtifactKind },
    #[error("truncated payload at byte {offset}: needed {needed} more bytes, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("malformed payload at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("{} trailing bytes after payload at byte {offset}", len)]
    TrailingBytes { offset: usize, len: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated: {}", violations.join("; "))]
    Invariant { violations: Vec<String> },
}

pub type Result<T, E = ArtifactError> = std::result::Result<T, E>;

/// An artifact together with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamped<A> {
    pub config_hash: ConfigHash,
    pub value: A,
}

pub trait Artifact: Sized {
    const KIND: ArtifactKind;

    fn violations(&self) -> Vec<String>;

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8>;

    /// Decodes and validates.
    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>>;
}

/// Validates, then writes `artifact` stamped with `hash`.
pub fn write_artifact<A: Artifact>(path: &Path, artifact: &A, hash: &ConfigHash) -> Result<()> {
    let violations = artifact.violations();
    if !violations.is_empty() {
        return Err(ArtifactError::Invariant { violations });
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ArtifactError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, artifact.to_bytes(hash)).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })
}

pub fn read_artifact<A: Artifact>(path: &Path) -> Result<Stamped<A>> {
    let bytes = fs::read(path).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })?;
    A::from_bytes(&bytes)
}

fn invariant_check<A: Artifact>(value: A, config_hash: ConfigHash) -> Result<Stamped<A>> {
    let violations = value.violations();
    if violations.is_empty() {
        Ok(Stamped { config_hash, value })
    } else {
        Err(ArtifactError::Invariant { violations })
    }
}

// ---- binary encoding -------------------------------------------------------

fn header(kind: ArtifactKind, hash: &ConfigHash) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&hash.0);
    out
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    put_f64s(out, m.as_slice());
}

fn put_coo(out: &mut Vec<u8>, m: &CsrMatrix) {
    put_u64(out, m.nnz());
    for (r, c, v) in m.triplets() {
        put_u64(out, r);
        put_u64(out, c);
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte buffer that reports the offset of every failure.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ArtifactError::Truncated { offset: self.pos, needed: n, available });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| ArtifactError::Malformed { offset: at, message: format!("count {v} too large") })
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| ArtifactError::Malformed { offset: self.pos, message: format!("length {count} overflows") })?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let at = self.pos;
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| ArtifactError::Malformed { offset: at, message: format!("shape {rows}x{cols} overflows") })?;
        Ok(Matrix::from_vec(rows, cols, self.f64s(len)?))
    }

    fn coo(&mut self, rows: usize, cols: usize) -> Result<CsrMatrix> {
        let nnz = self.usize()?;
        // each triplet is 24 bytes; fail before allocating for a bogus count
        let needed = nnz.saturating_mul(24);
        if needed > self.buf.len() - self.pos {
            return Err(ArtifactError::Truncated { offset: self.pos, needed, available: self.buf.len() - self.pos });
        }
        let mut triplets = Vec::with_capacity(nnz);
        let mut prev: Option<(usize, usize)> = None;
        for _ in 0..nnz {
            let at = self.pos;
            let r = self.usize()?;
            let c = self.usize()?;
            let v = self.f64()?;
            if r >= rows || c >= cols {
                return Err(ArtifactError::Malformed { offset: at, message: format!("entry ({r},{c}) outside {rows}x{cols}") });
            }
            if prev.is_some_and(|p| p >= (r, c)) {
                return Err(ArtifactError::Malformed { offset: at, message: "sparse entries not in row-major order".into() });
            }
            prev = Some((r, c));
            triplets.push((r, c, v));
        }
        Ok(CsrMatrix::from_triplets(rows, cols, &triplets))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ArtifactError::Malformed { offset: at, message: "string is not UTF-8".into() })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(ArtifactError::TrailingBytes { offset: self.pos, len: self.buf.len() - self.pos });
        }
        Ok(())
    }
}

/// Checks magic, version and tag; returns the config hash and a reader
/// positioned at the payload.
fn open_binary(bytes: &[u8], expected: ArtifactKind) -> Result<(ConfigHash, ByteReader<'_>)> {
    check_magic(bytes)?;
    let mut r = ByteReader::new(bytes);
    r.take(4)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let tag = r.u8()?;
    if tag != expected as u8 {
        return Err(ArtifactError::WrongKind { found: tag, expected });
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    Ok((ConfigHash(hash), r))
}

fn check_magic(bytes: &[u8]) -> Result<()> {
    let head = &bytes[..bytes.len().min(4)];
    if head != MAGIC {
        return Err(ArtifactError::BadMagic { found: head.to_vec() });
    }
    Ok(())
}

impl Artifact for DistanceMatrix {
    const KIND: ArtifactKind = ArtifactKind::DistanceMatrix;

    fn violations(&self) -> Vec<String> {
        DistanceMatrix::violations(self)
    }

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut out = header(Self::KIND, hash);
        put_u64(&mut out, self.names.len());
        for name in &self.names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        put_f64s(&mut out, self.values.as_slice());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        let (hash, mut r) = open_binary(bytes, Self::KIND)?;
        let n = r.usize()?;
        let mut names = Vec::new();
        for _ in 0..n {
            names.push(r.string()?);
        }
        let len = n.checked_mul(n).ok_or_else(|| ArtifactError::Malformed { offset: r.offset(), message: "n*n overflows".into() })?;
        let values = Matrix::from_vec(n, n, r.f64s(len)?);
        r.finish()?;
        invariant_check(DistanceMatrix { names, values }, hash)
    }
}

impl Artifact for Matrix {
    const KIND: ArtifactKind = ArtifactKind::FeatureMatrix;

    fn violations(&self) -> Vec<String> {
        if self.is_finite() {
            Vec::new()
        } else {
            vec!["matrix has non-finite entries".into()]
        }
    }

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut out = header(Self::KIND, hash);
        put_matrix(&mut out, self);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        let (hash, mut r) = open_binary(bytes, Self::KIND)?;
        let m = r.matrix()?;
        r.finish()?;
        invariant_check(m, hash)
    }
}

impl Artifact for DatasetGraph {
    const KIND: ArtifactKind = ArtifactKind::DatasetGraph;

    fn violations(&self) -> Vec<String> {
        DatasetGraph::violations(self)
    }

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut out = header(Self::KIND, hash);
        let n = self.labels.len();
        put_u64(&mut out, n);
        put_u64(&mut out, self.num_classes);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for s in &self.split {
            out.push(match s {
                Split::Train => 0,
                Split::Test => 1,
            });
        }
        put_coo(&mut out, &self.adjacency);
        put_coo(&mut out, &self.normalized);
        put_matrix(&mut out, &self.features);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        let (hash, mut r) = open_binary(bytes, Self::KIND)?;
        let n = r.usize()?;
        let num_classes = r.usize()?;
        if n.saturating_mul(5) > bytes.len() {
            return Err(ArtifactError::Truncated { offset: r.offset(), needed: n * 5, available: bytes.len() - r.offset() });
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32()? as usize);
        }
        let mut split = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            split.push(match r.u8()? {
                0 => Split::Train,
                1 => Split::Test,
                t => return Err(ArtifactError::Malformed { offset: at, message: format!("unknown split tag {t}") }),
            });
        }
        let adjacency = r.coo(n, n)?;
        let normalized = r.coo(n, n)?;
        let features = r.matrix()?;
        r.finish()?;
        let stats = GraphStats::compute(&adjacency, &labels, num_classes);
        invariant_check(DatasetGraph { adjacency, normalized, features, labels, num_classes, split, stats }, hash)
    }
}

impl Artifact for GcnModel {
    const KIND: ArtifactKind = ArtifactKind::GcnModel;

    fn violations(&self) -> Vec<String> {
        GcnModel::violations(self)
    }

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut out = header(Self::KIND, hash);
        out.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            put_u64(&mut out, d);
        }
        for a in &self.activations {
            out.push(a.tag());
        }
        for w in &self.weights {
            put_f64s(&mut out, w.as_slice());
        }
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        let (hash, mut r) = open_binary(bytes, Self::KIND)?;
        let at = r.offset();
        let count = r.u32()? as usize;
        if count < 2 {
            return Err(ArtifactError::Malformed { offset: at, message: format!("model has {count} layer dims") });
        }
        let mut layer_dims = Vec::new();
        for _ in 0..count {
            layer_dims.push(r.usize()?);
        }
        let mut activations = Vec::new();
        for _ in 1..count {
            let at = r.offset();
            let tag = r.u8()?;
            activations
                .push(Activation::from_tag(tag).ok_or_else(|| ArtifactError::Malformed { offset: at, message: format!("unknown activation tag {tag}") })?);
        }
        let mut weights = Vec::new();
        for w in layer_dims.windows(2) {
            let len = w[0]
                .checked_mul(w[1])
                .ok_or_else(|| ArtifactError::Malformed { offset: r.offset(), message: "layer shape overflows".into() })?;
            weights.push(Matrix::from_vec(w[0], w[1], r.f64s(len)?));
        }
        r.finish()?;
        invariant_check(GcnModel { layer_dims, weights, activations }, hash)
    }
}

impl Artifact for RunConfig {
    const KIND: ArtifactKind = ArtifactKind::RunConfig;

    fn violations(&self) -> Vec<String> {
        match self.validate() {
            Ok(()) => Vec::new(),
            Err(e) => vec![e.to_string()],
        }
    }

    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut out = header(Self::KIND, hash);
        let text = self.to_text();
        put_u64(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        let (hash, mut r) = open_binary(bytes, Self::KIND)?;
        let at = r.offset();
        let len = r.usize()?;
        let raw = r.take(len)?;
        r.finish()?;
        let text = std::str::from_utf8(raw).map_err(|_| ArtifactError::Malformed { offset: at + 8, message: "config text is not UTF-8".into() })?;
        let cfg = RunConfig::parse(text).map_err(|e| ArtifactError::Invariant { violations: vec![e.to_string()] })?;
        invariant_check(cfg, hash)
    }
}

// ---- region graph text format ---------------------------------------------

/// 9 significant digits: exact round trip for every f32.
fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

impl Artifact for Arsrg {
    const KIND: ArtifactKind = ArtifactKind::Arsrg;

    fn violations(&self) -> Vec<String> {
        validate_arsrg(self).iter().map(ToString::to_string).collect()
    }

    /// ```text
    /// GFG1 arsrg 1
    /// config <64 hex digits>
    /// image <id, rest of line>
    /// label <index or ->
    /// size <width> <height>
    /// dim <descriptor length>
    /// R <id> <pixel_count> <cx> <cy> <r> <g> <b>
    /// E <low> <high>
    /// D <region> <x> <y> <scale> <orientation> <v_1> .. <v_dim>
    /// ```
    fn to_bytes(&self, hash: &ConfigHash) -> Vec<u8> {
        let mut owner = vec![usize::MAX; self.descriptors.len()];
        for r in &self.regions {
            for &d in &r.descriptor_ids {
                owner[d] = r.id;
            }
        }
        let mut s = String::new();
        s.push_str(&format!("GFG1 arsrg {FORMAT_VERSION}\n"));
        s.push_str(&format!("config {}\n", hash.to_hex()));
        s.push_str(&format!("image {}\n", self.image_id));
        match self.label {
            Some(l) => s.push_str(&format!("label {l}\n")),
            None => s.push_str("label -\n"),
        }
        s.push_str(&format!("size {} {}\n", self.width, self.height));
        s.push_str(&format!("dim {}\n", self.descriptor_dim));
        for r in &self.regions {
            s.push_str(&format!(
                "R {} {} {} {} {} {} {}\n",
                r.id,
                r.pixel_count,
                fmt_f32(r.centroid.0),
                fmt_f32(r.centroid.1),
                fmt_f32(r.mean_color[0]),
                fmt_f32(r.mean_color[1]),
                fmt_f32(r.mean_color[2]),
            ));
        }
        for &(a, b) in &self.region_edges {
            s.push_str(&format!("E {a} {b}\n"));
        }
        for (d, desc) in self.descriptors.iter().enumerate() {
            s.push_str(&format!(
                "D {} {} {} {} {}",
                owner[d],
                fmt_f32(desc.x),
                fmt_f32(desc.y),
                fmt_f32(desc.scale),
                fmt_f32(desc.orientation)
            ));
            for v in &desc.vector {
                s.push(' ');
                s.push_str(&fmt_f32(*v));
            }
            s.push('\n');
        }
        s.into_bytes()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Stamped<Self>> {
        check_magic(bytes)?;
        let text = std::str::from_utf8(bytes).map_err(|e| ArtifactError::Malformed { offset: e.valid_up_to(), message: "not UTF-8".into() })?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let perr = |line: usize, message: String| ArtifactError::Parse { line, message };

        let mut next_header = |key: &str| -> Result<(usize, String)> {
            let (line, content) = lines.next().ok_or_else(|| perr(0, format!("missing `{key}` line")))?;
            let rest = content
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| perr(line, format!("expected `{key} ...`, found {content:?}")))?;
            Ok((line, rest.to_string()))
        };

        let (line, magic_rest) = next_header("GFG1")?;
        let version = magic_rest
            .strip_prefix("arsrg ")
            .ok_or_else(|| perr(line, "not a region-graph artifact".into()))?
            .trim()
            .parse::<u16>()
            .map_err(|e| perr(line, format!("bad version: {e}")))?;
        if version != FORMAT_VERSION {
            return Err(ArtifactError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let (line, hash_hex) = next_header("config")?;
        let config_hash = ConfigHash::from_hex(hash_hex.trim()).ok_or_else(|| perr(line, "bad config hash".into()))?;
        let (_, image_id) = next_header("image")?;
        let (line, label) = next_header("label")?;
        let label = match label.trim() {
            "-" => None,
            l => Some(l.parse::<usize>().map_err(|e| perr(line, format!("bad label: {e}")))?),
        };
        let (line, size) = next_header("size")?;
        let dims: Vec<usize> = size
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(line, format!("bad size: {e}")))?;
        let [width, height] = dims[..] else {
            return Err(perr(line, "size needs two integers".into()));
        };
        let (line, dim) = next_header("dim")?;
        let descriptor_dim = dim.trim().parse::<usize>().map_err(|e| perr(line, format!("bad dim: {e}")))?;

        let mut regions: Vec<Region> = Vec::new();
        let mut region_edges = std::collections::BTreeSet::new();
        let mut descriptors = Vec::new();
        let mut owners = Vec::new();
        for (line, content) in lines {
            let fields: Vec<&str> = content.split_whitespace().collect();
            let int = |s: &str| s.parse::<usize>().map_err(|e| perr(line, format!("bad integer {s:?}: {e}")));
            let real = |s: &str| s.parse::<f32>().map_err(|e| perr(line, format!("bad number {s:?}: {e}")));
            match fields.first() {
                None => continue,
                Some(&"R") => {
                    if fields.len() != 8 {
                        return Err(perr(line, format!("region line has {} fields, expected 8", fields.len())));
                    }
                    regions.push(Region {
                        id: int(fields[1])?,
                        pixel_count: int(fields[2])?,
                        centroid: (real(fields[3])?, real(fields[4])?),
                        mean_color: [real(fields[5])?, real(fields[6])?, real(fields[7])?],
                        descriptor_ids: Vec::new(),
                    });
                }
                Some(&"E") => {
                    if fields.len() != 3 {
                        return Err(perr(line, format!("edge line has {} fields, expected 3", fields.len())));
                    }
                    region_edges.insert((int(fields[1])?, int(fields[2])?));
                }
                Some(&"D") => {
                    if fields.len() != 6 + descriptor_dim {
                        return Err(perr(line, format!("descriptor line has {} fields, expected {}", fields.len(), 6 + descriptor_dim)));
                    }
                    owners.push((int(fields[1])?, descriptors.len(), line));
                    descriptors.push(Descriptor {
                        x: real(fields[2])?,
                        y: real(fields[3])?,
                        scale: real(fields[4])?,
                        orientation: real(fields[5])?,
                        vector: fields[6..].iter().map(|s| real(s)).collect::<Result<_>>()?,
                    });
                }
                Some(other) => return Err(perr(line, format!("unknown record type {other:?}"))),
            }
        }
        for (region, d, line) in owners {
            let r = regions
                .iter_mut()
                .find(|r| r.id == region)
                .ok_or_else(|| perr(line, format!("descriptor references missing region {region}")))?;
            r.descriptor_ids.push(d);
        }
        invariant_check(Arsrg { image_id, label, width, height, descriptor_dim, regions, region_edges, descriptors }, config_hash)
    }
}
