//! Domain types passed between pipeline stages.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::matrix::{CsrMatrix, Matrix};

/// A local keypoint descriptor. Coordinates are in pixels of the resized
/// image the region graph was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f32>,
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
}

impl Descriptor {
    pub fn squared_distance(&self, other: &Descriptor) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.squared_distance(other).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub pixel_count: usize,
    pub centroid: (f32, f32),
    pub mean_color: [f32; 3],
    pub descriptor_ids: Vec<usize>,
}

impl Region {
    /// Euclidean RGB distance scaled into `[0, 1]` by `√3`.
    pub fn color_distance(&self, other: &Region) -> f64 {
        normalized_color_distance(
            [f64::from(self.mean_color[0]), f64::from(self.mean_color[1]), f64::from(self.mean_color[2])],
            [f64::from(other.mean_color[0]), f64::from(other.mean_color[1]), f64::from(other.mean_color[2])],
        )
    }
}

pub fn normalized_color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let sq: f64 = (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum();
    sq.sqrt() / 3f64.sqrt()
}

/// Attributed relational graph of one image.
///
/// Three levels: an implicit root joined to every region, the region
/// adjacency graph, and descriptor leaves attached to the region that
/// contains them. Region ids are dense (`regions[i].id == i`) and edges are
/// stored as `(low, high)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Arsrg {
    pub image_id: String,
    pub label: Option<usize>,
    pub width: usize,
    pub height: usize,
    pub descriptor_dim: usize,
    pub regions: Vec<Region>,
    pub region_edges: BTreeSet<(usize, usize)>,
    pub descriptors: Vec<Descriptor>,
}

impl Arsrg {
    /// Regions adjacent to `region` in the region adjacency graph.
    pub fn neighbors(&self, region: usize) -> Vec<usize> {
        self.region_edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == region {
                    Some(b)
                } else if b == region {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.regions.len()];
        for &(a, b) in &self.region_edges {
            if a < lists.len() && b < lists.len() {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        lists
    }
}

/// Symmetric matrix of pairwise graph distances; row `i` is the embedding
/// of graph `i` against every graph in the set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    pub values: Matrix,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.names.len();
        if self.values.shape() != (n, n) {
            out.push(format!("values shape {:?} does not match {} names", self.values.shape(), n));
            return out;
        }
        for i in 0..n {
            if self.values[(i, i)] != 0.0 {
                out.push(format!("diagonal entry {i} is {} (expected 0)", self.values[(i, i)]));
            }
            for j in 0..n {
                let v = self.values[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    out.push(format!("entry ({i},{j}) = {v} outside [0,1]"));
                }
                if j > i && v.to_bits() != self.values[(j, i)].to_bits() {
                    out.push(format!("entry ({i},{j}) differs from ({j},{i})"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub density: f64,
    pub class_histogram: Vec<usize>,
}

impl GraphStats {
    pub fn compute(adjacency: &CsrMatrix, labels: &[usize], num_classes: usize) -> Self {
        let n = adjacency.rows();
        let off_diag = adjacency.triplets().iter().filter(|&&(r, c, _)| r != c).count();
        let edge_count = off_diag / 2;
        let density = if n < 2 { 0.0 } else { 2.0 * edge_count as f64 / (n as f64 * (n as f64 - 1.0)) };
        let mut class_histogram = vec![0usize; num_classes];
        for &l in labels {
            if l < num_classes {
                class_histogram[l] += 1;
            }
        }
        Self { node_count: n, edge_count, density, class_histogram }
    }
}

/// The dataset-level graph: one node per image, edges between images whose
/// pairwise distance falls below the threshold, feature rows from the
/// dissimilarity embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetGraph {
    pub adjacency: CsrMatrix,
    pub normalized: CsrMatrix,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Vec<Split>,
    pub stats: GraphStats,
}

impl DatasetGraph {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.labels.len();
        let a = &self.adjacency;
        if a.rows() != n || a.cols() != n {
            out.push(format!("adjacency is {}x{}, expected {n}x{n}", a.rows(), a.cols()));
            return out;
        }
        if self.normalized.rows() != n || self.normalized.cols() != n {
            out.push(format!("normalized adjacency is {}x{}, expected {n}x{n}", self.normalized.rows(), self.normalized.cols()));
            return out;
        }
        if !a.is_symmetric() {
            out.push("adjacency is not symmetric".into());
        }
        for r in 0..n {
            for (c, v) in a.row_iter(r) {
                if c == r {
                    out.push(format!("adjacency has self-loop at node {r}"));
                }
                if v != 1.0 {
                    out.push(format!("adjacency entry ({r},{c}) = {v} is not binary"));
                }
            }
            let mut expected: Vec<usize> = a.row_indices(r).to_vec();
            if let Err(pos) = expected.binary_search(&r) {
                expected.insert(pos, r);
            }
            if self.normalized.row_indices(r) != expected.as_slice() {
                out.push(format!("normalized adjacency row {r} structure differs from adjacency plus self-loop"));
            }
        }
        if !self.normalized.values().iter().all(|v| v.is_finite()) {
            out.push("normalized adjacency has non-finite entries".into());
        }
        if self.features.rows() != n {
            out.push(format!("feature matrix has {} rows, expected {n}", self.features.rows()));
        }
        if !self.features.is_finite() {
            out.push("feature matrix has non-finite entries".into());
        }
        if self.split.len() != n {
            out.push(format!("split has {} tags, expected {n}", self.split.len()));
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.num_classes {
                out.push(format!("node {i} label {l} outside 0..{}", self.num_classes));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// Layer stack `[m, h, C]` with one weight matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub activations: Vec<Activation>,
}

impl GcnModel {
    pub fn zeros(layer_dims: &[usize]) -> Self {
        let weights = layer_dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect::<Vec<_>>();
        let mut activations = vec![Activation::Relu; weights.len()];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        Self { layer_dims: layer_dims.to_vec(), weights, activations }
    }

    pub fn num_classes(&self) -> usize {
        self.layer_dims.last().copied().unwrap_or(0)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.layer_dims.len() < 2 {
            out.push(format!("model needs at least 2 layer dims, has {}", self.layer_dims.len()));
            return out;
        }
        let layers = self.layer_dims.len() - 1;
        if self.weights.len() != layers {
            out.push(format!("model has {} weight matrices for {layers} layers", self.weights.len()));
        }
        if self.activations.len() != layers {
            out.push(format!("model has {} activations for {layers} layers", self.activations.len()));
        }
        for (l, w) in self.weights.iter().enumerate().take(layers) {
            let expected = (self.layer_dims[l], self.layer_dims[l + 1]);
            if w.shape() != expected {
                out.push(format!("weights[{l}] has shape {:?}, expected {expected:?}", w.shape()));
            }
            if !w.is_finite() {
                out.push(format!("weights[{l}] has non-finite entries"));
            }
        }
        out
    }
}
