//! Small hand-built region graphs for tests and examples.

use std::collections::BTreeSet;

use grembed_core::{Arsrg, Descriptor, Region};

/// Unit vector `e_k` in `dim` dimensions.
pub fn basis(dim: usize, k: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

/// Spec of one region: mean colour and descriptor vectors.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub color: [f32; 3],
    pub vectors: Vec<Vec<f32>>,
}

/// Builds a valid graph on a 100×100 canvas. Edges are given as region
/// index pairs in any order.
pub fn graph_from_regions(id: &str, regions: Vec<RegionSpec>, edges: &[(usize, usize)]) -> Arsrg {
    let dim = regions.iter().flat_map(|r| r.vectors.first()).map(Vec::len).next().unwrap_or(1);
    let mut out_regions = Vec::with_capacity(regions.len());
    let mut descriptors = Vec::new();
    for (rid, spec) in regions.into_iter().enumerate() {
        let mut ids = Vec::with_capacity(spec.vectors.len());
        for (k, v) in spec.vectors.into_iter().enumerate() {
            ids.push(descriptors.len());
            descriptors.push(Descriptor { vector: v, x: (k % 100) as f32, y: (rid % 100) as f32, scale: 1.6, orientation: 0.0 });
        }
        out_regions.push(Region { id: rid, pixel_count: 1, centroid: (50.0, 50.0), mean_color: spec.color, descriptor_ids: ids });
    }
    let region_edges: BTreeSet<(usize, usize)> = edges.iter().filter(|(a, b)| a != b).map(|&(a, b)| (a.min(b), a.max(b))).collect();
    Arsrg {
        image_id: id.to_string(),
        label: None,
        width: 100,
        height: 100,
        descriptor_dim: dim,
        regions: out_regions,
        region_edges,
        descriptors,
    }
}

/// One grey region holding all `vectors`.
pub fn one_region_graph(id: &str, vectors: Vec<Vec<f32>>) -> Arsrg {
    graph_from_regions(id, vec![RegionSpec { color: [0.5; 3], vectors }], &[])
}
