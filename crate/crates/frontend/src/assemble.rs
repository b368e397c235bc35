use std::collections::BTreeSet;

use grembed_core::{validate_arsrg, Arsrg, Descriptor, Region};

use crate::image::Image;
use crate::segment::RegionMap;
use crate::FrontendError;

/// Unordered pairs of distinct regions that share a 4-connected pixel
/// boundary, as `(low, high)`.
pub fn region_adjacency(rm: &RegionMap) -> BTreeSet<(usize, usize)> {
    let (w, h) = (rm.width(), rm.height());
    let mut edges = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = rm.label(x, y);
            if x + 1 < w {
                let b = rm.label(x + 1, y);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = rm.label(x, y + 1);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    edges
}

/// Builds the three-level graph: regions with their statistics and
/// adjacency, and each descriptor attached to the region under its rounded
/// position.
pub fn assemble_arsrg(
    rm: &RegionMap,
    descriptors: Vec<Descriptor>,
    img: &Image,
    image_id: &str,
    label: Option<usize>,
    descriptor_dim: usize,
) -> Result<Arsrg, FrontendError> {
    let (w, h) = (rm.width(), rm.height());
    if (img.width(), img.height()) != (w, h) {
        return Err(FrontendError::ShapeMismatch { image: (img.width(), img.height()), regions: (w, h) });
    }
    let mut counts = vec![0usize; rm.count()];
    let mut pos_sums = vec![(0.0f64, 0.0f64); rm.count()];
    let mut color_sums = vec![[0.0f64; 3]; rm.count()];
    for y in 0..h {
        for x in 0..w {
            let l = rm.label(x, y);
            counts[l] += 1;
            pos_sums[l].0 += x as f64;
            pos_sums[l].1 += y as f64;
            let p = img.get(x, y);
            for c in 0..3 {
                color_sums[l][c] += p[c];
            }
        }
    }
    let mut regions: Vec<Region> = (0..rm.count())
        .map(|id| {
            let n = counts[id] as f64;
            Region {
                id,
                pixel_count: counts[id],
                centroid: ((pos_sums[id].0 / n) as f32, (pos_sums[id].1 / n) as f32),
                mean_color: color_sums[id].map(|s| ((s / n) as f32).clamp(0.0, 1.0)),
                descriptor_ids: Vec::new(),
            }
        })
        .collect();

    for (i, d) in descriptors.iter().enumerate() {
        if d.vector.len() != descriptor_dim {
            return Err(FrontendError::DescriptorDim { index: i, len: d.vector.len(), expected: descriptor_dim });
        }
        let inside = d.x >= 0.0 && d.y >= 0.0 && (d.x as f64) < w as f64 && (d.y as f64) < h as f64;
        if !inside {
            return Err(FrontendError::DescriptorOutside { index: i, x: d.x, y: d.y });
        }
        let px = (d.x.round() as usize).min(w - 1);
        let py = (d.y.round() as usize).min(h - 1);
        regions[rm.label(px, py)].descriptor_ids.push(i);
    }

    let g = Arsrg {
        image_id: image_id.to_string(),
        label,
        width: w,
        height: h,
        descriptor_dim,
        regions,
        region_edges: region_adjacency(rm),
        descriptors,
    };
    let violations = validate_arsrg(&g);
    if !violations.is_empty() {
        return Err(FrontendError::Invalid(violations.iter().map(ToString::to_string).collect()));
    }
    Ok(g)
}
