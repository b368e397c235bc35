//! Structural checks for region graphs. Violations are returned as data.

use std::fmt;

use crate::types::Arsrg;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RegionIdMismatch { index: usize, id: usize },
    EmptyRegion { region: usize },
    MeanColorOutOfRange { region: usize },
    NonFiniteCentroid { region: usize },
    EdgeMissingRegion { region: usize },
    SelfLoop { region: usize },
    EdgeNotCanonical { a: usize, b: usize },
    RegionMissingDescriptor { region: usize, descriptor: usize },
    DescriptorShared { descriptor: usize, first: usize, second: usize },
    DescriptorUnassigned { descriptor: usize },
    DescriptorLength { descriptor: usize, len: usize, expected: usize },
    DescriptorNonFinite { descriptor: usize },
    DescriptorOutsideImage { descriptor: usize, x: f32, y: f32 },
    ImageIdNewline,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RegionIdMismatch { index, id } => write!(f, "region at index {index} has id {id}"),
            Violation::EmptyRegion { region } => write!(f, "region {region} has zero pixels"),
            Violation::MeanColorOutOfRange { region } => write!(f, "region {region} mean color outside [0,1]"),
            Violation::NonFiniteCentroid { region } => write!(f, "region {region} centroid is not finite"),
            Violation::EdgeMissingRegion { region } => write!(f, "edge references missing region {region}"),
            Violation::SelfLoop { region } => write!(f, "edge ({region},{region}) is a self-loop"),
            Violation::EdgeNotCanonical { a, b } => write!(f, "edge ({a},{b}) is not stored as (low, high)"),
            Violation::RegionMissingDescriptor { region, descriptor } => {
                write!(f, "region {region} references missing descriptor {descriptor}")
            }
            Violation::DescriptorShared { descriptor, first, second } => {
                write!(f, "descriptor {descriptor} assigned to regions {first} and {second}")
            }
            Violation::DescriptorUnassigned { descriptor } => write!(f, "descriptor {descriptor} is not assigned to any region"),
            Violation::DescriptorLength { descriptor, len, expected } => {
                write!(f, "descriptor {descriptor} has length {len}, expected {expected}")
            }
            Violation::DescriptorNonFinite { descriptor } => write!(f, "descriptor {descriptor} has non-finite values"),
            Violation::DescriptorOutsideImage { descriptor, x, y } => {
                write!(f, "descriptor {descriptor} position ({x}, {y}) outside image")
            }
            Violation::ImageIdNewline => write!(f, "image id contains a line break"),
        }
    }
}

/// Every broken invariant of `g`; empty iff the graph is valid.
pub fn validate_arsrg(g: &Arsrg) -> Vec<Violation> {
    let mut out = Vec::new();
    if g.image_id.contains(['\n', '\r']) {
        out.push(Violation::ImageIdNewline);
    }
    let n_regions = g.regions.len();
    for (index, r) in g.regions.iter().enumerate() {
        if r.id != index {
            out.push(Violation::RegionIdMismatch { index, id: r.id });
        }
        if r.pixel_count == 0 {
            out.push(Violation::EmptyRegion { region: r.id });
        }
        if !r.mean_color.iter().all(|c| (0.0..=1.0).contains(c)) {
            out.push(Violation::MeanColorOutOfRange { region: r.id });
        }
        if !(r.centroid.0.is_finite() && r.centroid.1.is_finite()) {
            out.push(Violation::NonFiniteCentroid { region: r.id });
        }
    }
    for &(a, b) in &g.region_edges {
        for end in [a, b] {
            if end >= n_regions {
                out.push(Violation::EdgeMissingRegion { region: end });
            }
        }
        if a == b {
            out.push(Violation::SelfLoop { region: a });
        } else if a > b {
            out.push(Violation::EdgeNotCanonical { a, b });
        }
    }

    let mut owner: Vec<Option<usize>> = vec![None; g.descriptors.len()];
    for r in &g.regions {
        for &d in &r.descriptor_ids {
            match owner.get_mut(d) {
                None => out.push(Violation::RegionMissingDescriptor { region: r.id, descriptor: d }),
                Some(slot @ None) => *slot = Some(r.id),
                Some(Some(first)) => {
                    out.push(Violation::DescriptorShared { descriptor: d, first: *first, second: r.id })
                }
            }
        }
    }
    for (d, desc) in g.descriptors.iter().enumerate() {
        if owner[d].is_none() {
            out.push(Violation::DescriptorUnassigned { descriptor: d });
        }
        if desc.vector.len() != g.descriptor_dim {
            out.push(Violation::DescriptorLength { descriptor: d, len: desc.vector.len(), expected: g.descriptor_dim });
        }
        let finite = desc.vector.iter().all(|v| v.is_finite())
            && [desc.x, desc.y, desc.scale, desc.orientation].iter().all(|v| v.is_finite());
        if !finite {
            out.push(Violation::DescriptorNonFinite { descriptor: d });
        } else if !(desc.x >= 0.0 && desc.y >= 0.0 && (desc.x as f64) < g.width as f64 && (desc.y as f64) < g.height as f64) {
            out.push(Violation::DescriptorOutsideImage { descriptor: d, x: desc.x, y: desc.y });
        }
    }
    out
}
