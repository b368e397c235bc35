//! Quantize-then-merge colour segmentation.
//!
//! 1. uniform per-channel colour binning, bin count from the quantization
//!    threshold ([`quantization_bins`]);
//! 2. 4-connected components of equal bins;
//! 3. greedy merging of the adjacent pair with the smallest normalized
//!    mean-colour distance while it is below the merge threshold, ties going
//!    to the lexicographically smaller `(min id, max id)`;
//! 4. regions under 0.5% of the image are absorbed into their most similar
//!    neighbour, after which step 3 runs again.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use grembed_core::normalized_color_distance;

use crate::image::Image;

/// Regions smaller than this fraction of the image are absorbed.
pub const MIN_REGION_FRACTION: f64 = 0.005;

/// Per-pixel region labels `0..count`, numbered by first occurrence in
/// row-major scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    count: usize,
}

impl RegionMap {
    /// Relabels `labels` densely in scan order.
    pub fn from_labels(width: usize, height: usize, labels: &[usize]) -> Self {
        assert_eq!(labels.len(), width * height);
        let mut remap = std::collections::HashMap::new();
        let dense = labels
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Self { width, height, labels: dense, count: remap.len() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Image with every pixel replaced by its region's mean colour.
    pub fn paint_means(&self, img: &Image) -> Image {
        let means = region_means(self, img);
        Image::from_fn(self.width, self.height, |x, y| means[self.label(x, y)]).expect("same shape as source")
    }
}

pub fn region_means(rm: &RegionMap, img: &Image) -> Vec<[f64; 3]> {
    let mut sums = vec![[0.0f64; 3]; rm.count];
    let mut counts = vec![0usize; rm.count];
    for (l, p) in rm.labels.iter().zip(img.pixels()) {
        for c in 0..3 {
            sums[*l][c] += p[c];
        }
        counts[*l] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &n)| s.map(|v| v / n as f64)).collect()
}

/// Bins per channel: `max(2, round(64·(1 − q/600)))`. A larger threshold
/// gives coarser quantization.
pub fn quantization_bins(quantization_threshold: f64) -> usize {
    let q = quantization_threshold.clamp(0.0, 600.0);
    ((64.0 * (1.0 - q / 600.0)).round() as usize).max(2)
}

pub fn segment(img: &Image, quantization_threshold: f64, merge_threshold: f64) -> RegionMap {
    let (w, h) = (img.width(), img.height());
    let bins = quantization_bins(quantization_threshold);
    let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    let keys: Vec<usize> = img.pixels().iter().map(|p| (bin(p[0]) * bins + bin(p[1])) * bins + bin(p[2])).collect();

    let components = connected_components(w, h, &keys);
    let mut regions = Regions::new(img, &components);
    regions.merge_similar(merge_threshold);
    let min_pixels = MIN_REGION_FRACTION * (w * h) as f64;
    regions.absorb_small(min_pixels);
    regions.merge_similar(merge_threshold);

    let roots: Vec<usize> = (0..components.count).map(|l| regions.find(l)).collect();
    let labels: Vec<usize> = components.labels.iter().map(|&l| roots[l]).collect();
    RegionMap::from_labels(w, h, &labels)
}

struct Components {
    labels: Vec<usize>,
    count: usize,
}

fn connected_components(w: usize, h: usize, keys: &[usize]) -> Components {
    const UNSET: usize = usize::MAX;
    let mut labels = vec![UNSET; w * h];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != UNSET {
            continue;
        }
        labels[start] = count;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if labels[q] == UNSET && keys[q] == keys[start] {
                    labels[q] = count;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        count += 1;
    }
    Components { labels, count }
}

/// Candidate merge ordered by `(distance, low id, high id)`.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance.total_cmp(&other.distance).then(self.a.cmp(&other.a)).then(self.b.cmp(&other.b))
    }
}

/// Live regions under merging. A merged pair survives under the smaller id.
struct Regions {
    parent: Vec<usize>,
    sums: Vec<[f64; 3]>,
    counts: Vec<usize>,
    neighbors: Vec<BTreeSet<usize>>,
    alive: BTreeSet<usize>,
}

impl Regions {
    fn new(img: &Image, comps: &Components) -> Self {
        let n = comps.count;
        let (w, h) = (img.width(), img.height());
        let mut sums = vec![[0.0; 3]; n];
        let mut counts = vec![0; n];
        let mut neighbors = vec![BTreeSet::new(); n];
        for (i, p) in img.pixels().iter().enumerate() {
            let l = comps.labels[i];
            for c in 0..3 {
                sums[l][c] += p[c];
            }
            counts[l] += 1;
            let (x, y) = (i % w, i / w);
            if x + 1 < w && comps.labels[i + 1] != l {
                neighbors[l].insert(comps.labels[i + 1]);
                neighbors[comps.labels[i + 1]].insert(l);
            }
            if y + 1 < h && comps.labels[i + w] != l {
                neighbors[l].insert(comps.labels[i + w]);
                neighbors[comps.labels[i + w]].insert(l);
            }
        }
        Self { parent: (0..n).collect(), sums, counts, neighbors, alive: (0..n).collect() }
    }

    fn find(&mut self, l: usize) -> usize {
        let mut root = l;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = l;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn mean(&self, r: usize) -> [f64; 3] {
        let n = self.counts[r] as f64;
        self.sums[r].map(|s| s / n)
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        normalized_color_distance(self.mean(a), self.mean(b))
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        Candidate { distance: self.distance(a, b), a: a.min(b), b: a.max(b) }
    }

    /// Merges `a` and `b`; returns the surviving id.
    fn merge(&mut self, a: usize, b: usize) -> usize {
        let (keep, gone) = (a.min(b), a.max(b));
        for c in 0..3 {
            self.sums[keep][c] += self.sums[gone][c];
        }
        self.counts[keep] += self.counts[gone];
        self.parent[gone] = keep;
        self.alive.remove(&gone);
        let gone_neighbors = std::mem::take(&mut self.neighbors[gone]);
        for n in gone_neighbors {
            self.neighbors[n].remove(&gone);
            if n != keep {
                self.neighbors[n].insert(keep);
                self.neighbors[keep].insert(n);
            }
        }
        self.neighbors[keep].remove(&gone);
        keep
    }

    fn best_candidate(&self, r: usize) -> Option<Candidate> {
        self.neighbors[r].iter().map(|&n| self.candidate(r, n)).min()
    }

    /// Each live region keeps its cheapest candidate; the queue holds those
    /// per-region minima, so its first entry is the global minimum.
    fn merge_similar(&mut self, threshold: f64) {
        let mut best: Vec<Option<Candidate>> = vec![None; self.parent.len()];
        let mut queue: BTreeSet<(Candidate, usize)> = BTreeSet::new();
        let refresh = |regions: &Regions, r: usize, best: &mut Vec<Option<Candidate>>, queue: &mut BTreeSet<(Candidate, usize)>| {
            if let Some(old) = best[r].take() {
                queue.remove(&(old, r));
            }
            best[r] = regions.best_candidate(r);
            if let Some(c) = best[r] {
                queue.insert((c, r));
            }
        };
        for &r in &self.alive {
            refresh(self, r, &mut best, &mut queue);
        }
        while let Some(&(top, _)) = queue.first() {
            if top.distance >= threshold {
                break;
            }
            let keep = self.merge(top.a, top.b);
            let gone = top.a + top.b - keep;
            if let Some(old) = best[gone].take() {
                queue.remove(&(old, gone));
            }
            refresh(self, keep, &mut best, &mut queue);
            let neighbors: Vec<usize> = self.neighbors[keep].iter().copied().collect();
            for n in neighbors {
                let stale = best[n].is_some_and(|c| c.a == top.a || c.a == top.b || c.b == top.a || c.b == top.b);
                if stale {
                    refresh(self, n, &mut best, &mut queue);
                } else {
                    let c = self.candidate(keep, n);
                    if best[n].is_none_or(|old| c < old) {
                        if let Some(old) = best[n].replace(c) {
                            queue.remove(&(old, n));
                        }
                        queue.insert((c, n));
                    }
                }
            }
        }
    }

    fn absorb_small(&mut self, min_pixels: f64) {
        let mut small: BTreeSet<(usize, usize)> =
            self.alive.iter().filter(|&&r| (self.counts[r] as f64) < min_pixels).map(|&r| (self.counts[r], r)).collect();
        while let Some((_, r)) = small.pop_first() {
            let target = self.neighbors[r]
                .iter()
                .map(|&n| (self.distance(r, n), n))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let Some((_, target)) = target else { continue };
            small.remove(&(self.counts[target], target));
            let keep = self.merge(r, target);
            if (self.counts[keep] as f64) < min_pixels {
                small.insert((self.counts[keep], keep));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves(left: [f64; 3], right: [f64; 3]) -> Image {
        Image::from_fn(150, 150, |x, _| if x < 75 { left } else { right }).unwrap()
    }

    #[test]
    fn bins_follow_threshold() {
        assert_eq!(quantization_bins(0.0), 64);
        assert_eq!(quantization_bins(300.0), 32);
        assert_eq!(quantization_bins(600.0), 2);
        assert_eq!(quantization_bins(590.0), 2);
    }

    #[test]
    fn constant_image_is_one_region() {
        let rm = segment(&Image::filled(40, 30, [0.3, 0.6, 0.1]).unwrap(), 300.0, 0.4);
        assert_eq!(rm.count(), 1);
    }

    #[test]
    fn distant_halves_stay_apart() {
        // black vs (1, 1, 1)/√3·√3: normalized distance exactly 1.0
        let img = halves([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let rm = segment(&img, 300.0, 0.4);
        assert_eq!(rm.count(), 2);
        assert_eq!(rm.label(0, 0), 0);
        assert_eq!(rm.label(149, 0), 1);
    }

    #[test]
    fn close_halves_merge() {
        // per-channel step 0.1 gives normalized distance 0.1·√3/√3 = 0.1
        let img = halves([0.2, 0.3, 0.4], [0.3, 0.4, 0.5]);
        let rm = segment(&img, 300.0, 0.4);
        assert_eq!(rm.count(), 1);
    }

    #[test]
    fn tiny_islands_are_absorbed() {
        let img = Image::from_fn(100, 100, |x, y| if (x, y) == (50, 50) { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] }).unwrap();
        let rm = segment(&img, 300.0, 0.4);
        assert_eq!(rm.count(), 1);
    }

    #[test]
    fn tie_merges_lower_pair_first() {
        // stripes A|B|C with d(A,B) == d(B,C) == 0.2 exactly; (A,B) is the smaller pair
        let img = Image::from_fn(90, 30, |x, _| match x / 30 {
            0 => [0.0, 0.0, 0.0],
            1 => [0.2, 0.2, 0.2],
            _ => [0.4, 0.4, 0.4],
        })
        .unwrap();
        let rm = segment(&img, 300.0, 0.25);
        // A+B mean 0.1 is 0.3 from C: above threshold, so C survives alone
        assert_eq!(rm.count(), 2);
        assert_eq!(rm.label(0, 0), rm.label(45, 0));
        assert_ne!(rm.label(45, 0), rm.label(89, 0));
    }

    #[test]
    fn adjacent_regions_respect_merge_threshold() {
        let img = Image::from_fn(120, 120, |x, y| {
            let v = ((x / 20) * 37 + (y / 15) * 11) % 10;
            [v as f64 / 9.0, ((v * 3) % 10) as f64 / 9.0, 0.5]
        })
        .unwrap();
        let rm = segment(&img, 300.0, 0.4);
        let means = region_means(&rm, &img);
        for y in 0..120 {
            for x in 0..120 {
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx < 120 && ny < 120 {
                        let (a, b) = (rm.label(x, y), rm.label(nx, ny));
                        if a != b {
                            assert!(normalized_color_distance(means[a], means[b]) >= 0.4);
                        }
                    }
                }
            }
        }
        assert_eq!(rm.pixel_counts().iter().sum::<usize>(), 120 * 120);
    }
}
