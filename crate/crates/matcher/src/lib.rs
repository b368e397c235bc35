//! Two-level graph distance between region graphs.
//!
//! Level 1 pairs regions one-to-one, greedily by ascending mean-colour
//! distance; among equally distant candidates the pair whose already
//! assigned neighbours correspond most often wins, then the smaller
//! `(region_a, region_b)`. Level 2 matches descriptors inside each assigned
//! pair by nearest neighbour with a ratio test and mutual-nearest filtering,
//! and keeps the pair only if it gathers at least `min_region_matches`
//! matches. The distance is `1 − 2·matched / (|D_a| + |D_b|)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use grembed_core::{Arsrg, Descriptor, DistanceMatrix, Matrix, RunConfig};
use rayon::prelude::*;

pub mod synthetic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub ratio_threshold: f64,
    pub min_region_matches: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { ratio_threshold: 0.6, min_region_matches: 3 }
    }
}

impl MatchParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { ratio_threshold: cfg.ratio_threshold, min_region_matches: cfg.min_region_matches }
    }
}

/// One retained region pair and its descriptor matches (descriptor
/// indices into each graph).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPairMatch {
    pub region_a: usize,
    pub region_b: usize,
    pub matches: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub region_pairs: Vec<RegionPairMatch>,
    pub total_matched: usize,
    pub distance: f64,
}

impl MatchResult {
    /// `(region_a, region_b, matched_descriptor_count)` per retained pair.
    pub fn pair_counts(&self) -> Vec<(usize, usize, usize)> {
        self.region_pairs.iter().map(|p| (p.region_a, p.region_b, p.matches.len())).collect()
    }
}

/// Swap-in point for alternative matchers.
pub trait GraphMatcher: Sync {
    fn match_graphs(&self, a: &Arsrg, b: &Arsrg) -> MatchResult;

    /// Average of both directions; exactly symmetric.
    fn symmetric_distance(&self, a: &Arsrg, b: &Arsrg) -> f64 {
        (self.match_graphs(a, b).distance + self.match_graphs(b, a).distance) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TwoLevelMatcher {
    pub params: MatchParams,
}

impl GraphMatcher for TwoLevelMatcher {
    fn match_graphs(&self, a: &Arsrg, b: &Arsrg) -> MatchResult {
        match_graphs(a, b, &self.params)
    }
}

/// Level 1: one-to-one region assignment, in assignment order.
pub fn assign_regions(a: &Arsrg, b: &Arsrg) -> Vec<(usize, usize)> {
    let (ra, rb) = (a.regions.len(), b.regions.len());
    let adj_a = a.adjacency_lists();
    let adj_b = b.adjacency_lists();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(ra * rb);
    for (i, r) in a.regions.iter().enumerate() {
        for (j, s) in b.regions.iter().enumerate() {
            candidates.push((r.color_distance(s), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut partner_of_a: Vec<Option<usize>> = vec![None; ra];
    let mut taken_b = vec![false; rb];
    let mut out = Vec::new();
    let mut pos = 0;
    let free = |c: &(f64, usize, usize), pa: &[Option<usize>], tb: &[bool]| pa[c.1].is_none() && !tb[c.2];
    while out.len() < ra.min(rb) {
        while pos < candidates.len() && !free(&candidates[pos], &partner_of_a, &taken_b) {
            pos += 1;
        }
        if pos == candidates.len() {
            break;
        }
        let dist = candidates[pos].0;
        let mut best: Option<(usize, usize, usize)> = None;
        for c in candidates[pos..].iter().take_while(|c| c.0.to_bits() == dist.to_bits()) {
            if !free(c, &partner_of_a, &taken_b) {
                continue;
            }
            let (i, j) = (c.1, c.2);
            let score = adj_a[i].iter().filter(|&&k| partner_of_a[k].is_some_and(|l| adj_b[j].contains(&l))).count();
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, i, j));
            }
        }
        let (_, i, j) = best.expect("position points at a free candidate");
        partner_of_a[i] = Some(j);
        taken_b[j] = true;
        out.push((i, j));
    }
    out
}

/// Index (into `pool`) of the nearest and the distance to the second
/// nearest; ties resolve to the lower index. `None` for an empty pool.
fn nearest_two(query: &Descriptor, pool: &[&Descriptor]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (k, d) in pool.iter().enumerate() {
        let dist = query.distance(d);
        match best {
            Some((_, b)) if dist >= b => second = second.min(dist),
            Some((_, b)) => {
                second = b;
                best = Some((k, dist));
            }
            None => best = Some((k, dist)),
        }
    }
    best.map(|(k, d)| (k, d, second))
}

/// Level 2 inside one region pair: `a_ids[k] → b_ids[l]` is a match iff
/// `l` is `k`'s nearest, passes `nearest < ratio·second_nearest` (a lone
/// candidate has an infinite second distance), and `k` is `l`'s nearest.
pub fn match_descriptors(a: &Arsrg, a_ids: &[usize], b: &Arsrg, b_ids: &[usize], ratio_threshold: f64) -> Vec<(usize, usize)> {
    let pa: Vec<&Descriptor> = a_ids.iter().map(|&d| &a.descriptors[d]).collect();
    let pb: Vec<&Descriptor> = b_ids.iter().map(|&d| &b.descriptors[d]).collect();
    let mut out = Vec::new();
    for (k, q) in pa.iter().enumerate() {
        let Some((l, nearest, second)) = nearest_two(q, &pb) else { return out };
        if nearest >= ratio_threshold * second {
            continue;
        }
        let back = nearest_two(pb[l], &pa).map(|(k2, _, _)| k2);
        if back == Some(k) {
            out.push((a_ids[k], b_ids[l]));
        }
    }
    out
}

pub fn match_graphs(a: &Arsrg, b: &Arsrg, params: &MatchParams) -> MatchResult {
    let mut region_pairs = Vec::new();
    let mut total_matched = 0;
    for (ra, rb) in assign_regions(a, b) {
        let matches = match_descriptors(a, &a.regions[ra].descriptor_ids, b, &b.regions[rb].descriptor_ids, params.ratio_threshold);
        if matches.len() >= params.min_region_matches {
            total_matched += matches.len();
            region_pairs.push(RegionPairMatch { region_a: ra, region_b: rb, matches });
        }
    }
    let denom = a.descriptors.len() + b.descriptors.len();
    let distance = if denom == 0 { 1.0 } else { (1.0 - 2.0 * total_matched as f64 / denom as f64).clamp(0.0, 1.0) };
    MatchResult { region_pairs, total_matched, distance }
}

pub fn symmetric_distance(a: &Arsrg, b: &Arsrg, params: &MatchParams) -> f64 {
    TwoLevelMatcher { params: *params }.symmetric_distance(a, b)
}

/// Called as `(pairs_done, pairs_total)` from worker threads.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// All pairwise symmetric distances. The `n(n−1)/2` unordered pairs are
/// spread over `workers` threads; each cell is computed independently, so
/// the result does not depend on scheduling or worker count.
pub fn build_distance_matrix<M: GraphMatcher>(
    graphs: &[Arsrg],
    matcher: &M,
    workers: usize,
    progress: Option<Progress<'_>>,
) -> DistanceMatrix {
    let n = graphs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let total = pairs.len();
    let done = AtomicUsize::new(0);
    let compute = || {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let d = matcher.symmetric_distance(&graphs[i], &graphs[j]);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(report) = progress {
                    report(finished, total);
                }
                d
            })
            .collect::<Vec<f64>>()
    };
    let values = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(compute),
        Err(_) => compute(),
    };
    let mut m = Matrix::zeros(n, n);
    for (&(i, j), &d) in pairs.iter().zip(&values) {
        m[(i, j)] = d;
        m[(j, i)] = d;
    }
    DistanceMatrix { names: graphs.iter().map(|g| g.image_id.clone()).collect(), values: m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{basis, one_region_graph};

    #[test]
    fn shared_four_of_six() {
        // a: e0..e3 + e4, e5; b: e0..e3 + e6, e7; unshared ones are
        // equidistant from everything and fail the ratio test
        let a = one_region_graph("a", (0..6).map(|k| basis(16, k)).collect());
        let b = one_region_graph("b", [0, 1, 2, 3, 6, 7].iter().map(|&k| basis(16, k)).collect());
        let r = match_graphs(&a, &b, &MatchParams::default());
        assert_eq!(r.total_matched, 4);
        assert!((r.distance - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.pair_counts(), vec![(0, 0, 4)]);
    }

    #[test]
    fn orthogonal_descriptors_never_match() {
        let a = one_region_graph("a", (0..10).map(|k| basis(32, k)).collect());
        let b = one_region_graph("b", (10..20).map(|k| basis(32, k)).collect());
        let r = match_graphs(&a, &b, &MatchParams::default());
        assert_eq!(r.total_matched, 0);
        assert_eq!(r.distance, 1.0);
    }

    #[test]
    fn empty_graphs_are_maximally_distant() {
        let a = one_region_graph("a", vec![]);
        assert_eq!(match_graphs(&a, &a, &MatchParams::default()).distance, 1.0);
    }

    #[test]
    fn too_few_matches_drop_the_pair() {
        let a = one_region_graph("a", (0..2).map(|k| basis(8, k)).collect());
        let r = match_graphs(&a, &a, &MatchParams::default());
        assert_eq!(r.total_matched, 0);
        let r = match_graphs(&a, &a, &MatchParams { min_region_matches: 2, ..Default::default() });
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn lone_candidate_passes_ratio_test() {
        let a = one_region_graph("a", vec![basis(4, 0)]);
        let r = match_graphs(&a, &a, &MatchParams { min_region_matches: 1, ..Default::default() });
        assert_eq!(r.total_matched, 1);
    }

    #[test]
    fn one_matrix_cell_per_pair() {
        let g = one_region_graph("g", (0..5).map(|k| basis(8, k)).collect());
        let m = build_distance_matrix(std::slice::from_ref(&g), &TwoLevelMatcher::default(), 1, None);
        assert_eq!(m.values, Matrix::zeros(1, 1));
        let m = build_distance_matrix(&[g.clone(), g.clone(), g], &TwoLevelMatcher::default(), 2, None);
        assert_eq!(m.values, Matrix::zeros(3, 3));
    }
}
