//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use grembed_cli::datasets::{dataset_manifest, DatasetKind};
use grembed_cli::toy::{generate_toy_dataset, TOY_SEED};
use grembed_cli::{run_stage, split_coil_protocol, split_eth_protocol, Manifest, ManifestEntry, Stage, StageContext};
use grembed_core::{normalized_color_distance, Arsrg, CsrMatrix, DistanceMatrix, GcnModel, Matrix, RunConfig, SamplerKind, Split};
use grembed_embed::{build_adjacency, normalize_adjacency};
use grembed_gcn::{forward_full, forward_plan, loss_and_gradients, sample_layer, Plan, PlanLayer, Sampler};
use grembed_matcher::synthetic::{graph_from_regions, RegionSpec};
use grembed_matcher::{assign_regions, match_graphs, symmetric_distance, MatchParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why}");
            false
        }
    }
}

// ---------- shared generators ----------

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_normalized(rng: &mut ChaCha8Rng, n: usize, p: f64) -> CsrMatrix {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                trip.push((i, j, 1.0));
                trip.push((j, i, 1.0));
            }
        }
    }
    normalize_adjacency(&CsrMatrix::from_triplets(n, n, &trip)).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize]) -> GcnModel {
    let mut model = GcnModel::zeros(dims);
    model.weights = dims.windows(2).map(|w| random_matrix(rng, w[0], w[1])).collect();
    model
}

// ---------- gradients ----------

fn gradients() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    let (mut instances, mut entries, mut worst) = (0, 0, 0.0f64);
    while instances < 24 {
        let n = rng.gen_range(2..=12);
        let (m, h, c) = (rng.gen_range(1..=8), rng.gen_range(1..=6), rng.gen_range(2..=4));
        let a = random_normalized(&mut rng, n, 0.4);
        let x = random_matrix(&mut rng, n, m);
        let model = random_model(&mut rng, &[m, h, c]);
        let batch: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.6)).collect();
        if batch.is_empty() {
            continue;
        }
        let labels: Vec<usize> = batch.iter().map(|_| rng.gen_range(0..c)).collect();
        let l2 = if instances % 2 == 0 { 0.0 } else { 5e-3 };
        let plan = if instances % 3 == 0 {
            let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
            Plan::sampled(&a, &batch, 2, rng.gen_range(1..=n), &s, &mut rng)
        } else {
            Plan::full(&a, &batch, 2)
        };
        let pre = &forward_plan(&model, &x, &plan).unwrap().preactivations[0];
        if pre.as_slice().iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let (_, grads) = loss_and_gradients(&model, &x, &plan, &labels, l2).unwrap();
        for (l, g) in grads.iter().enumerate() {
            for k in 0..g.as_slice().len() {
                let eval = |delta: f64| {
                    let mut p = model.clone();
                    p.weights[l].as_mut_slice()[k] += delta;
                    loss_and_gradients(&p, &x, &plan, &labels, l2).unwrap().0
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let an = g.as_slice()[k];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
                worst = worst.max(rel);
                entries += 1;
                ensure(rel < 1e-5, || format!("instance {instances} layer {l} entry {k}: analytic {an} vs numeric {fd}"))?;
            }
        }
        instances += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{instances} instances, {entries} entries, worst relative error {worst:.1e}, {secs:.2} s"))
}

// ---------- sampler ----------

/// Per-entry mean and standard error of one sampled layer `Â·XW` over `draws` plans.
fn sampled_moments(a: &CsrMatrix, xw: &Matrix, t: usize, s: &Sampler, draws: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let rows: Vec<usize> = (0..n).collect();
    let len = n * xw.cols();
    let (mut sum, mut sq) = (vec![0.0; len], vec![0.0; len]);
    for _ in 0..draws {
        let layer = sample_layer(a, rows.clone(), t, s, rng);
        let z = layer.coeffs.mul_dense(&xw.select_rows(layer.cols.as_ref().unwrap()));
        for (k, v) in z.as_slice().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let d = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / d).collect();
    let se = (0..len).map(|k| ((sq[k] / d - mean[k] * mean[k]).max(0.0) * d / (d - 1.0) / d).sqrt()).collect();
    (mean, se)
}

fn unbiasedness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = 30;
    let a = random_normalized(&mut rng, n, 0.2);
    let xw = random_matrix(&mut rng, n, 6).matmul(&random_matrix(&mut rng, 6, 8));
    let full = a.mul_dense(&xw);
    let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
    let (mean, se) = sampled_moments(&a, &xw, 10, &s, 10_000, &mut rng);
    let inside = (0..mean.len()).filter(|&k| (mean[k] - full.as_slice()[k]).abs() <= 3.0 * se[k] + 1e-12).count();
    let frac = inside as f64 / mean.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(frac >= 0.99, || format!("only {inside}/{} entries within 3 SE", mean.len()))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{inside}/{} entries within 3 SE over 10^4 draws, {secs:.2} s", mean.len()))
}

fn exact_mode() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.gen_range(1..=20);
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=6)];
        dims.extend((0..depth).map(|_| rng.gen_range(1..=5)));
        let a = random_normalized(&mut rng, n, 0.3);
        let x = random_matrix(&mut rng, n, dims[0]);
        let model = random_model(&mut rng, &dims);
        let mut batch: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if batch.is_empty() {
            batch.push(0);
        }
        // every node taken once under uniform q with t = n
        let q = 1.0 / n as f64;
        let layer = |rows: Vec<usize>| {
            let coeffs = CsrMatrix::from_sorted_rows(
                n,
                rows.iter().map(|&v| a.row_iter(v).map(|(u, w)| (u, w / (n as f64 * q))).collect()).collect(),
            );
            PlanLayer { rows, cols: Some((0..n).collect()), coeffs }
        };
        let mut layers: Vec<PlanLayer> = (1..depth).map(|_| layer((0..n).collect())).collect();
        layers.push(layer(batch.clone()));
        let exact = forward_plan(&model, &x, &Plan { layers }).unwrap().output;
        let full = forward_full(&model, &a, &x).unwrap().select_rows(&batch);
        let diff = exact.max_abs_diff(&full);
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("case {case}: max difference {diff:e}"))?;
    }
    Ok(format!("50 instances, max difference {worst:.1e}"))
}

fn variance_decay() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let n = 300;
    let a = random_normalized(&mut rng, n, 0.05);
    let xw = random_matrix(&mut rng, n, 4);
    let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
    let draws = 400;
    let points: Vec<(f64, f64)> = [4usize, 16, 64, 256]
        .iter()
        .map(|&t| {
            let (_, se) = sampled_moments(&a, &xw, t, &s, draws, &mut rng);
            let var: f64 = se.iter().map(|e| e * e * draws as f64).sum();
            ((t as f64).ln(), var.ln())
        })
        .collect();
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    ensure((slope + 1.0).abs() <= 0.1, || format!("slope {slope:.4}"))?;
    Ok(format!("log-log slope {slope:.4}"))
}

// ---------- matching ----------

fn random_pair(rng: &mut ChaCha8Rng) -> (Arsrg, Arsrg) {
    let dim = 8;
    let palette = [0.0f32, 0.5, 1.0];
    let mut side = |base: Option<&Vec<RegionSpec>>| -> (Vec<RegionSpec>, Vec<(usize, usize)>) {
        let n = rng.gen_range(1..=4);
        let regions: Vec<RegionSpec> = (0..n)
            .map(|r| {
                let k = rng.gen_range(0..=(50 / n).min(12));
                let vectors = (0..k)
                    .map(|_| match base.and_then(|b| b.get(r)).filter(|s| !s.vectors.is_empty() && rng.gen_bool(0.6)) {
                        Some(s) => s.vectors[rng.gen_range(0..s.vectors.len())].iter().map(|v| v + rng.gen_range(-0.05f32..0.05)).collect(),
                        None => (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                    })
                    .collect();
                RegionSpec { color: [0; 3].map(|_: i32| palette[rng.gen_range(0..3)]), vectors }
            })
            .collect();
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.gen_bool(0.5)).collect();
        (regions, edges)
    };
    let (ra, ea) = side(None);
    let (rb, eb) = side(Some(&ra));
    (graph_from_regions("a", ra, &ea), graph_from_regions("b", rb, &eb))
}

fn brute_assign(a: &Arsrg, b: &Arsrg) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for i in 0..a.regions.len() {
            for j in 0..b.regions.len() {
                if pairs.iter().any(|&(p, q)| p == i || q == j) {
                    continue;
                }
                let d = a.regions[i].color_distance(&b.regions[j]);
                let score = pairs.iter().filter(|&&(k, l)| a.neighbors(i).contains(&k) && b.neighbors(j).contains(&l)).count();
                let better = match best {
                    None => true,
                    Some((bd, bs, bi, bj)) => d < bd || (d == bd && (score > bs || (score == bs && (i, j) < (bi, bj)))),
                };
                if better {
                    best = Some((d, score, i, j));
                }
            }
        }
        match best {
            Some((_, _, i, j)) => pairs.push((i, j)),
            None => return pairs,
        }
    }
}

fn brute_matches(a: &Arsrg, b: &Arsrg, p: &MatchParams) -> BTreeSet<(usize, usize)> {
    let dist = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(u, v)| (f64::from(*u) - f64::from(*v)).powi(2)).sum::<f64>().sqrt();
    let ranked = |q: &[f32], g: &Arsrg, pool: &[usize]| {
        let mut v: Vec<(f64, usize)> = pool.iter().enumerate().map(|(pos, &d)| (dist(q, &g.descriptors[d].vector), pos)).collect();
        v.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        v
    };
    let mut all = BTreeSet::new();
    for (i, j) in brute_assign(a, b) {
        let (ia, ib) = (&a.regions[i].descriptor_ids, &b.regions[j].descriptor_ids);
        let mut found = BTreeSet::new();
        for (k, &da) in ia.iter().enumerate() {
            let r = ranked(&a.descriptors[da].vector, b, ib);
            let Some(&(d1, l)) = r.first() else { continue };
            let d2 = r.get(1).map_or(f64::INFINITY, |x| x.0);
            if d1 < p.ratio_threshold * d2 && ranked(&b.descriptors[ib[l]].vector, a, ia)[0].1 == k {
                found.insert((da, ib[l]));
            }
        }
        if found.len() >= p.min_region_matches {
            all.extend(found);
        }
    }
    all
}

fn matching_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let loose = MatchParams { ratio_threshold: 0.8, min_region_matches: 1 };
    let (mut matched_pairs, mut self_checked) = (0, 0);
    for case in 0..100 {
        let (a, b) = random_pair(&mut rng);
        ensure(a.descriptors.len() <= 50 && b.descriptors.len() <= 50, || format!("case {case}: too many descriptors"))?;
        ensure(assign_regions(&a, &b) == brute_assign(&a, &b), || format!("case {case}: region assignment differs"))?;
        for p in [MatchParams::default(), loose] {
            let got: BTreeSet<(usize, usize)> = match_graphs(&a, &b, &p).region_pairs.iter().flat_map(|r| r.matches.iter().copied()).collect();
            ensure(got == brute_matches(&a, &b, &p), || format!("case {case}: match set differs from exhaustive search"))?;
            matched_pairs += usize::from(!got.is_empty());
            let (ab, ba) = (symmetric_distance(&a, &b, &p), symmetric_distance(&b, &a, &p));
            ensure(ab.to_bits() == ba.to_bits(), || format!("case {case}: s(a,b) = {ab} but s(b,a) = {ba}"))?;
            ensure((0.0..=1.0).contains(&ab), || format!("case {case}: distance {ab} outside [0, 1]"))?;
            for g in [&a, &b] {
                // a region can only contribute once it reaches min_region_matches
                let reachable = g.regions.iter().all(|r| r.descriptor_ids.is_empty() || r.descriptor_ids.len() >= p.min_region_matches);
                let selfd = symmetric_distance(g, g, &p);
                let expect = if g.descriptors.is_empty() { Some(1.0) } else if reachable { Some(0.0) } else { None };
                if let Some(expect) = expect {
                    ensure(selfd == expect, || format!("case {case}: s(g,g) = {selfd}"))?;
                    self_checked += usize::from(expect == 0.0);
                }
            }
        }
    }
    ensure(self_checked >= 100, || format!("only {self_checked} self-distance checks"))?;
    Ok(format!("100 pairs agree with exhaustive search ({matched_pairs} runs with matches); s(g,g)=0 on {self_checked} graphs; exact symmetry; range [0,1]"))
}

// ---------- embedding ----------

fn random_dm(rng: &mut ChaCha8Rng, n: usize) -> DistanceMatrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = if rng.gen_bool(0.2) { f64::from(rng.gen_range(0..=10u8)) / 10.0 } else { rng.gen::<f64>() * 0.5 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    DistanceMatrix { names: (0..n).map(|i| i.to_string()).collect(), values: m }
}

fn adjacency_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut edges_seen = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..=50);
        let dm = random_dm(&mut rng, n);
        let mut last = 0;
        for tau in [0.1, 0.2] {
            let a = build_adjacency(&dm, tau).unwrap().to_dense();
            for i in 0..n {
                for j in 0..n {
                    let want = if i != j && dm.values[(i, j)] < tau { 1.0 } else { 0.0 };
                    ensure(a[(i, j)] == want, || format!("case {case} tau {tau}: entry ({i},{j})"))?;
                }
            }
            let nnz = a.as_slice().iter().filter(|&&v| v != 0.0).count();
            ensure(nnz >= last, || format!("case {case}: edge count fell from {last} to {nnz}"))?;
            last = nnz;
        }
        edges_seen += last;
    }
    Ok(format!("100 matrices, tau 0.1 and 0.2, zero diagonal, monotone edge counts ({edges_seen} directed edges at 0.2)"))
}

fn normalization_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for n in [1usize, 2, 5, 17, 64, 128, 200] {
        let p = rng.gen_range(0.01..0.4);
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    trip.push((i, j, 1.0));
                    trip.push((j, i, 1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).to_dense();
        let got = normalize_adjacency(&CsrMatrix::from_dense(&a)).unwrap().to_dense();
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>() + 1.0).collect();
        for i in 0..n {
            for j in 0..n {
                let tilde = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
                let want = tilde / deg[i].sqrt() / deg[j].sqrt();
                let d = (got[(i, j)] - want).abs();
                worst = worst.max(d);
                ensure(d < 1e-12, || format!("n = {n}: entry ({i},{j}) off by {d:e}"))?;
            }
        }
    }
    Ok(format!("n up to 200, max difference {worst:.1e}"))
}

// ---------- harness ----------

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grembed-fastgcn"))
}

fn status(cmd: &mut Command) -> i32 {
    cmd.arg("--quiet").output().expect("binary runs").status.code().unwrap_or(-1)
}

const ARTIFACTS: [&str; 6] = ["config.gfg", "distances.gfg", "features.gfg", "dataset_graph.gfg", "model.gfg", "graphs"];

fn artifact_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for name in ARTIFACTS {
        let p = dir.join(name);
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            out.extend(files.into_iter().map(|f| (f.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&f).unwrap())));
        } else {
            out.push((PathBuf::from(name), std::fs::read(&p).unwrap_or_default()));
        }
    }
    out
}

fn same_artifacts(a: &Path, b: &Path) -> Result<usize, String> {
    let (x, y) = (artifact_bytes(a), artifact_bytes(b));
    ensure(x.len() == y.len(), || format!("{} vs {} artifact files", x.len(), y.len()))?;
    for ((pa, da), (pb, db)) in x.iter().zip(&y) {
        ensure(pa == pb, || format!("{} vs {}", pa.display(), pb.display()))?;
        ensure(!da.is_empty(), || format!("{} is missing or empty", pa.display()))?;
        ensure(da == db, || format!("{} differs", pa.display()))?;
    }
    Ok(x.len())
}

struct ToyRun {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
    lib_out: PathBuf,
}

fn toy_run() -> ToyRun {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    let config = tmp.path().join("toy.cfg");
    std::fs::write(&config, "dataset = toy\n").unwrap();
    let lib_out = tmp.path().join("lib_run");
    ToyRun { data, config, lib_out, _tmp: tmp }
}

fn toy_dataset(toy: &ToyRun) -> Check {
    let m = generate_toy_dataset(&toy.data, TOY_SEED).map_err(|e| e.to_string())?;
    let pngs = std::fs::read_dir(&toy.data).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    ensure(m.len() == 60 && pngs == 60 && toy.data.join("manifest.tsv").is_file(), || format!("{pngs} images"))?;
    ensure(m.count(Split::Train) == 30 && m.count(Split::Test) == 30, || "split is not 30/30".into())?;
    let again = tempfile::tempdir().unwrap();
    generate_toy_dataset(again.path(), TOY_SEED).map_err(|e| e.to_string())?;
    for e in &m.entries {
        let name = e.path.file_name().unwrap();
        ensure(std::fs::read(&e.path).unwrap() == std::fs::read(again.path().join(name)).unwrap(), || format!("{name:?} differs between runs"))?;
    }
    let cfg = RunConfig::for_dataset("toy").unwrap();
    let names = m.class_names();
    let mut means = vec![[0.0f64; 3]; names.len()];
    let mut fewest = usize::MAX;
    for (e, &label) in m.entries.iter().zip(&m.labels()) {
        let img = grembed_frontend::load_and_resize(&e.path, cfg.image_size).unwrap();
        for p in img.pixels() {
            for c in 0..3 {
                means[label][c] += p[c] / (img.pixels().len() * 20) as f64;
            }
        }
        fewest = fewest.min(grembed_frontend::segment(&img, cfg.quantization_threshold, cfg.merge_threshold).count());
    }
    let mut sep = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            sep = sep.min(normalized_color_distance(means[i], means[j]));
        }
    }
    ensure(sep >= 0.3, || format!("class-mean colour separation {sep:.3}"))?;
    ensure(fewest >= 2, || format!("an image segmented into {fewest} region(s)"))?;
    Ok(format!("60 PNGs reproducible from seed; class-mean separation {sep:.3}; every image has ≥ {fewest} regions"))
}

fn end_to_end(toy: &ToyRun) -> Check {
    let start = Instant::now();
    let cfg = RunConfig::for_dataset("toy").unwrap();
    let ctx = StageContext::new(cfg, Some(toy.data.join("manifest.tsv")), toy.lib_out.clone());
    let outcomes = run_stage(Stage::Pipeline, &ctx).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let acc = outcomes.last().and_then(|o| o.accuracy).ok_or("no accuracy reported")?;
    ensure(acc >= 0.90, || format!("test accuracy {acc:.4}"))?;
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    let confusion = std::fs::read_to_string(toy.lib_out.join("reports/confusion.csv")).unwrap();
    let manifest = Manifest::read(&toy.data.join("manifest.tsv")).unwrap();
    for line in confusion.lines().filter(|l| !l.starts_with('#') && !l.starts_with("true\\pred")) {
        let mut cells = line.split(',');
        let class = cells.next().unwrap();
        let row: usize = cells.map(|c| c.parse::<usize>().unwrap()).sum();
        let want = manifest.entries.iter().filter(|e| e.class == class && e.split == Split::Test).count();
        ensure(row == want, || format!("confusion row {class} sums to {row}, {want} test images"))?;
    }
    let mut ova = ctx.clone();
    ova.mode = grembed_cli::EvalMode::Ova;
    run_stage(Stage::Train, &ova).map_err(|e| e.to_string())?;
    let macro_acc = run_stage(Stage::Eval, &ova).map_err(|e| e.to_string())?[0].accuracy.ok_or("no ova accuracy")?;
    ensure((0.0..=1.0).contains(&macro_acc), || format!("ova macro accuracy {macro_acc}"))?;
    Ok(format!("test accuracy {acc:.4} in {secs:.1} s; confusion rows match per-class test counts; ova macro accuracy {macro_acc:.4}"))
}

fn determinism(toy: &ToyRun) -> Check {
    let manifest = toy.data.join("manifest.tsv");
    let out = toy.lib_out.parent().unwrap().join("bin_run");
    let code = status(bin().arg("pipeline").arg("--config").arg(&toy.config).arg("--manifest").arg(&manifest).arg("--out").arg(&out).args(["--workers", "4"]));
    ensure(code == 0, || format!("pipeline with 4 workers exited {code}"))?;
    let files = same_artifacts(&toy.lib_out, &out).map_err(|e| format!("1 vs 4 workers: {e}"))?;
    let snapshot = tempfile::tempdir().unwrap();
    for (rel, bytes) in artifact_bytes(&out) {
        let p = snapshot.path().join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }
    for (stage, workers) in [("extract", "2"), ("match", "3"), ("embed", "1"), ("graph", "1"), ("train", "1"), ("eval", "1")] {
        let code = status(bin().arg(stage).arg("--config").arg(&toy.config).arg("--manifest").arg(&manifest).arg("--out").arg(&out).args(["--workers", workers]));
        ensure(code == 0, || format!("{stage} rerun exited {code}"))?;
    }
    same_artifacts(snapshot.path(), &out).map_err(|e| format!("stage reruns: {e}"))?;
    let eval = std::fs::read_to_string(out.join("reports/eval.txt")).unwrap();
    let blocks: Vec<&str> = eval.split("\n\n").filter(|b| !b.trim().is_empty()).collect();
    ensure(blocks.len() == 2 && blocks[0] == blocks[1], || "eval rerun changed the report".into())?;
    Ok(format!("{files} artifact files bit-identical across worker counts and per-stage reruns; eval report reproduced"))
}

fn exit_codes(toy: &ToyRun) -> Check {
    let manifest = toy.data.join("manifest.tsv");
    let fresh = tempfile::tempdir().unwrap();
    let missing = status(bin().arg("train").arg("--config").arg(&toy.config).arg("--out").arg(fresh.path()));
    let mismatch = status(bin().arg("train").arg("--config").arg(&toy.config).args(["--set", "tau=0.5"]).arg("--out").arg(&toy.lib_out));
    let bad = fresh.path().join("bad.tsv");
    std::fs::write(&bad, "only-one-field\n").unwrap();
    let malformed = status(bin().arg("extract").arg("--config").arg(&toy.config).arg("--manifest").arg(&bad).arg("--out").arg(fresh.path()));
    let bad_value = status(bin().arg("graph").arg("--config").arg(&toy.config).args(["--set", "tau=0"]).arg("--manifest").arg(&manifest).arg("--out").arg(fresh.path()));
    let ok = status(bin().arg("eval").arg("--config").arg(&toy.config).arg("--manifest").arg(&manifest).arg("--out").arg(&toy.lib_out));
    let got = [missing, mismatch, malformed, bad_value, ok];
    ensure(got == [2, 3, 4, 4, 0], || format!("missing/mismatch/malformed/bad value/ok exited {got:?}, expected [2, 3, 4, 4, 0]"))?;
    Ok("missing input 2, config-hash mismatch 3, validation failures 4, success 0".into())
}

fn coil_layout(root: &Path, classes: usize, views: usize) {
    for k in 1..=classes {
        let hue = k as f32 / classes as f32;
        let bg = [hue, 1.0 - hue, 0.5 * hue + 0.25].map(|v| (v * 255.0) as u8);
        for v in 0..views {
            let img = image::RgbImage::from_fn(64, 64, |x, y| {
                let inside = (16 + 4 * v as u32..40 + 4 * v as u32).contains(&x) && (20..44).contains(&y);
                image::Rgb(if inside { [250, 250, 240] } else { bg })
            });
            img.save(root.join(format!("obj{k}__{}.png", v * 5))).unwrap();
        }
    }
}

fn coil_end_to_end() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("coil");
    std::fs::create_dir_all(&root).unwrap();
    coil_layout(&root, 30, 4);
    let m = dataset_manifest(DatasetKind::Coil100, &root, 3, None).map_err(|e| e.to_string())?;
    ensure(m.class_names().len() == 25, || format!("{} classes selected", m.class_names().len()))?;
    ensure(m.count(Split::Train) == 25 && m.count(Split::Test) == 75, || "expected 25 train / 75 test".into())?;
    let mpath = tmp.path().join("manifest.tsv");
    m.write(&mpath).unwrap();
    let mut cfg = RunConfig::for_dataset("coil100").unwrap();
    cfg.epochs = 50;
    let ctx = StageContext::new(cfg, Some(mpath), tmp.path().join("out"));
    let outcomes = run_stage(Stage::Pipeline, &ctx).map_err(|e| e.to_string())?;
    let acc = outcomes.last().and_then(|o| o.accuracy).ok_or("no accuracy reported")?;

    // protocol arithmetic at full size, without images
    let listing = |classes: usize, objects: usize, views: usize| Manifest {
        dataset: "x".into(),
        entries: (0..classes)
            .flat_map(|c| (0..objects).flat_map(move |o| (0..views).map(move |v| (c, o, v))))
            .map(|(c, o, v)| ManifestEntry { path: PathBuf::from(format!("/d/c{c}/o{c}_{o}/{v}.png")), class: format!("c{c}"), split: Split::Train })
            .collect(),
    };
    let coil = split_coil_protocol(&listing(100, 1, 72), 1).unwrap();
    let per_class_train: BTreeSet<usize> =
        coil.class_names().iter().map(|c| coil.entries.iter().filter(|e| &e.class == c && e.split == Split::Train).count()).collect();
    ensure(coil.class_names().len() == 25 && per_class_train == BTreeSet::from([8]), || "100 × 72 should give 25 classes × 8 train".into())?;
    let err = split_coil_protocol(&listing(10, 1, 72), 1).unwrap_err().to_string();
    ensure(err.contains("requires ≥ 25 classes"), || format!("10-class error: {err}"))?;
    let eth = split_eth_protocol(&listing(6, 10, 41), 1).unwrap();
    ensure(eth.count(Split::Train) == 240 && eth.count(Split::Test) == 360, || "ETH split is not 240/360".into())?;
    Ok(format!("25-class 11%/89% run completed (accuracy {acc:.3}, no threshold); 100×72 → 25 × 8 train; ETH 240/360"))
}

fn presets() -> Check {
    let rows = [("eth80", 30000, 256, 1024, 0.2), ("coil100", 10000, 512, 1024, 0.1), ("aloi", 5000, 128, 256, 0.2)];
    for (name, epochs, hidden, batch, tau) in rows {
        let c = RunConfig::for_dataset(name).unwrap();
        let got = (c.epochs, c.hidden_size, c.learning_rate, c.l2, c.batch_size, c.tau);
        ensure(got == (epochs, hidden, 0.1, 0.0, batch, tau), || format!("{name}: {got:?}"))?;
        let parsed = RunConfig::parse(&format!("dataset = {name}\n")).map_err(|e| e.to_string())?;
        ensure(parsed == c, || format!("{name}: file default differs from preset"))?;
    }
    Ok("eth80 30000/256/0.1/0/1024/0.2, coil100 10000/512/0.1/0/1024/0.1, aloi 5000/128/0.1/0/256/0.2".into())
}

fn main() {
    let toy = toy_run();
    let results = [
        run("gradient correctness", gradients),
        run("sampler unbiasedness", unbiasedness),
        run("exact-mode equivalence", exact_mode),
        run("variance decay", variance_decay),
        run("matching oracle", matching_oracle),
        run("adjacency threshold oracle", adjacency_oracle),
        run("normalization oracle", normalization_oracle),
        run("toy dataset", || toy_dataset(&toy)),
        run("end-to-end toy gate", || end_to_end(&toy)),
        run("determinism", || determinism(&toy)),
        run("stage exit codes", || exit_codes(&toy)),
        run("dataset presets", presets),
        run("coil protocol end-to-end", coil_end_to_end),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
