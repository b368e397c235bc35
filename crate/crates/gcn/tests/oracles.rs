use grembed_core::{CsrMatrix, DatasetGraph, DistanceMatrix, GcnModel, Matrix, Optimizer, RunConfig, SamplerKind, Split};
use grembed_embed::{assemble_dataset_graph, build_adjacency, normalize_adjacency};
use grembed_gcn::{
    forward_full, forward_plan, init_model, loss_and_gradients, predict, sample_layer, train, Plan, PlanLayer, Sampler,
    TrainOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> CsrMatrix {
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

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_model(rng: &mut ChaCha8Rng, m: usize, h: usize, c: usize) -> GcnModel {
    let mut model = GcnModel::zeros(&[m, h, c]);
    model.weights = vec![random_matrix(rng, m, h), random_matrix(rng, h, c)];
    model
}

/// Straight-line dense evaluation of `Â·relu(Â X W0)·W1` with plain loops.
fn dense_forward(a: &Matrix, x: &Matrix, w0: &Matrix, w1: &Matrix) -> Matrix {
    let n = a.rows();
    let (m, h, c) = (x.cols(), w0.cols(), w1.cols());
    let mut ax = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..m {
                ax[i][j] += a[(i, k)] * x[(k, j)];
            }
        }
    }
    let mut hid = vec![vec![0.0; h]; n];
    for i in 0..n {
        for j in 0..h {
            let s: f64 = (0..m).map(|k| ax[i][k] * w0[(k, j)]).sum();
            hid[i][j] = s.max(0.0);
        }
    }
    let mut ah = vec![vec![0.0; h]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..h {
                ah[i][j] += a[(i, k)] * hid[k][j];
            }
        }
    }
    Matrix::from_fn(n, c, |i, j| (0..h).map(|k| ah[i][k] * w1[(k, j)]).sum())
}

#[test]
fn full_forward_matches_dense_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let a = random_graph(&mut rng, 6, 0.4);
        let x = random_matrix(&mut rng, 6, 5);
        let model = random_model(&mut rng, 5, 4, 3);
        let got = forward_full(&model, &a, &x).unwrap();
        let want = dense_forward(&a.to_dense(), &x, &model.weights[0], &model.weights[1]);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn exact_mode_matches_full_forward() {
    // every node drawn once from uniform q with t = n: coefficients Â/(n·(1/n))
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 9;
    let a = random_graph(&mut rng, n, 0.3);
    let x = random_matrix(&mut rng, n, 4);
    let model = random_model(&mut rng, 4, 5, 3);
    let q = 1.0 / n as f64;
    let enumerated = |rows: Vec<usize>| {
        let coeffs = CsrMatrix::from_sorted_rows(
            n,
            rows.iter().map(|&v| a.row_iter(v).map(|(u, w)| (u, w / (n as f64 * q))).collect()).collect(),
        );
        PlanLayer { rows, cols: Some((0..n).collect()), coeffs }
    };
    let batch = vec![1, 4, 7];
    let plan = Plan { layers: vec![enumerated((0..n).collect()), enumerated(batch.clone())] };
    let exact = forward_plan(&model, &x, &plan).unwrap().output;
    let full = forward_full(&model, &a, &x).unwrap().select_rows(&batch);
    assert!(exact.max_abs_diff(&full) < 1e-12);
    let plan_full = forward_plan(&model, &x, &Plan::full(&a, &batch, 2)).unwrap().output;
    assert!(plan_full.max_abs_diff(&full) < 1e-12);
}

/// `|a − f| / max(|a|, |f|, 1e-4)`
fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

fn min_abs_preactivation(model: &GcnModel, x: &Matrix, plan: &Plan) -> f64 {
    let cache = forward_plan(model, x, plan).unwrap();
    cache.preactivations[0].as_slice().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

#[test]
#[allow(clippy::needless_range_loop)]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let step = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 40 {
        let n = rng.gen_range(2..=12);
        let (m, h, c) = (rng.gen_range(1..=8), rng.gen_range(1..=6), rng.gen_range(2..=4));
        let a = random_graph(&mut rng, n, 0.4);
        let x = random_matrix(&mut rng, n, m);
        let model = random_model(&mut rng, m, h, c);
        let batch: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.6)).collect();
        if batch.is_empty() {
            continue;
        }
        let labels: Vec<usize> = batch.iter().map(|_| rng.gen_range(0..c)).collect();
        let l2 = if checked % 2 == 0 { 0.0 } else { 0.01 };
        let plan = if checked % 3 == 0 {
            let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
            Plan::sampled(&a, &batch, 2, rng.gen_range(1..=n), &s, &mut rng)
        } else {
            Plan::full(&a, &batch, 2)
        };
        // finite differences are meaningless across a rectifier kink
        if min_abs_preactivation(&model, &x, &plan) < 1e-3 {
            continue;
        }
        let (_, grads) = loss_and_gradients(&model, &x, &plan, &labels, l2).unwrap();
        for l in 0..2 {
            for k in 0..model.weights[l].as_slice().len() {
                let eval = |delta: f64| {
                    let mut p = model.clone();
                    p.weights[l].as_mut_slice()[k] += delta;
                    loss_and_gradients(&p, &x, &plan, &labels, l2).unwrap().0
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let e = rel_err(grads[l].as_slice()[k], fd);
                worst = worst.max(e);
                assert!(e < 1e-5, "layer {l} entry {k}: analytic {} vs numeric {fd}", grads[l].as_slice()[k]);
            }
        }
        checked += 1;
    }
    eprintln!("worst gradient relative error {worst:.2e}");
}

#[test]
fn zero_l2_adds_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_graph(&mut rng, 8, 0.5);
    let x = random_matrix(&mut rng, 8, 3);
    let model = random_model(&mut rng, 3, 4, 2);
    let plan = Plan::full(&a, &[0, 2, 5], 2);
    let labels = [1, 0, 1];
    let (l0, g0) = loss_and_gradients(&model, &x, &plan, &labels, 0.0).unwrap();
    let (l1, g1) = loss_and_gradients(&model, &x, &plan, &labels, 0.5).unwrap();
    assert!((l1 - l0 - 0.5 * model.weights.iter().map(Matrix::sum_squares).sum::<f64>()).abs() < 1e-12);
    for l in 0..2 {
        let reg = Matrix::from_fn(g0[l].rows(), g0[l].cols(), |i, j| g1[l][(i, j)] - g0[l][(i, j)]);
        assert!(reg.max_abs_diff(&model.weights[l].map(|w| w * 1.0)) < 1e-12);
    }
}

/// Mean and standard error per entry of the sampled single-layer
/// pre-activation over `draws` independent plans.
fn sampled_moments(a: &CsrMatrix, xw: &Matrix, t: usize, s: &Sampler, draws: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let n = a.rows();
    let rows: Vec<usize> = (0..n).collect();
    let mut sum = Matrix::zeros(n, xw.cols());
    let mut sq = Matrix::zeros(n, xw.cols());
    for _ in 0..draws {
        let layer = sample_layer(a, rows.clone(), t, s, rng);
        let z = layer.coeffs.mul_dense(&xw.select_rows(layer.cols.as_ref().unwrap()));
        for (k, v) in z.as_slice().iter().enumerate() {
            sum.as_mut_slice()[k] += v;
            sq.as_mut_slice()[k] += v * v;
        }
    }
    let d = draws as f64;
    let mean = sum.map(|v| v / d);
    let se = Matrix::from_fn(n, xw.cols(), |i, j| {
        let var = (sq[(i, j)] / d - mean[(i, j)].powi(2)).max(0.0) * d / (d - 1.0);
        (var / d).sqrt()
    });
    (mean, se)
}

#[test]
fn sampled_preactivation_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (n, m, h) = (30, 6, 8);
    let mut outside = 0;
    let mut total = 0;
    for instance in 0..2 {
        let a = if instance == 0 { random_graph(&mut rng, n, 0.2) } else { CsrMatrix::from_dense(&Matrix::identity(n)) };
        let xw = random_matrix(&mut rng, n, m).matmul(&random_matrix(&mut rng, m, h));
        let full = a.mul_dense(&xw);
        let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
        let (mean, se) = sampled_moments(&a, &xw, 10, &s, 10_000, &mut rng);
        for k in 0..full.as_slice().len() {
            let (mu, sd, f) = (mean.as_slice()[k], se.as_slice()[k], full.as_slice()[k]);
            total += 1;
            if (mu - f).abs() > 3.0 * sd + 1e-12 {
                outside += 1;
            }
        }
    }
    eprintln!("{outside} of {total} entries outside 3 standard errors");
    assert_eq!(outside, 0);
}

#[test]
fn variance_decays_as_one_over_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let n = 300;
    let a = random_graph(&mut rng, n, 0.05);
    let xw = random_matrix(&mut rng, n, 4);
    let s = Sampler::new(&a, SamplerKind::Importance).unwrap();
    let ts = [4usize, 16, 64, 256];
    let points: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let (_, se) = sampled_moments(&a, &xw, t, &s, 400, &mut rng);
            let var: f64 = se.as_slice().iter().map(|e| e * e * 400.0).sum();
            ((t as f64).ln(), var.ln())
        })
        .collect();
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    eprintln!("log-log variance slope {slope:.4}");
    assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
}

/// 3 classes × 20 nodes; within-class distances below 0.45, across above
/// 0.55, alternating train/test.
fn toy_graph(seed: u64, tau: f64) -> DatasetGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 60;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = if i / 20 == j / 20 { rng.gen_range(0.05..0.45) } else { rng.gen_range(0.55..1.0) };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let dm = DistanceMatrix { names: (0..n).map(|i| i.to_string()).collect(), values: m };
    let a = build_adjacency(&dm, tau).unwrap();
    let ah = normalize_adjacency(&a).unwrap();
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i / 20)).collect();
    let split = (0..n).map(|i| if i % 2 == 0 { Split::Train } else { Split::Test }).collect();
    assemble_dataset_graph(dm.values, a, ah, &labels, 3, split).unwrap()
}

fn toy_options() -> TrainOptions {
    TrainOptions::from_config(&RunConfig::for_dataset("toy").unwrap())
}

#[test]
fn toy_graph_is_learned() {
    let g = toy_graph(1, 0.3);
    let (model, report) = train(&g, &toy_options(), &mut |_| {}).unwrap();
    let last = report.last().unwrap();
    assert_eq!(last.epoch, 300);
    assert_eq!(last.train_acc, 1.0);
    let pred = predict(&model, &g).unwrap();
    assert!(pred.test_accuracy >= 0.9, "test accuracy {}", pred.test_accuracy);
    assert_eq!(report.losses.len(), 300);
}

#[test]
fn same_seed_same_weights() {
    let g = toy_graph(2, 0.3);
    let mut opts = toy_options();
    opts.epochs = 20;
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        opts.optimizer = optimizer;
        let (a, _) = train(&g, &opts, &mut |_| {}).unwrap();
        let (b, _) = train(&g, &opts, &mut |_| {}).unwrap();
        let bits = |m: &GcnModel| m.weights.iter().flat_map(|w| w.as_slice().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn zero_learning_rate_freezes_weights() {
    let g = toy_graph(3, 0.3);
    let mut opts = toy_options();
    opts.epochs = 15;
    opts.learning_rate = 0.0;
    let init = init_model(&[60, opts.hidden_size, 3], &mut ChaCha8Rng::seed_from_u64(opts.seed));
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        opts.optimizer = optimizer;
        let (model, _) = train(&g, &opts, &mut |_| {}).unwrap();
        assert_eq!(model, init);
    }
}

#[test]
fn loss_falls_over_first_epochs() {
    let g = toy_graph(4, 0.3);
    let mut opts = toy_options();
    opts.epochs = 10;
    opts.learning_rate = 0.01;
    let (_, report) = train(&g, &opts, &mut |_| {}).unwrap();
    let l = &report.losses;
    assert!(l[9] < l[0], "losses {l:?}");
}

#[test]
fn step_budget_counts_updates() {
    let g = toy_graph(5, 0.3);
    let mut opts = toy_options();
    opts.epochs = 7;
    opts.budget_unit = grembed_core::BudgetUnit::Steps;
    opts.log_every = 2;
    let mut seen = Vec::new();
    let (_, report) = train(&g, &opts, &mut |r| seen.push(r.epoch)).unwrap();
    assert_eq!(report.losses.len(), 7);
    assert_eq!(seen, vec![2, 4, 6, 7]);
}

#[test]
fn divergence_reports_epoch() {
    let g = toy_graph(6, 0.3);
    let mut opts = toy_options();
    opts.learning_rate = 1e200;
    opts.epochs = 50;
    let err = train(&g, &opts, &mut |_| {}).unwrap_err();
    assert!(matches!(err, grembed_gcn::GcnError::Diverged { epoch } if epoch >= 1));
}

#[test]
fn zero_weights_predict_class_zero_and_perfect_logits_score_one() {
    let g = toy_graph(7, 0.3);
    let pred = predict(&GcnModel::zeros(&[60, 4, 3]), &g).unwrap();
    assert!(pred.classes.iter().all(|&c| c == 0));
    // features = identity, Â = I: logits are W0·W1 rows, set to one-hot labels
    let mut perfect = g.clone();
    perfect.features = Matrix::identity(60);
    perfect.normalized = CsrMatrix::from_dense(&Matrix::identity(60));
    perfect.adjacency = CsrMatrix::empty(60, 60);
    let mut model = GcnModel::zeros(&[60, 60, 3]);
    model.weights[0] = Matrix::identity(60);
    model.weights[1] = Matrix::from_fn(60, 3, |i, c| if g.labels[i] == c { 1.0 } else { 0.0 });
    let pred = predict(&model, &perfect).unwrap();
    assert_eq!((pred.train_accuracy, pred.test_accuracy), (1.0, 1.0));
}

#[test]
fn missing_training_class_is_rejected() {
    let mut g = toy_graph(8, 0.3);
    for i in 40..60 {
        g.split[i] = Split::Test;
    }
    assert_eq!(train(&g, &toy_options(), &mut |_| {}).unwrap_err(), grembed_gcn::GcnError::MissingTrainClass(2));
}
