//! Layer propagation through a sampling plan, with reverse-mode gradients.
//!
//! A plan holds one coefficient matrix per layer. Layer `l` maps the
//! activations of its `cols` nodes to pre-activations of its `rows` nodes;
//! the `rows` of layer `l` are the `cols` of layer `l + 1`, and the last
//! layer's rows are the batch. Full propagation uses `Â` itself; a sampled
//! layer uses `count(u)·Â(v,u) / (t·q(u))` over the `t` draws.

use std::collections::BTreeMap;

use grembed_core::{Activation, CsrMatrix, GcnModel, Matrix};
use rand::Rng;

use crate::{GcnError, Sampler};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanLayer {
    pub rows: Vec<usize>,
    /// `None` means every node `0..n` in order.
    pub cols: Option<Vec<usize>>,
    pub coeffs: CsrMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub layers: Vec<PlanLayer>,
}

fn exact_layer(a_hat: &CsrMatrix, rows: Vec<usize>) -> PlanLayer {
    let n = a_hat.cols();
    let coeffs = CsrMatrix::from_sorted_rows(n, rows.iter().map(|&v| a_hat.row_iter(v).collect()).collect());
    PlanLayer { rows, cols: None, coeffs }
}

/// Draws `t` nodes iid from the sampler and builds the estimator for `rows`.
pub fn sample_layer<R: Rng + ?Sized>(a_hat: &CsrMatrix, rows: Vec<usize>, t: usize, sampler: &Sampler, rng: &mut R) -> PlanLayer {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for _ in 0..t {
        *counts.entry(sampler.draw(rng)).or_default() += 1;
    }
    let cols: Vec<usize> = counts.keys().copied().collect();
    let q = sampler.q();
    let coeff_rows = rows
        .iter()
        .map(|&v| {
            a_hat
                .row_iter(v)
                .filter_map(|(u, a)| {
                    let k = cols.binary_search(&u).ok()?;
                    Some((k, a * counts[&u] as f64 / (t as f64 * q[u])))
                })
                .collect()
        })
        .collect();
    PlanLayer { rows, coeffs: CsrMatrix::from_sorted_rows(cols.len(), coeff_rows), cols: Some(cols) }
}

impl Plan {
    /// Exact propagation: every node feeds every layer, the top layer is
    /// evaluated on `batch` only.
    pub fn full(a_hat: &CsrMatrix, batch: &[usize], depth: usize) -> Self {
        let n = a_hat.rows();
        let mut layers: Vec<PlanLayer> = (0..depth.saturating_sub(1)).map(|_| exact_layer(a_hat, (0..n).collect())).collect();
        layers.push(exact_layer(a_hat, batch.to_vec()));
        Self { layers }
    }

    /// Layer-wise sampling: top-down, each layer draws `t` nodes whose
    /// activations the layer above consumes.
    pub fn sampled<R: Rng + ?Sized>(a_hat: &CsrMatrix, batch: &[usize], depth: usize, t: usize, sampler: &Sampler, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut rows = batch.to_vec();
        for _ in 0..depth {
            let layer = sample_layer(a_hat, rows, t, sampler, rng);
            rows = layer.cols.clone().expect("sampled layers list their inputs");
            layers.push(layer);
        }
        layers.reverse();
        Self { layers }
    }

    pub fn batch(&self) -> &[usize] {
        &self.layers.last().expect("plan has layers").rows
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, rows aligned with that layer's `cols`.
    pub inputs: Vec<Matrix>,
    pub preactivations: Vec<Matrix>,
    /// Output of the last layer, rows aligned with the batch.
    pub output: Matrix,
}

fn check_shapes(model: &GcnModel, x: &Matrix, n: usize) -> Result<(), GcnError> {
    let problems = model.violations();
    if !problems.is_empty() {
        return Err(GcnError::Model(problems.join("; ")));
    }
    if x.rows() != n {
        return Err(GcnError::Shape { layer: 0, what: "feature rows", expected: n, found: x.rows() });
    }
    if x.cols() != model.layer_dims[0] {
        return Err(GcnError::Shape { layer: 0, what: "feature columns", expected: model.layer_dims[0], found: x.cols() });
    }
    Ok(())
}

pub fn forward_plan(model: &GcnModel, x: &Matrix, plan: &Plan) -> Result<ForwardCache, GcnError> {
    check_shapes(model, x, x.rows())?;
    if plan.layers.len() != model.weights.len() {
        return Err(GcnError::Shape { layer: 0, what: "plan depth", expected: model.weights.len(), found: plan.layers.len() });
    }
    let mut h = match &plan.layers[0].cols {
        Some(cols) => x.select_rows(cols),
        None => x.clone(),
    };
    let mut inputs = Vec::with_capacity(plan.layers.len());
    let mut preactivations = Vec::with_capacity(plan.layers.len());
    for (l, (layer, w)) in plan.layers.iter().zip(&model.weights).enumerate() {
        if layer.coeffs.cols() != h.rows() {
            return Err(GcnError::Shape { layer: l, what: "propagation columns", expected: h.rows(), found: layer.coeffs.cols() });
        }
        let z = layer.coeffs.mul_dense(&h.matmul(w));
        if !z.is_finite() {
            return Err(GcnError::NonFinite { layer: l });
        }
        let act = model.activations[l];
        let out = z.map(|v| act.apply(v));
        inputs.push(std::mem::replace(&mut h, out));
        preactivations.push(z);
    }
    Ok(ForwardCache { inputs, preactivations, output: h })
}

/// Logits for every node using exact propagation.
pub fn forward_full(model: &GcnModel, a_hat: &CsrMatrix, x: &Matrix) -> Result<Matrix, GcnError> {
    check_shapes(model, x, a_hat.rows())?;
    let all: Vec<usize> = (0..a_hat.rows()).collect();
    Ok(forward_plan(model, x, &Plan::full(a_hat, &all, model.weights.len()))?.output)
}

/// Logits for `batch` using `t` sampled nodes per layer.
pub fn forward_sampled<R: Rng + ?Sized>(
    model: &GcnModel,
    a_hat: &CsrMatrix,
    x: &Matrix,
    batch: &[usize],
    t: usize,
    sampler: &Sampler,
    rng: &mut R,
) -> Result<Matrix, GcnError> {
    check_sample_args(a_hat.rows(), batch, t)?;
    check_shapes(model, x, a_hat.rows())?;
    let plan = Plan::sampled(a_hat, batch, model.weights.len(), t, sampler, rng);
    Ok(forward_plan(model, x, &plan)?.output)
}

pub(crate) fn check_sample_args(n: usize, batch: &[usize], t: usize) -> Result<(), GcnError> {
    if batch.is_empty() {
        return Err(GcnError::EmptyBatch);
    }
    if let Some(&v) = batch.iter().find(|&&v| v >= n) {
        return Err(GcnError::NodeOutOfRange { node: v, n });
    }
    if t == 0 || t > n {
        return Err(GcnError::SampleSize { t, n });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Mean softmax cross-entropy of `logits` against `labels` plus
/// `l2·Σ‖W‖²`, and the gradient of that loss w.r.t. each weight matrix.
pub fn loss_and_gradients(model: &GcnModel, x: &Matrix, plan: &Plan, labels: &[usize], l2: f64) -> Result<(f64, Vec<Matrix>), GcnError> {
    let cache = forward_plan(model, x, plan)?;
    let logits = &cache.output;
    if labels.len() != logits.rows() {
        return Err(GcnError::Shape { layer: plan.layers.len() - 1, what: "batch labels", expected: logits.rows(), found: labels.len() });
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(GcnError::LabelRange { label: bad, classes });
    }
    let b = labels.len() as f64;
    let mut grad = softmax(logits);
    let mut ce = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - row[y];
        grad.row_mut(r)[y] -= 1.0;
    }
    let grad = grad.map(|g| g / b);
    let penalty: f64 = if l2 == 0.0 { 0.0 } else { l2 * model.weights.iter().map(Matrix::sum_squares).sum::<f64>() };
    let loss = ce / b + penalty;
    if !loss.is_finite() {
        return Err(GcnError::NonFiniteLoss);
    }
    Ok((loss, backward(model, plan, &cache, grad, l2)))
}

fn backward(model: &GcnModel, plan: &Plan, cache: &ForwardCache, mut upstream: Matrix, l2: f64) -> Vec<Matrix> {
    let mut grads = vec![Matrix::zeros(0, 0); model.weights.len()];
    for l in (0..model.weights.len()).rev() {
        let z = &cache.preactivations[l];
        let dz = match model.activations[l] {
            Activation::Identity => upstream,
            Activation::Relu => Matrix::from_fn(z.rows(), z.cols(), |i, j| if z[(i, j)] > 0.0 { upstream[(i, j)] } else { 0.0 }),
        };
        let dp = plan.layers[l].coeffs.t_mul_dense(&dz);
        let w = &model.weights[l];
        let mut g = cache.inputs[l].t_matmul(&dp);
        if l2 != 0.0 {
            g = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] + 2.0 * l2 * w[(i, j)]);
        }
        grads[l] = g;
        upstream = if l > 0 { dp.matmul_t(w) } else { Matrix::zeros(0, 0) };
    }
    grads
}
