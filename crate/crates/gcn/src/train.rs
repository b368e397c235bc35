use std::time::Instant;

use grembed_core::{BudgetUnit, DatasetGraph, GcnModel, Matrix, Optimizer, RunConfig, SamplerKind, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::propagate::{forward_full, loss_and_gradients, Plan};
use crate::{GcnError, Sampler};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Budget length, counted in `budget_unit`.
    pub epochs: usize,
    pub budget_unit: BudgetUnit,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub sample_size_fraction: f64,
    pub optimizer: Optimizer,
    /// `None` trains with exact full propagation instead of sampling.
    pub sampler: Option<SamplerKind>,
    pub seed: u64,
    /// Accuracies are evaluated every `log_every` units and at the end.
    pub log_every: usize,
}

impl TrainOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            epochs: cfg.epochs,
            budget_unit: cfg.budget_unit,
            hidden_size: cfg.hidden_size,
            learning_rate: cfg.learning_rate,
            l2: cfg.l2,
            batch_size: cfg.batch_size,
            sample_size_fraction: cfg.sample_size_fraction,
            optimizer: cfg.optimizer,
            sampler: Some(cfg.sampler),
            seed: cfg.seed,
            log_every: (cfg.epochs / 100).max(1),
        }
    }

    /// `t = max(1, ⌊fraction·n⌋)`, capped at `n`.
    pub fn sample_size(&self, n: usize) -> usize {
        ((self.sample_size_fraction * n as f64).floor() as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the unit.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,train_acc,test_acc,seconds";

    pub fn csv_line(&self) -> String {
        format!("{},{:.6},{:.4},{:.4},{:.3}", self.epoch, self.loss, self.train_acc, self.test_acc, self.seconds)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss of every unit, in order.
    pub losses: Vec<f64>,
    pub records: Vec<EpochRecord>,
    pub seconds: f64,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn accuracy(pred: &[usize], graph: &DatasetGraph, split: Split) -> f64 {
    let nodes = graph.nodes_in(split);
    if nodes.is_empty() {
        return 0.0;
    }
    nodes.iter().filter(|&&v| pred[v] == graph.labels[v]).count() as f64 / nodes.len() as f64
}

/// Full-batch argmax predictions and per-split accuracy (0 for an empty split).
pub fn predict(model: &GcnModel, graph: &DatasetGraph) -> Result<Prediction, GcnError> {
    let logits = forward_full(model, &graph.normalized, &graph.features)?;
    let classes: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
    Ok(Prediction {
        train_accuracy: accuracy(&classes, graph, Split::Train),
        test_accuracy: accuracy(&classes, graph, Split::Test),
        classes,
    })
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`.
pub fn init_model<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> GcnModel {
    let mut model = GcnModel::zeros(layer_dims);
    for w in &mut model.weights {
        let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
        for v in w.as_mut_slice() {
            *v = rng.gen_range(-limit..=limit);
        }
    }
    model
}

enum OptState {
    Sgd,
    Adam { m: Vec<Matrix>, v: Vec<Matrix>, step: i32 },
}

impl OptState {
    fn new(kind: Optimizer, model: &GcnModel) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => {
                let zeros: Vec<Matrix> = model.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
                OptState::Adam { m: zeros.clone(), v: zeros, step: 0 }
            }
        }
    }

    fn apply(&mut self, model: &mut GcnModel, grads: &[Matrix], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        match self {
            OptState::Sgd => {
                for (w, g) in model.weights.iter_mut().zip(grads) {
                    for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *wv -= lr * gv;
                    }
                }
            }
            OptState::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - B1.powi(*step);
                let c2 = 1.0 - B2.powi(*step);
                for (l, (w, g)) in model.weights.iter_mut().zip(grads).enumerate() {
                    let (ml, vl) = (m[l].as_mut_slice(), v[l].as_mut_slice());
                    for (k, (wv, &gv)) in w.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                        ml[k] = B1 * ml[k] + (1.0 - B1) * gv;
                        vl[k] = B2 * vl[k] + (1.0 - B2) * gv * gv;
                        *wv -= lr * (ml[k] / c1) / ((vl[k] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Cycles through the training nodes in reshuffled passes.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchStream {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Minibatch training on the graph's training nodes. Every unit (an epoch
/// or a single step, per `budget_unit`) records its mean loss; accuracies
/// are logged through `on_record` every `log_every` units.
pub fn train(
    graph: &DatasetGraph,
    opts: &TrainOptions,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<(GcnModel, TrainReport), GcnError> {
    let problems = graph.violations();
    if !problems.is_empty() {
        return Err(GcnError::Graph(problems.join("; ")));
    }
    if opts.batch_size == 0 || opts.hidden_size == 0 {
        return Err(GcnError::Options("batch_size and hidden_size must be positive".into()));
    }
    let train_nodes = graph.nodes_in(Split::Train);
    for class in 0..graph.num_classes {
        if !train_nodes.iter().any(|&v| graph.labels[v] == class) {
            return Err(GcnError::MissingTrainClass(class));
        }
    }
    let n = graph.n_nodes();
    let a_hat = &graph.normalized;
    let x = &graph.features;
    let sampler = opts.sampler.map(|kind| Sampler::new(a_hat, kind)).transpose()?;
    let t = opts.sample_size(n);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = init_model(&[x.cols(), opts.hidden_size, graph.num_classes], &mut rng);
    let mut state = OptState::new(opts.optimizer, &model);
    let mut stream = BatchStream { order: train_nodes.clone(), cursor: usize::MAX, batch_size: opts.batch_size };
    let steps_per_unit = match opts.budget_unit {
        BudgetUnit::Epochs => train_nodes.len().div_ceil(opts.batch_size),
        BudgetUnit::Steps => 1,
    };
    let depth = model.weights.len();
    let start = Instant::now();
    let mut report = TrainReport::default();
    for unit in 1..=opts.epochs {
        let mut total = 0.0;
        for _ in 0..steps_per_unit {
            let batch = stream.next(&mut rng);
            let plan = match &sampler {
                Some(s) => Plan::sampled(a_hat, &batch, depth, t, s, &mut rng),
                None => Plan::full(a_hat, &batch, depth),
            };
            let labels: Vec<usize> = batch.iter().map(|&v| graph.labels[v]).collect();
            let (loss, grads) = match loss_and_gradients(&model, x, &plan, &labels, opts.l2) {
                Ok(ok) => ok,
                Err(GcnError::NonFinite { .. } | GcnError::NonFiniteLoss) => return Err(GcnError::Diverged { epoch: unit }),
                Err(e) => return Err(e),
            };
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(GcnError::Diverged { epoch: unit });
            }
            state.apply(&mut model, &grads, opts.learning_rate);
            total += loss;
        }
        let mean_loss = total / steps_per_unit as f64;
        report.losses.push(mean_loss);
        if unit % opts.log_every.max(1) == 0 || unit == opts.epochs {
            let pred = predict(&model, graph).map_err(|_| GcnError::Diverged { epoch: unit })?;
            let record = EpochRecord {
                epoch: unit,
                loss: mean_loss,
                train_acc: pred.train_accuracy,
                test_acc: pred.test_accuracy,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_record(&record);
            report.records.push(record);
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn csv_line_format() {
        let r = EpochRecord { epoch: 3, loss: 0.5, train_acc: 1.0, test_acc: 0.75, seconds: 0.25 };
        assert_eq!(r.csv_line(), "3,0.500000,1.0000,0.7500,0.250");
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = init_model(&[10, 6, 3], &mut rng);
        let l0 = (6.0f64 / 16.0).sqrt();
        assert!(m.weights[0].as_slice().iter().all(|v| v.abs() <= l0));
        assert!(m.weights[0].as_slice().iter().any(|v| v.abs() > l0 / 2.0));
    }

    #[test]
    fn sample_size_rule() {
        let mut o = TrainOptions::from_config(&RunConfig::default());
        assert_eq!(o.sample_size(61), 30);
        assert_eq!(o.sample_size(1), 1);
        o.sample_size_fraction = 1.0;
        assert_eq!(o.sample_size(7), 7);
    }
}
