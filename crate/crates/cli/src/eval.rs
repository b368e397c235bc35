use std::fmt::Write as _;

use grembed_core::Split;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    Multiclass,
    Ova,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions cover {found} nodes, expected {expected}")]
    Coverage { expected: usize, found: usize },
    #[error("prediction {prediction} for node {node} is not a class index")]
    UnknownClass { node: usize, prediction: usize },
    #[error("no test nodes to evaluate")]
    NoTestNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassMetrics {
    pub class_names: Vec<String>,
    pub test_nodes: usize,
    pub accuracy: f64,
    /// `(correct, total)` over test nodes of each true class.
    pub per_class: Vec<(usize, usize)>,
    /// `confusion[true][predicted]` over test nodes.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvaMetrics {
    pub class_names: Vec<String>,
    pub test_nodes: usize,
    /// Binary accuracy of "class c vs rest" over all test nodes.
    pub per_class: Vec<f64>,
    pub macro_accuracy: f64,
}

fn test_nodes(labels: &[usize], split: &[Split], found: usize) -> Result<Vec<usize>, EvalError> {
    if found != labels.len() || split.len() != labels.len() {
        return Err(EvalError::Coverage { expected: labels.len(), found });
    }
    let nodes: Vec<usize> = (0..labels.len()).filter(|&i| split[i] == Split::Test).collect();
    if nodes.is_empty() {
        return Err(EvalError::NoTestNodes);
    }
    Ok(nodes)
}

pub fn evaluate_multiclass(predictions: &[usize], labels: &[usize], split: &[Split], class_names: &[String]) -> Result<MulticlassMetrics, EvalError> {
    let nodes = test_nodes(labels, split, predictions.len())?;
    let c = class_names.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for &i in &nodes {
        if predictions[i] >= c {
            return Err(EvalError::UnknownClass { node: i, prediction: predictions[i] });
        }
        confusion[labels[i]][predictions[i]] += 1;
    }
    let per_class: Vec<(usize, usize)> = (0..c).map(|k| (confusion[k][k], confusion[k].iter().sum())).collect();
    let correct: usize = per_class.iter().map(|p| p.0).sum();
    Ok(MulticlassMetrics {
        class_names: class_names.to_vec(),
        test_nodes: nodes.len(),
        accuracy: correct as f64 / nodes.len() as f64,
        per_class,
        confusion,
    })
}

/// `positive[c][i]`: whether the class-`c` binary model claims node `i`.
pub fn evaluate_ova(positive: &[Vec<bool>], labels: &[usize], split: &[Split], class_names: &[String]) -> Result<OvaMetrics, EvalError> {
    if positive.len() != class_names.len() {
        return Err(EvalError::Coverage { expected: class_names.len(), found: positive.len() });
    }
    let mut nodes = Vec::new();
    for p in positive {
        nodes = test_nodes(labels, split, p.len())?;
    }
    if nodes.is_empty() {
        return Err(EvalError::NoTestNodes);
    }
    let per_class: Vec<f64> = positive
        .iter()
        .enumerate()
        .map(|(c, p)| nodes.iter().filter(|&&i| p[i] == (labels[i] == c)).count() as f64 / nodes.len() as f64)
        .collect();
    let macro_accuracy = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(OvaMetrics { class_names: class_names.to_vec(), test_nodes: nodes.len(), per_class, macro_accuracy })
}

impl MulticlassMetrics {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = multiclass");
        let _ = writeln!(s, "test_nodes = {}", self.test_nodes);
        let _ = writeln!(s, "accuracy = {:.6}", self.accuracy);
        for (name, &(ok, total)) in self.class_names.iter().zip(&self.per_class) {
            let acc = if total == 0 { "n/a".to_string() } else { format!("{:.6}", ok as f64 / total as f64) };
            let _ = writeln!(s, "class_accuracy.{name} = {acc}");
        }
        s
    }

    /// `true\pred` header row, then one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = format!("true\\pred,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }
}

impl OvaMetrics {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = ova");
        let _ = writeln!(s, "test_nodes = {}", self.test_nodes);
        for (name, acc) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(s, "ova_accuracy.{name} = {acc:.6}");
        }
        let _ = writeln!(s, "macro_accuracy = {:.6}", self.macro_accuracy);
        s
    }
}
