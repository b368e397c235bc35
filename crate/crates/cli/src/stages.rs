//! Pipeline stages over an output directory of artifacts.
//!
//! ```text
//! out/config.gfg            run configuration
//! out/graphs/NNNNN.arsrg    one region graph per manifest entry   (extract)
//! out/distances.gfg         pairwise distance matrix              (match)
//! out/features.gfg          embedding matrix X                    (embed)
//! out/dataset_graph.gfg     A, Â, X, labels, split                (graph)
//! out/model.gfg             multiclass model                      (train)
//! out/ova/class_C.gfg       one binary model per class            (train --mode ova)
//! out/reports/*             append-only text reports and CSV logs
//! ```

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grembed_core::{
    read_artifact, write_artifact, Arsrg, Artifact, ArtifactError, ConfigHash, DatasetGraph, DistanceMatrix, GcnModel,
    Matrix, PrototypeSet, RunConfig,
};
use grembed_embed::{assemble_dataset_graph, build_adjacency, embed, normalize_adjacency, select_prototypes, standardize_rows};
use grembed_frontend::{image_to_arsrg, FrontendError};
use grembed_gcn::{predict, train, EpochRecord, TrainOptions};
use grembed_matcher::{build_distance_matrix, MatchParams, TwoLevelMatcher};
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{evaluate_multiclass, evaluate_ova, EvalMode};
use crate::manifest::{Manifest, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Extract,
    Match,
    Embed,
    Graph,
    Train,
    Eval,
    Pipeline,
}

impl Stage {
    pub const CHAIN: [Stage; 6] = [Stage::Extract, Stage::Match, Stage::Embed, Stage::Graph, Stage::Train, Stage::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Match => "match",
            Stage::Embed => "embed",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("missing input: {0}")]
    Missing(String),
    #[error("{}: produced under config {found}, current config is {expected}", path.display())]
    HashMismatch { path: PathBuf, expected: String, found: String },
    #[error("validation failed: {0}")]
    Invalid(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl StageError {
    /// 2 missing input, 3 config-hash mismatch, 4 validation failure, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Missing(_) => 2,
            StageError::HashMismatch { .. } => 3,
            StageError::Invalid(_) => 4,
            StageError::Other(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// The key-value block appended to the stage report.
    pub report: String,
    /// Headline test accuracy (multiclass) or macro accuracy (ova), from eval.
    pub accuracy: Option<f64>,
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn config(&self) -> PathBuf {
        self.root.join("config.gfg")
    }
    pub fn graph(&self, i: usize) -> PathBuf {
        self.root.join("graphs").join(format!("{i:05}.arsrg"))
    }
    pub fn distances(&self) -> PathBuf {
        self.root.join("distances.gfg")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.gfg")
    }
    pub fn dataset_graph(&self) -> PathBuf {
        self.root.join("dataset_graph.gfg")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.gfg")
    }
    pub fn ova_model(&self, class: usize) -> PathBuf {
        self.root.join("ova").join(format!("class_{class}.gfg"))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

#[derive(Debug, Clone)]
pub struct StageContext {
    pub config: RunConfig,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
    pub mode: EvalMode,
    pub limit_classes: Option<usize>,
    /// Print progress to stderr.
    pub progress: bool,
}

impl StageContext {
    pub fn new(config: RunConfig, manifest: Option<PathBuf>, out: PathBuf) -> Self {
        Self { config, manifest, out, workers: 1, mode: EvalMode::Multiclass, limit_classes: None, progress: false }
    }

    pub fn layout(&self) -> Layout {
        Layout { root: self.out.clone() }
    }

    fn hash(&self) -> ConfigHash {
        self.config.hash()
    }

    fn manifest(&self, stage: Stage) -> Result<Manifest, StageError> {
        let path = self.manifest.as_ref().ok_or_else(|| StageError::Missing(format!("{} needs --manifest", stage.as_str())))?;
        let m = Manifest::read(path).map_err(|e| match e {
            ManifestError::Io { .. } => StageError::Missing(e.to_string()),
            ManifestError::Parse { .. } => StageError::Invalid(format!("{}: {e}", path.display())),
        })?;
        let m = match self.limit_classes {
            Some(k) => m.limit_classes(k),
            None => m,
        };
        let problems = m.violations();
        if !problems.is_empty() {
            return Err(StageError::Invalid(format!("{}: {}", path.display(), problems.join("; "))));
        }
        Ok(m)
    }

    fn load<A: Artifact>(&self, path: &Path) -> Result<A, StageError> {
        match read_artifact::<A>(path) {
            Err(ArtifactError::Io { path, source }) => Err(StageError::Missing(format!("{}: {source}", path.display()))),
            Err(e) => Err(StageError::Invalid(format!("{}: {e}", path.display()))),
            Ok(stamped) if stamped.config_hash != self.hash() => Err(StageError::HashMismatch {
                path: path.to_path_buf(),
                expected: self.hash().to_hex(),
                found: stamped.config_hash.to_hex(),
            }),
            Ok(stamped) => Ok(stamped.value),
        }
    }

    fn store<A: Artifact>(&self, path: &Path, artifact: &A) -> Result<(), StageError> {
        write_artifact(path, artifact, &self.hash()).map_err(|e| match e {
            ArtifactError::Invariant { .. } => StageError::Invalid(format!("{}: {e}", path.display())),
            other => StageError::Other(other.into()),
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool, StageError> {
        rayon::ThreadPoolBuilder::new().num_threads(self.workers.max(1)).build().map_err(|e| StageError::Other(e.into()))
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.progress {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn append(path: &Path, text: &str) -> Result<(), StageError> {
    let io = |e: std::io::Error| StageError::Other(anyhow::anyhow!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// Runs one stage (or the whole chain for `Pipeline`).
pub fn run_stage(stage: Stage, ctx: &StageContext) -> Result<Vec<StageOutcome>, StageError> {
    if stage == Stage::Pipeline {
        let mut all = Vec::new();
        for s in Stage::CHAIN {
            all.extend(run_stage(s, ctx)?);
        }
        return Ok(all);
    }
    ctx.store(&ctx.layout().config(), &ctx.config)?;
    let start = Instant::now();
    let (body, accuracy) = match stage {
        Stage::Extract => (extract(ctx)?, None),
        Stage::Match => (match_stage(ctx)?, None),
        Stage::Embed => (embed_stage(ctx)?, None),
        Stage::Graph => (graph_stage(ctx)?, None),
        Stage::Train => (train_stage(ctx)?, None),
        Stage::Eval => eval_stage(ctx)?,
        Stage::Pipeline => unreachable!(),
    };
    let mut report = format!("[{}]\nconfig_hash = {}\n", stage.as_str(), ctx.hash().to_hex());
    report.push_str(&body);
    if stage != Stage::Eval {
        let _ = writeln!(report, "seconds = {:.3}", start.elapsed().as_secs_f64());
    }
    report.push('\n');
    append(&ctx.layout().report(&format!("{}.txt", stage.as_str())), &report)?;
    Ok(vec![StageOutcome { stage, report, accuracy }])
}

fn image_id(i: usize, path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().replace(['\n', '\r'], "_")).unwrap_or_default();
    format!("{i:05}_{stem}")
}

fn extract(ctx: &StageContext) -> Result<String, StageError> {
    let manifest = ctx.manifest(Stage::Extract)?;
    let missing: Vec<String> = manifest.entries.iter().filter(|e| !e.path.is_file()).map(|e| e.path.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(StageError::Missing(format!("{} image(s) not found: {}", missing.len(), missing.join(", "))));
    }
    let labels = manifest.labels();
    let cfg = &ctx.config;
    ctx.note(format!("extract: {} images on {} workers", manifest.len(), ctx.workers));
    let graphs: Vec<Result<Arsrg, FrontendError>> = ctx.pool()?.install(|| {
        manifest
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| image_to_arsrg(&e.path, cfg, &image_id(i, &e.path), Some(labels[i])))
            .collect()
    });
    let (mut regions, mut descriptors) = (0usize, 0usize);
    for (i, g) in graphs.into_iter().enumerate() {
        let g = g.map_err(|e| StageError::Invalid(format!("{}: {e}", manifest.entries[i].path.display())))?;
        regions += g.regions.len();
        descriptors += g.descriptors.len();
        ctx.store(&ctx.layout().graph(i), &g)?;
    }
    let n = manifest.len() as f64;
    Ok(format!(
        "images = {}\nregions_total = {regions}\ndescriptors_total = {descriptors}\nmean_regions = {:.3}\nmean_descriptors = {:.3}\n",
        manifest.len(),
        regions as f64 / n,
        descriptors as f64 / n
    ))
}

fn match_stage(ctx: &StageContext) -> Result<String, StageError> {
    let manifest = ctx.manifest(Stage::Match)?;
    let graphs: Vec<Arsrg> = (0..manifest.len()).map(|i| ctx.load::<Arsrg>(&ctx.layout().graph(i))).collect::<Result<_, _>>()?;
    let matcher = TwoLevelMatcher { params: MatchParams::from_config(&ctx.config) };
    let step = (graphs.len() * graphs.len().saturating_sub(1) / 20).max(1);
    let progress = |done: usize, total: usize| {
        if done.is_multiple_of(step) || done == total {
            eprintln!("match: {done}/{total} pairs");
        }
    };
    let dm = build_distance_matrix(&graphs, &matcher, ctx.workers, ctx.progress.then_some(&progress as &(dyn Fn(usize, usize) + Sync)));
    ctx.store(&ctx.layout().distances(), &dm)?;
    let n = dm.n();
    let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| dm.get(i, j)).collect();
    let mean = if off.is_empty() { 0.0 } else { off.iter().sum::<f64>() / off.len() as f64 };
    Ok(format!("graphs = {n}\npairs = {}\nmean_distance = {mean:.6}\n", n * n.saturating_sub(1) / 2))
}

fn embed_stage(ctx: &StageContext) -> Result<String, StageError> {
    let dm = ctx.load::<DistanceMatrix>(&ctx.layout().distances())?;
    let prototypes = match ctx.config.prototypes {
        PrototypeSet::All => (0..dm.n()).collect(),
        PrototypeSet::Train => {
            let manifest = ctx.manifest(Stage::Embed)?;
            check_nodes(&manifest, dm.n())?;
            select_prototypes(&manifest.splits(), PrototypeSet::Train)
        }
    };
    let x = embed(&dm, &prototypes).map_err(|e| StageError::Invalid(e.to_string()))?;
    let x = if ctx.config.standardize_features { standardize_rows(&x) } else { x };
    ctx.store(&ctx.layout().features(), &x)?;
    Ok(format!(
        "nodes = {}\nprototypes = {}\nstandardized = {}\n",
        x.rows(),
        prototypes.len(),
        ctx.config.standardize_features
    ))
}

fn check_nodes(manifest: &Manifest, n: usize) -> Result<(), StageError> {
    if manifest.len() != n {
        return Err(StageError::Invalid(format!("manifest lists {} images but the artifacts hold {n}", manifest.len())));
    }
    Ok(())
}

fn graph_stage(ctx: &StageContext) -> Result<String, StageError> {
    let manifest = ctx.manifest(Stage::Graph)?;
    let dm = ctx.load::<DistanceMatrix>(&ctx.layout().distances())?;
    let x = ctx.load::<Matrix>(&ctx.layout().features())?;
    check_nodes(&manifest, dm.n())?;
    let invalid = |e: grembed_embed::EmbedError| StageError::Invalid(e.to_string());
    let a = build_adjacency(&dm, ctx.config.tau).map_err(invalid)?;
    let a_hat = normalize_adjacency(&a).map_err(invalid)?;
    let labels: Vec<Option<usize>> = manifest.labels().into_iter().map(Some).collect();
    let names = manifest.class_names();
    let g = assemble_dataset_graph(x, a, a_hat, &labels, names.len(), manifest.splits()).map_err(invalid)?;
    ctx.store(&ctx.layout().dataset_graph(), &g)?;
    let isolated = (0..g.n_nodes()).filter(|&i| g.adjacency.row_indices(i).is_empty()).count();
    let mut s = format!(
        "nodes = {}\nedges = {}\ndensity = {:.6}\nisolated_nodes = {isolated}\ntau = {}\n",
        g.stats.node_count, g.stats.edge_count, g.stats.density, ctx.config.tau
    );
    for (name, count) in names.iter().zip(&g.stats.class_histogram) {
        let _ = writeln!(s, "class_count.{name} = {count}");
    }
    Ok(s)
}

/// Class-vs-rest copy of the graph: label 1 for `class`, 0 otherwise.
pub fn binary_graph(g: &DatasetGraph, class: usize) -> DatasetGraph {
    let labels: Vec<usize> = g.labels.iter().map(|&l| usize::from(l == class)).collect();
    let stats = grembed_core::GraphStats::compute(&g.adjacency, &labels, 2);
    DatasetGraph { labels, num_classes: 2, stats, ..g.clone() }
}

fn train_one(ctx: &StageContext, g: &DatasetGraph, log_name: &str) -> Result<(GcnModel, EpochRecord), StageError> {
    let opts = TrainOptions::from_config(&ctx.config);
    let log = ctx.layout().report(log_name);
    let mut lines = format!("# config {}\n{}\n", ctx.hash().to_hex(), EpochRecord::CSV_HEADER);
    let progress = ctx.progress;
    let result = train(g, &opts, &mut |r: &EpochRecord| {
        lines.push_str(&r.csv_line());
        lines.push('\n');
        if progress {
            eprintln!("train: epoch {} loss {:.4} train_acc {:.3} test_acc {:.3}", r.epoch, r.loss, r.train_acc, r.test_acc);
        }
    });
    append(&log, &lines)?;
    let (model, report) = result.map_err(|e| StageError::Invalid(e.to_string()))?;
    let last = report.last().cloned().ok_or_else(|| StageError::Invalid("training ran for zero epochs".into()))?;
    Ok((model, last))
}

fn train_stage(ctx: &StageContext) -> Result<String, StageError> {
    let g = ctx.load::<DatasetGraph>(&ctx.layout().dataset_graph())?;
    let cfg = &ctx.config;
    let mut s = format!(
        "mode = {}\nepochs = {}\nbudget_unit = {}\noptimizer = {}\nsampler = {}\n",
        mode_name(ctx.mode),
        cfg.epochs,
        cfg.budget_unit,
        cfg.optimizer,
        cfg.sampler
    );
    match ctx.mode {
        EvalMode::Multiclass => {
            let (model, last) = train_one(ctx, &g, "train_log.csv")?;
            ctx.store(&ctx.layout().model(), &model)?;
            let _ = writeln!(s, "final_loss = {:.6}\ntrain_accuracy = {:.6}\ntest_accuracy = {:.6}", last.loss, last.train_acc, last.test_acc);
        }
        EvalMode::Ova => {
            for c in 0..g.num_classes {
                let (model, last) = train_one(ctx, &binary_graph(&g, c), &format!("train_log_ova_{c}.csv"))?;
                ctx.store(&ctx.layout().ova_model(c), &model)?;
                let _ = writeln!(s, "class_{c}.final_loss = {:.6}\nclass_{c}.test_accuracy = {:.6}", last.loss, last.test_acc);
            }
        }
    }
    Ok(s)
}

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Multiclass => "multiclass",
        EvalMode::Ova => "ova",
    }
}

fn eval_stage(ctx: &StageContext) -> Result<(String, Option<f64>), StageError> {
    let manifest = ctx.manifest(Stage::Eval)?;
    let g = ctx.load::<DatasetGraph>(&ctx.layout().dataset_graph())?;
    check_nodes(&manifest, g.n_nodes())?;
    let names = manifest.class_names();
    if names.len() != g.num_classes {
        return Err(StageError::Invalid(format!("manifest has {} classes, dataset graph {}", names.len(), g.num_classes)));
    }
    let invalid = |e: &dyn std::fmt::Display| StageError::Invalid(e.to_string());
    match ctx.mode {
        EvalMode::Multiclass => {
            let model = ctx.load::<GcnModel>(&ctx.layout().model())?;
            let pred = predict(&model, &g).map_err(|e| invalid(&e))?;
            let m = evaluate_multiclass(&pred.classes, &g.labels, &g.split, &names).map_err(|e| invalid(&e))?;
            append(&ctx.layout().report("confusion.csv"), &format!("# config {}\n{}", ctx.hash().to_hex(), m.confusion_csv()))?;
            Ok((m.report(), Some(m.accuracy)))
        }
        EvalMode::Ova => {
            let mut positive = Vec::with_capacity(g.num_classes);
            for c in 0..g.num_classes {
                let model = ctx.load::<GcnModel>(&ctx.layout().ova_model(c))?;
                let pred = predict(&model, &binary_graph(&g, c)).map_err(|e| invalid(&e))?;
                positive.push(pred.classes.iter().map(|&k| k == 1).collect());
            }
            let m = evaluate_ova(&positive, &g.labels, &g.split, &names).map_err(|e| invalid(&e))?;
            Ok((m.report(), Some(m.macro_accuracy)))
        }
    }
}
