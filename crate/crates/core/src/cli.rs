//! Command-line front end: featurize, train, predict, eval and synth.
//!
//! Settings resolve as command-line flag, then `--config` JSON, then the
//! built-in default. Exit codes: 0 success, 1 usage, 2 input or IO,
//! 3 numerical failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, LevelFilter, Log, Metadata, Record};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierKind;
use crate::data::{load_dataset, load_splits, make_folds, ClassId, ClassSplit, TextCorpus, VisualDataset};
use crate::error::Error;
use crate::evaluation::{run_benchmark, BenchmarkConfig, SyntheticTask};
use crate::io;
use crate::pipeline::{train_models, Formulation, PipelineConfig, TrainedModels};
use crate::text::{bag_of_triplets, EmbeddingTable, TextFeatures};

#[derive(Debug, Parser)]
#[command(name = "zeroshot", version, about = "Predict visual classifiers for unseen classes from text descriptions")]
pub struct Cli {
    /// JSON run configuration; flags given here override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log more to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a corpus into per-class text features.
    Featurize(FeaturizeArgs),
    /// Train the models a formulation needs on the seen classes.
    Train(TrainArgs),
    /// Predict the classifier of an unseen class from its text.
    Predict(PredictArgs),
    /// Evaluate formulations over seen/unseen folds.
    Eval(EvalArgs),
    /// Generate a synthetic task.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Corpus JSON mapping class names to documents.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// word2vec text file; emits embedding aggregates instead of tf-idf.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Classes the reducer is fitted on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<ClassId>>,
    /// Split file whose seen classes fit the reducer (with --fold).
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Fold of the split file to use (default 0)
    #[arg(long)]
    pub fold: Option<usize>,
    /// Reduce tf-idf vectors to this many dimensions.
    #[arg(long)]
    pub target_dim: Option<usize>,
    /// Clusters used by the reducer.
    #[arg(long)]
    pub clusters: Option<usize>,
}

/// Hyperparameter overrides shared by train, predict and eval.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Weight of the transfer term in formulation E and of similarity in B.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the regression term in formulation E.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Slack penalty on seen images in formulations B and E.
    #[arg(long = "C", value_name = "C")]
    pub c: Option<f64>,
    /// Same-class score threshold.
    #[arg(long)]
    pub l: Option<f64>,
    /// Cross-class score threshold.
    #[arg(long)]
    pub u: Option<f64>,
    /// Pair-loss weight of the transfer models.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight pulling transfer towards the seen classifiers.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Trust in the transfer classifier for svm-dt-kernel.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Slack penalty of the seen-class SVMs.
    #[arg(long)]
    pub svm_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Image features (.cfmx or CSV), one row per image.
    #[arg(long, value_name = "PATH")]
    pub features: Option<PathBuf>,
    /// Image labels, one class id per line.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// Featurize output directory or a matrix with one row per class id.
    #[arg(long, value_name = "PATH")]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Formulations to train for (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub formulation: Option<Vec<Formulation>>,
    /// Seen classes (default: every labelled class, or the split's).
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<ClassId>>,
    /// Split file; the seen classes of `--fold` are trained on
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Fold of the split file to use (default 0)
    #[arg(long)]
    pub fold: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by train.
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Formulation whose predictor to run
    #[arg(long)]
    pub formulation: Option<Formulation>,
    /// Featurize output directory or text matrix.
    #[arg(long, value_name = "PATH")]
    pub text: Option<PathBuf>,
    /// Raw document describing the unseen class.
    #[arg(long, value_name = "PATH", conflicts_with = "class")]
    pub document: Option<PathBuf>,
    /// Use the stored text features of this class.
    #[arg(long)]
    pub class: Option<ClassId>,
    /// word2vec file, when the text features are embedding aggregates.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Images to score with the predicted classifier.
    #[arg(long, value_name = "PATH")]
    pub test_features: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate on a generated task instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// Formulations to compare (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub formulation: Option<Vec<Formulation>>,
    /// Split file; without it classes are dealt into --folds folds.
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Number of class folds when no split file is given
    #[arg(long)]
    pub folds: Option<usize>,
    /// Share of seen-class images used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes
    #[arg(long)]
    pub classes: Option<usize>,
    /// Text feature dimension
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Visual feature dimension
    #[arg(long)]
    pub visual_dim: Option<usize>,
    /// Images generated per class
    #[arg(long)]
    pub images_per_class: Option<usize>,
    /// Distance of class means from the origin
    #[arg(long)]
    pub scale: Option<f64>,
    /// Spread of visual class means around the mapped prototypes.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Spread of images around their class mean.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Map text to visual space by the identity.
    #[arg(long)]
    pub identity: bool,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub formulations: Option<Vec<Formulation>>,
    pub seen: Option<Vec<ClassId>>,
    pub fold: Option<usize>,
    pub folds: Option<usize>,
    pub target_dim: Option<usize>,
    pub clusters: Option<usize>,
    pub train_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub pipeline: Option<PipelineConfig>,
    pub synth: Option<SyntheticTask>,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) if e.is_numerical() => 3,
            Failure::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn pick<T>(flag: Option<T>, config: Option<T>, name: &str) -> CmdResult<T> {
    flag.or(config)
        .ok_or_else(|| Failure::Usage(format!("missing --{name} (or \"{}\" in the config)", name.replace('-', "_"))))
}

struct Context {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> CmdResult<Self> {
        let config: RunConfig = match &cli.config {
            Some(p) => io::read_json(p)?,
            None => RunConfig::default(),
        };
        let seed = cli.seed.or(config.seed).unwrap_or(0);
        let out = pick(cli.out.clone(), config.out.clone(), "out")?;
        Ok(Self { config, seed, out })
    }

    fn pipeline(&self, base: Option<PipelineConfig>, hyper: &HyperArgs) -> PipelineConfig {
        let mut p = self.config.pipeline.clone().or(base).unwrap_or_default();
        p.seed = self.seed;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.predictor.alpha, hyper.alpha);
        set(&mut p.predictor.gamma, hyper.gamma);
        set(&mut p.predictor.c, hyper.c);
        set(&mut p.predictor.zeta, hyper.zeta);
        set(&mut p.thresholds.l, hyper.l);
        set(&mut p.thresholds.u, hyper.u);
        set(&mut p.dt_lambda, hyper.lambda1);
        set(&mut p.kdt_lambda1, hyper.lambda1);
        set(&mut p.cdt_lambda2, hyper.lambda2);
        set(&mut p.kdt_lambda2, hyper.lambda2);
        set(&mut p.svm_c, hyper.svm_c);
        if hyper.l.is_some() {
            p.predictor.l = hyper.l;
        }
        p
    }
}

/// Marker written by featurize when the text features are embedding aggregates.
#[derive(Serialize, Deserialize)]
struct EmbeddingFeatures {
    class_ids: Vec<ClassId>,
    embeddings: PathBuf,
}

const EMBEDDING_MARKER: &str = "embedding_features.json";

/// Text vectors keyed by class id, read from a featurize directory or a
/// matrix whose row `k` belongs to class `k + 1`.
pub fn load_text(path: &Path) -> crate::Result<BTreeMap<ClassId, DVector<f64>>> {
    if path.is_dir() {
        if path.join(EMBEDDING_MARKER).exists() {
            let marker: EmbeddingFeatures = io::read_json(&path.join(EMBEDDING_MARKER))?;
            let m = io::read_matrix(&path.join("text.cfmx"))?;
            if m.nrows() != marker.class_ids.len() {
                return Err(Error::load(path, "text.cfmx rows disagree with the class list"));
            }
            return Ok(marker
                .class_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, m.row(i).transpose()))
                .collect());
        }
        return Ok(TextFeatures::load(path)?.vectors);
    }
    let m = io::read_matrix(path)?;
    Ok((0..m.nrows()).map(|i| (i as ClassId + 1, m.row(i).transpose())).collect())
}

fn seen_from_split(splits: Option<PathBuf>, fold: Option<usize>) -> CmdResult<Option<Vec<ClassId>>> {
    let Some(path) = splits else { return Ok(None) };
    let all = load_splits(&path)?;
    let i = fold.unwrap_or(0);
    let split = all
        .get(i)
        .ok_or_else(|| Error::load(&path, format!("fold {i} requested but the file has {} splits", all.len())))?;
    Ok(Some(split.seen_vec()))
}

fn cmd_featurize(ctx: &Context, a: &FeaturizeArgs) -> CmdResult {
    let c = &ctx.config;
    let corpus_path = pick(a.corpus.clone(), c.corpus.clone(), "corpus")?;
    let corpus = TextCorpus::load(&corpus_path)?;
    if let Some(emb) = a.embeddings.clone().or(c.embeddings.clone()) {
        let table = EmbeddingTable::load(&emb)?;
        let ids: Vec<ClassId> = corpus.documents().keys().copied().collect();
        let mut rows = Vec::with_capacity(ids.len());
        for (id, doc) in corpus.documents() {
            let bag = bag_of_triplets(doc, &table)
                .map_err(|e| Error::Featurization(format!("class {id}: {e}")))?;
            rows.push(bag.aggregate().transpose());
        }
        io::write_matrix(&ctx.out.join("text.cfmx"), &DMatrix::from_rows(&rows))?;
        io::write_json(
            &ctx.out.join(EMBEDDING_MARKER),
            &EmbeddingFeatures {
                class_ids: ids.clone(),
                embeddings: emb,
            },
        )?;
        info!("wrote embedding aggregates for {} classes", ids.len());
        return Ok(());
    }
    let fit_on: BTreeSet<ClassId> = match (a.seen.clone().or(c.seen.clone()), seen_from_split(a.splits.clone().or(c.splits.clone()), a.fold.or(c.fold))?) {
        (Some(s), _) | (None, Some(s)) => s.into_iter().collect(),
        (None, None) => corpus.documents().keys().copied().collect(),
    };
    let target = a.target_dim.or(c.target_dim);
    let features = TextFeatures::build(&corpus, &fit_on, target, a.clusters.or(c.clusters).unwrap_or(1))?;
    features.save(&ctx.out)?;
    info!("wrote {} text vectors of dimension {}", features.vectors.len(), features.dim());
    Ok(())
}

fn load_data(ctx: &Context, d: &DataArgs) -> CmdResult<(VisualDataset, BTreeMap<ClassId, DVector<f64>>)> {
    let c = &ctx.config;
    let features = pick(d.features.clone(), c.features.clone(), "features")?;
    let labels = pick(d.labels.clone(), c.labels.clone(), "labels")?;
    let text = pick(d.text.clone(), c.text.clone(), "text")?;
    Ok((load_dataset(&features, &labels)?, load_text(&text)?))
}

fn text_matrix(text: &BTreeMap<ClassId, DVector<f64>>, ids: &[ClassId]) -> crate::Result<DMatrix<f64>> {
    let rows = ids
        .iter()
        .map(|id| {
            text.get(id)
                .map(|t| t.transpose())
                .ok_or_else(|| Error::Argument(format!("no text features for class {id}")))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(DMatrix::from_rows(&rows))
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> CmdResult {
    let c = &ctx.config;
    let formulations = pick(a.formulation.clone(), c.formulations.clone(), "formulation")?;
    let (dataset, text) = load_data(ctx, &a.data)?;
    let seen = match a.seen.clone().or(c.seen.clone()) {
        Some(s) => s,
        None => seen_from_split(a.splits.clone().or(c.splits.clone()), a.fold.or(c.fold))?.unwrap_or_else(|| dataset.class_ids()),
    };
    let seen_set: BTreeSet<ClassId> = seen.iter().copied().collect();
    if seen_set.len() != seen.len() {
        return Err(Error::Argument("duplicate seen class ids".into()).into());
    }
    let idx: Vec<usize> = (0..dataset.n_images())
        .filter(|&i| seen_set.contains(&dataset.labels()[i]))
        .collect();
    let labels: Vec<usize> = idx
        .iter()
        .map(|&i| seen.iter().position(|&s| s == dataset.labels()[i]).unwrap())
        .collect();
    let pipeline = ctx.pipeline(None, &a.hyper);
    let models = train_models(&text_matrix(&text, &seen)?, &dataset.rows(&idx), &labels, &formulations, &pipeline)?;
    models.save(&ctx.out, &seen)?;
    info!("trained {} seen classes on {} images", seen.len(), idx.len());
    Ok(())
}

#[derive(Serialize)]
struct ClassifierInfo {
    formulation: Formulation,
    kind: ClassifierKind,
    class: Option<ClassId>,
    document: Option<PathBuf>,
    length: usize,
}

fn cmd_predict(ctx: &Context, a: &PredictArgs) -> CmdResult {
    let c = &ctx.config;
    let model_dir = pick(a.model.clone(), c.model.clone(), "model")?;
    let (mut models, _) = TrainedModels::load(&model_dir)?;
    let formulation = match a.formulation.or_else(|| c.formulations.as_ref().and_then(|f| f.first().copied())) {
        Some(f) => f,
        None if models.formulations.len() == 1 => models.formulations[0],
        None => return Err(Failure::Usage("missing --formulation".into())),
    };
    models.config = ctx.pipeline(Some(models.config.clone()), &a.hyper);
    let text_path = a.text.clone().or(c.text.clone());
    let t_star = match (&a.document, a.class) {
        (Some(doc), _) => {
            let text_path = pick(text_path, None, "text")?;
            let body = io::read_text(doc)?;
            if text_path.join(EMBEDDING_MARKER).exists() {
                let marker: EmbeddingFeatures = io::read_json(&text_path.join(EMBEDDING_MARKER))?;
                let emb = a.embeddings.clone().or(c.embeddings.clone()).unwrap_or(marker.embeddings);
                bag_of_triplets(&body, &EmbeddingTable::load(&emb)?)?.aggregate()
            } else {
                TextFeatures::load(&text_path)?.featurize(&body)?
            }
        }
        (None, Some(id)) => {
            let text = load_text(&pick(text_path, None, "text")?)?;
            text.get(&id)
                .cloned()
                .ok_or_else(|| Error::Argument(format!("no text features for class {id}")))?
        }
        (None, None) => return Err(Failure::Usage("give --document or --class".into())),
    };
    let classifier = models.predict(formulation, &t_star)?;
    classifier.save(&ctx.out.join("classifier.cfmx"))?;
    io::write_json(
        &ctx.out.join("classifier.json"),
        &ClassifierInfo {
            formulation,
            kind: classifier.kind(),
            class: a.class,
            document: a.document.clone(),
            length: classifier.values().len(),
        },
    )?;
    if let Some(test) = &a.test_features {
        let images = io::read_matrix(test)?;
        let scores = models.score(&classifier, &images)?;
        let mut csv = String::from("image,score\n");
        for (i, s) in scores.iter().enumerate() {
            let _ = writeln!(csv, "{i},{s}");
        }
        io::write_bytes(&ctx.out.join("scores.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> CmdResult {
    let c = &ctx.config;
    let mut bench = BenchmarkConfig {
        pipeline: ctx.pipeline(None, &a.hyper),
        ..BenchmarkConfig::default()
    };
    if let Some(f) = a.formulation.clone().or(c.formulations.clone()) {
        bench.formulations = f;
    }
    if let Some(f) = a.folds.or(c.folds) {
        bench.folds = f;
    }
    if let Some(f) = a.train_fraction.or(c.train_fraction) {
        bench.train_fraction = f;
    }
    let (dataset, text) = if a.synthetic {
        let task = SyntheticTask {
            seed: ctx.seed,
            ..c.synth.clone().unwrap_or_default()
        };
        let data = task.generate()?;
        (data.dataset, data.text)
    } else {
        load_data(ctx, &a.data)?
    };
    let splits: Vec<ClassSplit> = match a.splits.clone().or(c.splits.clone()) {
        Some(p) => {
            let splits = load_splits(&p)?;
            let all: BTreeSet<ClassId> = dataset.class_ids().into_iter().collect();
            for s in &splits {
                s.check_covers(&all).map_err(|e| Error::load(&p, e.to_string()))?;
            }
            splits
        }
        None => make_folds(&dataset.class_ids(), bench.folds, ctx.seed)?,
    };
    let report = run_benchmark(&dataset, &text, &splits, &bench, ctx.seed)?;
    report.write(&ctx.out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_synth(ctx: &Context, a: &SynthArgs) -> CmdResult {
    let mut task = ctx.config.synth.clone().unwrap_or_default();
    task.seed = ctx.seed;
    macro_rules! set {
        ($($field:ident = $v:expr),*) => {$(if let Some(v) = $v { task.$field = v; })*};
    }
    set!(
        n_classes = a.classes,
        text_dim = a.text_dim,
        visual_dim = a.visual_dim,
        images_per_class = a.images_per_class,
        scale = a.scale,
        noise = a.noise,
        spread = a.spread
    );
    task.identity_map |= a.identity;
    let data = task.generate()?;
    let out = &ctx.out;
    data.dataset.save(&out.join("features.cfmx"), &out.join("labels.txt"))?;
    let ids: Vec<ClassId> = data.text.keys().copied().collect();
    io::write_matrix(&out.join("text.cfmx"), &text_matrix(&data.text, &ids)?)?;
    // Zero-padded names keep sorted-name order equal to class id order.
    let width = ids.len().to_string().len();
    let corpus: BTreeMap<String, &String> = data
        .corpus
        .iter()
        .map(|(id, doc)| (format!("class{id:0width$}"), doc))
        .collect();
    io::write_json(&out.join("corpus.json"), &corpus)?;
    io::write_json(&out.join("task.json"), &task)?;
    info!("wrote a {}-class synthetic task", ids.len());
    Ok(())
}

struct StderrLogger;

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record) {
        if self.enabled(record.metadata()) {
            eprintln!("[{}] {}", record.level(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn init_logging(verbose: u8) {
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(match verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    });
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> CmdResult {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Featurize(a) => cmd_featurize(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
