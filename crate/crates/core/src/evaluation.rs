//! Metrics, the synthetic task generator and the fold-wise benchmark.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::argmax;
use crate::data::{make_folds, ClassId, ClassSplit, VisualDataset};
use crate::error::{ensure_arg, Result};
use crate::io;
use crate::pipeline::{train_models, Formulation, PipelineConfig};

/// ROC curve plus the exact rank-statistic AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    /// Descending; the first entry is `+inf` (nothing accepted).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

fn check_scores(name: &str, s: &[f64]) -> Result<()> {
    ensure_arg!(!s.is_empty(), "no {name} scores");
    ensure_arg!(s.iter().all(|v| !v.is_nan()), "{name} scores contain NaN");
    Ok(())
}

/// Area under the ROC curve of `pos` against `neg`, computed from exact win
/// and tie counts.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<RocResult> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let mut sorted_neg = neg.to_vec();
    sorted_neg.sort_by(f64::total_cmp);
    let (mut wins, mut ties) = (0u128, 0u128);
    for &p in pos {
        let below = sorted_neg.partition_point(|&n| n < p);
        let upto = sorted_neg.partition_point(|&n| n <= p);
        wins += below as u128;
        ties += (upto - below) as u128;
    }
    let den = 2 * pos.len() as u128 * neg.len() as u128;
    let num = 2 * wins + ties;
    let value = num as f64 / den as f64;

    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut roc = RocResult {
        thresholds: vec![f64::INFINITY],
        tpr: vec![0.0],
        fpr: vec![0.0],
        auc: value,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.thresholds.push(t);
        roc.tpr.push(tp as f64 / np);
        roc.fpr.push(fp as f64 / nn);
    }
    Ok(roc)
}

impl RocResult {
    /// Trapezoidal area under the emitted curve.
    pub fn trapezoid(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
            .sum()
    }
}

/// Multiclass accuracy among unseen classes. `scores` is images × classes and
/// `truth[i]` the column of image `i`'s class.
pub fn mau(scores: &DMatrix<f64>, truth: &[usize]) -> Result<f64> {
    let k = scores.ncols();
    ensure_arg!(k >= 2, "multiclass accuracy needs at least two classes, got {k}");
    ensure_arg!(scores.nrows() == truth.len(), "{} score rows but {} labels", scores.nrows(), truth.len());
    ensure_arg!(truth.iter().all(|&t| t < k), "label outside the {k} classes");
    for c in 0..k {
        ensure_arg!(truth.contains(&c), "class column {c} has no test images");
    }
    let correct = (0..truth.len())
        .filter(|&i| {
            let row: Vec<f64> = scores.row(i).iter().copied().collect();
            argmax(&row) == Some(truth[i])
        })
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Recall of an unseen class competing with every seen classifier.
/// `seen` is images × seen classes; `unseen[i]` scores the same image under the
/// predicted classifier, which sits after all seen columns.
pub fn recall_seen_plus_one(seen: &DMatrix<f64>, unseen: &DVector<f64>) -> Result<f64> {
    ensure_arg!(!unseen.is_empty(), "no unseen test images");
    ensure_arg!(seen.nrows() == unseen.len(), "{} seen score rows but {} unseen scores", seen.nrows(), unseen.len());
    let last = seen.ncols();
    let hits = (0..unseen.len())
        .filter(|&i| {
            let mut row: Vec<f64> = seen.row(i).iter().copied().collect();
            row.push(unseen[i]);
            argmax(&row) == Some(last)
        })
        .count();
    Ok(hits as f64 / unseen.len() as f64)
}

/// Generator for a task with a known text-to-visual coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub seed: u64,
    pub n_classes: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub images_per_class: usize,
    /// Length of the mapped prototypes.
    pub scale: f64,
    /// Standard deviation of the per-class offset added to each visual mean.
    pub noise: f64,
    /// Standard deviation of images around their class mean.
    pub spread: f64,
    /// Use the identity as text-to-visual map (needs equal dimensions).
    pub identity_map: bool,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            seed: 0,
            n_classes: 10,
            text_dim: 8,
            visual_dim: 16,
            images_per_class: 40,
            scale: 3.0,
            noise: 0.5,
            spread: 1.0,
            identity_map: false,
        }
    }
}

/// A generated task. Class ids run from 1 to `n_classes`.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: VisualDataset,
    pub text: BTreeMap<ClassId, DVector<f64>>,
    /// One document per class whose tf-idf features follow the prototype.
    pub corpus: BTreeMap<ClassId, String>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.n_classes >= 3, "need at least three classes");
        ensure_arg!(self.text_dim >= 1 && self.visual_dim >= 1, "dimensions must be positive");
        ensure_arg!(self.images_per_class >= 2, "need at least two images per class");
        for (name, v) in [("scale", self.scale), ("noise", self.noise), ("spread", self.spread)] {
            ensure_arg!(v.is_finite() && v >= 0.0, "{name} must be finite and non-negative, got {v}");
        }
        ensure_arg!(
            !self.identity_map || self.text_dim == self.visual_dim,
            "the identity map needs text_dim == visual_dim"
        );
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (dt, dv) = (self.text_dim, self.visual_dim);
        let map = if self.identity_map {
            DMatrix::identity(dv, dt)
        } else {
            // Gaussian matrices are full rank with probability one.
            DMatrix::from_vec(dv, dt, gaussian(&mut rng, dv * dt)) / (dt as f64).sqrt()
        };
        let mut text = BTreeMap::new();
        let mut corpus = BTreeMap::new();
        let n = self.n_classes * self.images_per_class;
        let mut features = DMatrix::zeros(n, dv);
        let mut labels = Vec::with_capacity(n);
        for k in 0..self.n_classes {
            let id = k as ClassId + 1;
            let mut t = DVector::from_vec(gaussian(&mut rng, dt));
            while t.norm() < 1e-12 {
                t = DVector::from_vec(gaussian(&mut rng, dt));
            }
            t.normalize_mut();
            let offset = DVector::from_vec(gaussian(&mut rng, dv)) * self.noise;
            let mean = &map * &t * self.scale + offset;
            for j in 0..self.images_per_class {
                let x = &mean + DVector::from_vec(gaussian(&mut rng, dv)) * self.spread;
                features.set_row(k * self.images_per_class + j, &x.transpose());
                labels.push(id);
            }
            corpus.insert(id, prototype_document(&t));
            text.insert(id, t);
        }
        let dataset = VisualDataset::new(features, labels)?;
        Ok(SyntheticData { dataset, text, corpus })
    }
}

/// Words `pos<k>`/`neg<k>` repeated in proportion to the prototype entries.
fn prototype_document(t: &DVector<f64>) -> String {
    let mut words = vec!["class".to_string()];
    for (k, &v) in t.iter().enumerate() {
        let reps = (v.abs() * 5.0).round() as usize;
        let w = if v >= 0.0 { format!("pos{k}") } else { format!("neg{k}") };
        words.extend(std::iter::repeat_n(w, reps));
    }
    words.join(" ")
}

/// Scalar mean ± population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// Mean over the fold's unseen classes.
    pub auc: f64,
    pub class_auc: BTreeMap<ClassId, f64>,
    /// Absent when the fold has a single unseen class.
    pub mau: Option<f64>,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub seed: u64,
    pub fold: usize,
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub metrics: BTreeMap<String, FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationSummary {
    pub auc: MetricSummary,
    pub mau: Option<MetricSummary>,
    pub recall: MetricSummary,
}

/// ROC curve of one predicted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct RocRecord {
    pub formulation: Formulation,
    pub seed: u64,
    pub fold: usize,
    pub class: ClassId,
    pub roc: RocResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub formulations: Vec<Formulation>,
    pub folds: Vec<FoldReport>,
    pub summary: BTreeMap<String, FormulationSummary>,
    #[serde(skip)]
    pub roc: Vec<RocRecord>,
}

/// Settings shared by every fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub formulations: Vec<Formulation>,
    pub folds: usize,
    /// Share of each seen class's images used for training.
    pub train_fraction: f64,
    pub pipeline: PipelineConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            formulations: vec![Formulation::AGpr, Formulation::C, Formulation::E],
            folds: 5,
            train_fraction: 0.5,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn split_seen_images(dataset: &VisualDataset, seen: &[ClassId], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for &c in seen {
        let mut idx = dataset.images_of(c);
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    (train, test)
}

fn text_rows(text: &BTreeMap<ClassId, DVector<f64>>, ids: &[ClassId]) -> Result<DMatrix<f64>> {
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let t = text
            .get(id)
            .ok_or_else(|| crate::Error::Argument(format!("no text vector for class {id}")))?;
        rows.push(t.transpose());
    }
    Ok(DMatrix::from_rows(&rows))
}

/// Evaluates every formulation on one seen/unseen split.
pub fn run_fold(
    dataset: &VisualDataset,
    text: &BTreeMap<ClassId, DVector<f64>>,
    split: &ClassSplit,
    config: &BenchmarkConfig,
    seed: u64,
    fold: usize,
) -> Result<(FoldReport, Vec<RocRecord>)> {
    ensure_arg!(
        config.train_fraction > 0.0 && config.train_fraction < 1.0,
        "train_fraction must lie in (0, 1), got {}",
        config.train_fraction
    );
    split.check_covers(&dataset.class_ids().into_iter().collect::<BTreeSet<_>>())?;
    let seen = split.seen_vec();
    let unseen = split.unseen_vec();
    let (train_idx, test_idx) = split_seen_images(dataset, &seen, config.train_fraction, seed ^ fold as u64);
    ensure_arg!(!test_idx.is_empty(), "seen classes have no test images");
    let seen_pos: BTreeMap<ClassId, usize> = seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let labels: Vec<usize> = train_idx.iter().map(|&i| seen_pos[&dataset.labels()[i]]).collect();
    let mut pipeline = config.pipeline.clone();
    pipeline.seed = seed;
    let models = train_models(
        &text_rows(text, &seen)?,
        &dataset.rows(&train_idx),
        &labels,
        &config.formulations,
        &pipeline,
    )?;

    let seen_test = dataset.rows(&test_idx);
    let unseen_idx: Vec<Vec<usize>> = unseen.iter().map(|&c| dataset.images_of(c)).collect();
    let unseen_all: Vec<usize> = unseen_idx.concat();
    let unseen_images = dataset.rows(&unseen_all);
    let truth: Vec<usize> = unseen_idx.iter().enumerate().flat_map(|(k, v)| std::iter::repeat_n(k, v.len())).collect();

    let mut metrics = BTreeMap::new();
    let mut rocs = Vec::new();
    for &f in &config.formulations {
        let seen_on_unseen = models.seen_scores(f, &unseen_images)?;
        let mut unseen_scores = DMatrix::zeros(unseen_all.len(), unseen.len());
        let mut class_auc = BTreeMap::new();
        let mut recalls = Vec::new();
        let mut offset = 0;
        for (k, &c) in unseen.iter().enumerate() {
            let t = text.get(&c).ok_or_else(|| crate::Error::Argument(format!("no text vector for class {c}")))?;
            let classifier = models.predict(f, t)?;
            let neg = models.score(&classifier, &seen_test)?;
            let on_unseen = models.score(&classifier, &unseen_images)?;
            unseen_scores.set_column(k, &on_unseen);
            let n_c = unseen_idx[k].len();
            let pos = on_unseen.rows(offset, n_c).into_owned();
            let roc = auc(pos.as_slice(), neg.as_slice())?;
            class_auc.insert(c, roc.auc);
            recalls.push(recall_seen_plus_one(&seen_on_unseen.rows(offset, n_c).into_owned(), &pos)?);
            rocs.push(RocRecord {
                formulation: f,
                seed,
                fold,
                class: c,
                roc,
            });
            offset += n_c;
        }
        let mau = if unseen.len() >= 2 { Some(mau(&unseen_scores, &truth)?) } else { None };
        let n_u = unseen.len() as f64;
        metrics.insert(
            f.name().to_string(),
            FoldMetrics {
                auc: class_auc.values().sum::<f64>() / n_u,
                class_auc,
                mau,
                recall: recalls.iter().sum::<f64>() / n_u,
            },
        );
        log::debug!("seed {seed} fold {fold} {f}: {:?}", metrics[f.name()]);
    }
    Ok((
        FoldReport {
            seed,
            fold,
            seen,
            unseen,
            metrics,
        },
        rocs,
    ))
}

/// Runs every split and aggregates per formulation.
pub fn run_benchmark(
    dataset: &VisualDataset,
    text: &BTreeMap<ClassId, DVector<f64>>,
    splits: &[ClassSplit],
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<BenchmarkReport> {
    ensure_arg!(!config.formulations.is_empty(), "no formulations selected");
    ensure_arg!(!splits.is_empty(), "no splits");
    let mut folds = Vec::new();
    let mut roc = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let (report, curves) = run_fold(dataset, text, split, config, seed, i)?;
        folds.push(report);
        roc.extend(curves);
    }
    Ok(BenchmarkReport::assemble(config.formulations.clone(), folds, roc))
}

/// Generates `task` and evaluates it over `config.folds` class folds.
pub fn run_synthetic(task: &SyntheticTask, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let data = task.generate()?;
    let splits = make_folds(&data.dataset.class_ids(), config.folds, task.seed)?;
    run_benchmark(&data.dataset, &data.text, &splits, config, task.seed)
}

impl BenchmarkReport {
    fn assemble(formulations: Vec<Formulation>, folds: Vec<FoldReport>, roc: Vec<RocRecord>) -> Self {
        let mut summary = BTreeMap::new();
        for f in &formulations {
            let per: Vec<&FoldMetrics> = folds.iter().filter_map(|r| r.metrics.get(f.name())).collect();
            let aucs: Vec<f64> = per.iter().map(|m| m.auc).collect();
            let maus: Vec<f64> = per.iter().filter_map(|m| m.mau).collect();
            let recalls: Vec<f64> = per.iter().map(|m| m.recall).collect();
            if let (Some(auc), Some(recall)) = (MetricSummary::of(&aucs), MetricSummary::of(&recalls)) {
                summary.insert(
                    f.name().to_string(),
                    FormulationSummary {
                        auc,
                        mau: MetricSummary::of(&maus),
                        recall,
                    },
                );
            }
        }
        Self {
            formulations,
            folds,
            summary,
            roc,
        }
    }

    /// Pools the folds of several reports over the same formulations.
    pub fn combine(reports: Vec<BenchmarkReport>) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| crate::Error::Argument("no reports to combine".into()))?;
        let formulations = first.formulations.clone();
        ensure_arg!(
            reports.iter().all(|r| r.formulations == formulations),
            "reports cover different formulations"
        );
        let (mut folds, mut roc) = (Vec::new(), Vec::new());
        for r in reports {
            folds.extend(r.folds);
            roc.extend(r.roc);
        }
        Ok(Self::assemble(formulations, folds, roc))
    }

    pub fn mean_auc(&self, f: Formulation) -> Option<f64> {
        self.summary.get(f.name()).map(|s| s.auc.mean)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let cell = |m: Option<&MetricSummary>| match m {
            Some(m) => format!("{:.4} (+/- {:.4})", m.mean, m.std),
            None => "-".to_string(),
        };
        let mut rows = vec![["formulation".to_string(), "AUC".into(), "MAU".into(), "recall".into()]];
        for f in &self.formulations {
            if let Some(s) = self.summary.get(f.name()) {
                rows.push([f.name().to_string(), cell(Some(&s.auc)), cell(s.mau.as_ref()), cell(Some(&s.recall))]);
            }
        }
        let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(out, "folds: {}", self.folds.len());
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("formulation,seed,fold,class,threshold,fpr,tpr\n");
        for r in &self.roc {
            for i in 0..r.roc.thresholds.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.formulation, r.seed, r.fold, r.class, r.roc.thresholds[i], r.roc.fpr[i], r.roc.tpr[i]
                );
            }
        }
        out
    }

    /// Writes `report.json`, `report.txt` and `roc.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("report.json"), self)?;
        io::write_bytes(&dir.join("report.txt"), self.to_table().as_bytes())?;
        io::write_bytes(&dir.join("roc.csv"), self.roc_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap().auc, 1.0);
        assert_eq!(auc(&[0.6], &[0.4, 0.8]).unwrap().auc, 0.5);
        assert_eq!(auc(&[0.3; 4], &[0.3; 3]).unwrap().auc, 0.5);
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[1.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn roc_curve_matches_auc() {
        let roc = auc(&[0.9, 0.5, 0.5, 0.2], &[0.5, 0.1, 0.7]).unwrap();
        assert!((roc.trapezoid() - roc.auc).abs() < 1e-12);
        assert_eq!(*roc.tpr.last().unwrap(), 1.0);
        assert_eq!(*roc.fpr.last().unwrap(), 1.0);
    }

    #[test]
    fn mau_examples() {
        let perfect = DMatrix::from_row_slice(4, 2, &[1., 0., 2., 0., 0., 1., 0., 3.]);
        assert_eq!(mau(&perfect, &[0, 0, 1, 1]).unwrap(), 1.0);
        let constant = DMatrix::from_element(4, 2, 0.5);
        assert_eq!(mau(&constant, &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(mau(&constant, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn recall_examples() {
        let seen = DMatrix::from_row_slice(4, 2, &[0., 1., 0., 1., 0., 1., 0., 1.]);
        assert_eq!(recall_seen_plus_one(&seen, &DVector::from_element(4, 2.0)).unwrap(), 1.0);
        assert_eq!(recall_seen_plus_one(&seen, &DVector::from_element(4, 1.0)).unwrap(), 0.0);
        assert_eq!(recall_seen_plus_one(&seen, &DVector::from_vec(vec![2., 2., 2., 0.])).unwrap(), 0.75);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let t = SyntheticTask { seed: 7, ..SyntheticTask::default() };
        let (a, b) = (t.generate().unwrap(), t.generate().unwrap());
        assert_eq!(a.dataset.features(), b.dataset.features());
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.dataset.n_classes(), 10);
        assert!(a.text.values().all(|t| (t.norm() - 1.0).abs() < 1e-12));
    }
}
