//! Trains every component a formulation needs on the seen classes and
//! predicts classifiers for unseen text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, KernelClassifier, LinearClassifier};
use crate::data::{augment_rows, ClassId};
use crate::io;
use crate::error::{ensure_arg, Error, Result};
use crate::kernel_dt::{dt_kernel_classifier, train_kernel_dt, with_bias_row, KernelDtConfig, KernelTransfer};
use crate::kernels::{self, median_rbf, KernelSpec, VectorKernel};
use crate::linear_dt::{dt_classifier, train_constrained_dt, train_dt, DtConfig, LinearTransfer, TrainingLog};
use crate::pairs::Thresholds;
use crate::predictors::{predict_kernel_svm_dt, predict_linear_b, predict_linear_e, PredictorConfig};
use crate::regression::{GprModel, RegressorPrediction, TgpConfig, TgpModel};
use crate::svm::{train_binary_svm, train_seen_kernel_classifiers, SeenKernelClassifiers, SvmConfig};

/// Which prediction method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "A-gpr")]
    AGpr,
    #[serde(rename = "A-tgp")]
    ATgp,
    B,
    C,
    D,
    E,
    #[serde(rename = "dt-kernel")]
    DtKernel,
    #[serde(rename = "svm-dt-kernel")]
    SvmDtKernel,
}

impl Formulation {
    pub const ALL: [Formulation; 8] = [
        Formulation::AGpr,
        Formulation::ATgp,
        Formulation::B,
        Formulation::C,
        Formulation::D,
        Formulation::E,
        Formulation::DtKernel,
        Formulation::SvmDtKernel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::AGpr => "A-gpr",
            Formulation::ATgp => "A-tgp",
            Formulation::B => "B",
            Formulation::C => "C",
            Formulation::D => "D",
            Formulation::E => "E",
            Formulation::DtKernel => "dt-kernel",
            Formulation::SvmDtKernel => "svm-dt-kernel",
        }
    }

    pub fn is_kernel(self) -> bool {
        matches!(self, Formulation::DtKernel | Formulation::SvmDtKernel)
    }

    fn needs_gpr(self) -> bool {
        self == Formulation::AGpr
    }

    fn needs_tgp(self) -> bool {
        matches!(self, Formulation::ATgp | Formulation::B | Formulation::E)
    }

    fn needs_dt(self) -> bool {
        matches!(self, Formulation::C | Formulation::E)
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown formulation {s:?}; expected one of {}",
                    Formulation::ALL.map(|f| f.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Slack penalty of the seen-class SVMs.
    pub svm_c: f64,
    pub gpr_noise: f64,
    pub tgp_lambda_t: f64,
    pub tgp_lambda_c: f64,
    /// Weight of the pair losses in linear domain transfer.
    pub dt_lambda: f64,
    /// Weight pulling transferred rows towards the seen classifiers (formulation D).
    pub cdt_lambda2: f64,
    pub thresholds: Thresholds,
    pub kdt_lambda1: f64,
    pub kdt_lambda2: f64,
    /// `None` picks an rbf kernel by the median heuristic.
    pub visual_kernel: Option<VectorKernel>,
    pub text_kernel: Option<VectorKernel>,
    pub predictor: PredictorConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            svm_c: 1.0,
            gpr_noise: 1e-3,
            tgp_lambda_t: 1e-3,
            tgp_lambda_c: 1e-3,
            dt_lambda: 1.0,
            cdt_lambda2: 1.0,
            thresholds: Thresholds::default(),
            kdt_lambda1: 1.0,
            kdt_lambda2: 0.0,
            visual_kernel: None,
            text_kernel: None,
            predictor: PredictorConfig::default(),
            seed: 0,
        }
    }
}

fn median_kernel(rows: &DMatrix<f64>) -> VectorKernel {
    match median_rbf(rows, false) {
        KernelSpec::Rbf { gamma, squared } => VectorKernel::Rbf { gamma, squared },
        _ => unreachable!(),
    }
}

/// Components trained on the kernel side.
#[derive(Debug, Clone)]
pub struct KernelModels {
    pub visual_kernel: VectorKernel,
    pub text_kernel: VectorKernel,
    /// Gram of the training images.
    pub gram: DMatrix<f64>,
    pub seen: SeenKernelClassifiers,
    pub transfer: KernelTransfer,
}

/// Everything learned from the seen classes.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    /// Seen-class text vectors, one row per class.
    pub text: DMatrix<f64>,
    /// Training image features (without the bias column).
    pub images: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Seen linear classifiers, one row per class.
    pub seen_linear: DMatrix<f64>,
    pub gpr: Option<GprModel>,
    pub tgp: Option<TgpModel>,
    pub dt: Option<LinearTransfer>,
    pub cdt: Option<LinearTransfer>,
    pub kernel: Option<KernelModels>,
    /// Formulations the models were trained for.
    pub formulations: Vec<Formulation>,
    pub config: PipelineConfig,
}

/// One-vs-all linear SVMs over augmented features; row `j` is `c_j`.
pub fn train_seen_linear(images: &DMatrix<f64>, labels: &[usize], n_classes: usize, c: f64) -> Result<DMatrix<f64>> {
    ensure_arg!(n_classes >= 2, "need at least two seen classes");
    let gram = images * images.transpose();
    let cfg = SvmConfig { c, ..SvmConfig::default() };
    let mut out = DMatrix::zeros(n_classes, images.ncols() + 1);
    for k in 0..n_classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let svm = train_binary_svm(&gram, &y, &cfg)?;
        let w = images.tr_mul(&svm.beta);
        out.view_mut((k, 0), (1, w.len())).copy_from(&w.transpose());
        out[(k, w.len())] = svm.bias;
    }
    Ok(out)
}

/// Trains what `formulations` need. `labels[i]` is the row of `text` that
/// describes image `i`.
pub fn train_models(
    text: &DMatrix<f64>,
    images: &DMatrix<f64>,
    labels: &[usize],
    formulations: &[Formulation],
    config: &PipelineConfig,
) -> Result<TrainedModels> {
    let n_sc = text.nrows();
    ensure_arg!(n_sc >= 2, "need at least two seen classes");
    ensure_arg!(images.nrows() == labels.len(), "{} images but {} labels", images.nrows(), labels.len());
    ensure_arg!(labels.iter().all(|&l| l < n_sc), "image label outside the seen classes");
    for k in 0..n_sc {
        ensure_arg!(labels.contains(&k), "seen class {} has no training images", k + 1);
    }
    config.predictor.validate()?;
    let any = |p: fn(Formulation) -> bool| formulations.iter().any(|&f| p(f));
    let seen_linear = train_seen_linear(images, labels, n_sc, config.svm_c)?;
    let t_aug = augment_rows(text);
    let x_aug = augment_rows(images);
    let dt_config = DtConfig {
        lambda: config.dt_lambda,
        thresholds: config.thresholds,
        seed: config.seed,
        ..DtConfig::default()
    };

    let gpr = if any(Formulation::needs_gpr) {
        Some(GprModel::fit(text, &seen_linear, None, config.gpr_noise)?)
    } else {
        None
    };
    let tgp = if any(Formulation::needs_tgp) {
        let cfg = TgpConfig {
            lambda_t: config.tgp_lambda_t,
            lambda_c: config.tgp_lambda_c,
            ..TgpConfig::default()
        };
        Some(TgpModel::fit(text, &seen_linear, &cfg)?)
    } else {
        None
    };
    let dt = if any(Formulation::needs_dt) {
        Some(train_dt(&t_aug, &x_aug, labels, &dt_config)?)
    } else {
        None
    };
    let cdt = if formulations.contains(&Formulation::D) {
        Some(train_constrained_dt(
            &t_aug,
            &x_aug,
            labels,
            &seen_linear,
            config.dt_lambda,
            config.cdt_lambda2,
            &dt_config,
        )?)
    } else {
        None
    };
    let kernel = if any(Formulation::is_kernel) {
        let visual_kernel = config.visual_kernel.unwrap_or_else(|| median_kernel(images));
        let text_kernel = config.text_kernel.unwrap_or_else(|| median_kernel(text));
        let gram = kernels::gram_rows(&visual_kernel.into(), images)?.into_inner();
        let g = kernels::gram_rows(&text_kernel.into(), text)?.into_inner();
        let seen = train_seen_kernel_classifiers(&gram, labels, n_sc, &SvmConfig { c: config.svm_c, ..SvmConfig::default() })?;
        let kcfg = KernelDtConfig {
            lambda1: config.kdt_lambda1,
            lambda2: config.kdt_lambda2,
            thresholds: config.thresholds,
            seed: config.seed,
            ..KernelDtConfig::default()
        };
        let transfer = train_kernel_dt(&g, &with_bias_row(&gram), labels, &seen.b, &kcfg)?;
        Some(KernelModels {
            visual_kernel,
            text_kernel,
            gram,
            seen,
            transfer,
        })
    } else {
        None
    };
    Ok(TrainedModels {
        text: text.clone(),
        images: images.clone(),
        labels: labels.to_vec(),
        seen_linear,
        gpr,
        tgp,
        dt,
        cdt,
        kernel,
        formulations: formulations.to_vec(),
        config: config.clone(),
    })
}

fn missing(what: &str, f: Formulation) -> Error {
    Error::Argument(format!("formulation {f} needs a trained {what}"))
}

impl TrainedModels {
    pub fn n_seen(&self) -> usize {
        self.text.nrows()
    }

    fn tgp_prediction(&self, f: Formulation, t_star: &DVector<f64>) -> Result<RegressorPrediction> {
        let tgp = self.tgp.as_ref().ok_or_else(|| missing("TGP regressor", f))?;
        Ok(tgp.predict(t_star)?.prediction)
    }

    /// Predicts the classifier of the class described by `t_star`.
    pub fn predict(&self, f: Formulation, t_star: &DVector<f64>) -> Result<Classifier> {
        ensure_arg!(
            t_star.len() == self.text.ncols(),
            "text vector has {} entries, the models expect {}",
            t_star.len(),
            self.text.ncols()
        );
        let t_aug = t_star.clone().insert_row(t_star.len(), 1.0);
        let x_aug = || augment_rows(&self.images);
        let p = &self.config.predictor;
        let linear = |c: DVector<f64>| Ok(Classifier::Linear(LinearClassifier::new(c)?));
        match f {
            Formulation::AGpr => {
                let gpr = self.gpr.as_ref().ok_or_else(|| missing("GP regressor", f))?;
                linear(gpr.predict(t_star)?.mean)
            }
            Formulation::ATgp => linear(self.tgp_prediction(f, t_star)?.mean),
            Formulation::B => {
                let reg = self.tgp_prediction(f, t_star)?;
                Ok(Classifier::Linear(predict_linear_b(&reg, &x_aug(), p.alpha, p.c)?.classifier))
            }
            Formulation::C => {
                let dt = self.dt.as_ref().ok_or_else(|| missing("domain transfer", f))?;
                linear(dt_classifier(dt, &t_aug)?)
            }
            Formulation::D => {
                let dt = self.cdt.as_ref().ok_or_else(|| missing("constrained domain transfer", f))?;
                linear(dt_classifier(dt, &t_aug)?)
            }
            Formulation::E => {
                let dt = self.dt.as_ref().ok_or_else(|| missing("domain transfer", f))?;
                let reg = self.tgp_prediction(f, t_star)?;
                let l = p.l.unwrap_or(dt.thresholds.l);
                Ok(Classifier::Linear(predict_linear_e(&t_aug, &reg, &dt.w, &x_aug(), l, p)?.classifier))
            }
            Formulation::DtKernel | Formulation::SvmDtKernel => {
                let k = self.kernel.as_ref().ok_or_else(|| missing("kernel transfer", f))?;
                let g_star = kernels::kernel_column(&k.text_kernel.into(), &self.text, t_star)?;
                let dt = dt_kernel_classifier(&k.transfer, &g_star)?;
                if f == Formulation::DtKernel {
                    return Ok(Classifier::Kernel(dt));
                }
                let a = k.gram.diagonal();
                Ok(Classifier::Kernel(predict_kernel_svm_dt(&dt, &k.gram, &a, p)?.classifier))
            }
        }
    }

    /// Kernel columns of `images` against the training images.
    pub fn kernel_columns(&self, images: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self
            .kernel
            .as_ref()
            .ok_or_else(|| Error::Argument("no kernel models were trained".into()))?;
        kernels::cross_rows(&k.visual_kernel.into(), &self.images, images)
    }

    /// Scores of every image (rows of `images`, without bias) under `classifier`.
    pub fn score(&self, classifier: &Classifier, images: &DMatrix<f64>) -> Result<DVector<f64>> {
        match classifier {
            Classifier::Linear(c) => c.score_rows(&augment_rows(images)),
            Classifier::Kernel(k) => k.score_columns(&self.kernel_columns(images)?),
        }
    }

    /// Seen-class scores (images × seen classes) in the space of `f`.
    pub fn seen_scores(&self, f: Formulation, images: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.is_kernel() {
            let k = self.kernel.as_ref().ok_or_else(|| missing("kernel transfer", f))?;
            let cols = self.kernel_columns(images)?;
            let mut out = DMatrix::zeros(images.nrows(), self.n_seen());
            for j in 0..self.n_seen() {
                let c = KernelClassifier::new(k.seen.b.column(j).into_owned())?;
                out.set_column(j, &c.score_columns(&cols)?);
            }
            Ok(out)
        } else {
            Ok(augment_rows(images) * self.seen_linear.transpose())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    formulations: Vec<Formulation>,
    seen: Vec<ClassId>,
    text_dim: usize,
    visual_dim: usize,
    config: PipelineConfig,
}

/// Hyperparameters of the regressor; the regressor itself is refitted from
/// the stored training data on load.
#[derive(Serialize, Deserialize)]
struct RegressionFile {
    kind: String,
    noise: Option<f64>,
    lambda_t: Option<f64>,
    lambda_c: Option<f64>,
    input_rho: f64,
    output_rho: Option<f64>,
}

/// Training summaries written next to the models.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLogFile {
    pub formulations: Vec<Formulation>,
    pub models: BTreeMap<String, TrainingLog>,
    pub seen_kernel_svms_converged: Option<bool>,
}

const MANIFEST: &str = "manifest.json";

impl TrainedModels {
    /// Collected training logs.
    pub fn train_log(&self) -> TrainLogFile {
        let mut models = BTreeMap::new();
        if let Some(dt) = &self.dt {
            models.insert("transfer".to_string(), dt.log.clone());
        }
        if let Some(dt) = &self.cdt {
            models.insert("constrained_transfer".to_string(), dt.log.clone());
        }
        if let Some(k) = &self.kernel {
            models.insert("kernel_transfer".to_string(), k.transfer.log.clone());
        }
        TrainLogFile {
            formulations: self.formulations.clone(),
            models,
            seen_kernel_svms_converged: self.kernel.as_ref().map(|k| k.seen.converged),
        }
    }

    /// Writes the model bundle into `dir`. `seen[k]` names text row `k`.
    pub fn save(&self, dir: &Path, seen: &[ClassId]) -> Result<()> {
        ensure_arg!(seen.len() == self.n_seen(), "{} class ids for {} seen classes", seen.len(), self.n_seen());
        let mut config = self.config.clone();
        if let Some(k) = &self.kernel {
            config.visual_kernel = Some(k.visual_kernel);
            config.text_kernel = Some(k.text_kernel);
        }
        io::write_json(
            &dir.join(MANIFEST),
            &Manifest {
                formulations: self.formulations.clone(),
                seen: seen.to_vec(),
                text_dim: self.text.ncols(),
                visual_dim: self.images.ncols(),
                config,
            },
        )?;
        io::write_matrix(&dir.join("seen_text.cfmx"), &self.text)?;
        io::write_matrix(&dir.join("train_features.cfmx"), &self.images)?;
        let ids: Vec<ClassId> = self.labels.iter().map(|&l| seen[l]).collect();
        io::write_labels(&dir.join("train_labels.txt"), &ids)?;
        io::write_matrix(&dir.join("seen_classifiers.cfmx"), &self.seen_linear)?;
        if let Some(g) = &self.gpr {
            let file = RegressionFile {
                kind: "gpr".into(),
                noise: Some(g.noise),
                lambda_t: None,
                lambda_c: None,
                input_rho: g.kernel.rho,
                output_rho: None,
            };
            io::write_json(&dir.join("regression_gpr.json"), &file)?;
        }
        if let Some(t) = &self.tgp {
            let ((lt, lc), (ki, ko)) = (t.lambdas(), t.kernels());
            let file = RegressionFile {
                kind: "tgp".into(),
                noise: None,
                lambda_t: Some(lt),
                lambda_c: Some(lc),
                input_rho: ki.rho,
                output_rho: Some(ko.rho),
            };
            io::write_json(&dir.join("regression.json"), &file)?;
        }
        if let Some(dt) = &self.dt {
            dt.save(&dir.join("transfer.cfmx"), &dir.join("transfer.json"))?;
        }
        if let Some(dt) = &self.cdt {
            dt.save(&dir.join("constrained_transfer.cfmx"), &dir.join("constrained_transfer.json"))?;
        }
        if let Some(k) = &self.kernel {
            k.transfer.save(
                &dir.join("kernel_transfer.cfmx"),
                &dir.join("text_gram.cfmx"),
                &dir.join("kernel_transfer.json"),
            )?;
            io::write_matrix(&dir.join("seen_kernel_classifiers.cfmx"), &k.seen.b)?;
        }
        io::write_json(&dir.join("train_log.json"), &self.train_log())
    }

    /// Reads a bundle written by [`TrainedModels::save`]; returns the seen class ids too.
    pub fn load(dir: &Path) -> Result<(Self, Vec<ClassId>)> {
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.exists() {
            return Err(Error::load(&manifest_path, "no trained models here"));
        }
        let m: Manifest = io::read_json(&manifest_path)?;
        let text = io::read_matrix(&dir.join("seen_text.cfmx"))?;
        let images = io::read_matrix(&dir.join("train_features.cfmx"))?;
        let ids = io::read_labels(&dir.join("train_labels.txt"))?;
        let seen_linear = io::read_matrix(&dir.join("seen_classifiers.cfmx"))?;
        let bad = |what: &str| Error::load(dir, format!("{what} disagrees with the manifest"));
        if text.shape() != (m.seen.len(), m.text_dim) {
            return Err(bad("seen_text.cfmx"));
        }
        if images.ncols() != m.visual_dim || images.nrows() != ids.len() {
            return Err(bad("train_features.cfmx"));
        }
        if seen_linear.shape() != (m.seen.len(), m.visual_dim + 1) {
            return Err(bad("seen_classifiers.cfmx"));
        }
        let labels = ids
            .iter()
            .map(|id| m.seen.iter().position(|s| s == id).ok_or_else(|| bad("train_labels.txt")))
            .collect::<Result<Vec<_>>>()?;
        let config = m.config;
        let has = |p: fn(Formulation) -> bool| m.formulations.iter().any(|&f| p(f));
        let gpr = if has(Formulation::needs_gpr) {
            Some(GprModel::fit(&text, &seen_linear, None, config.gpr_noise)?)
        } else {
            None
        };
        let tgp = if has(Formulation::needs_tgp) {
            let cfg = TgpConfig {
                lambda_t: config.tgp_lambda_t,
                lambda_c: config.tgp_lambda_c,
                ..TgpConfig::default()
            };
            Some(TgpModel::fit(&text, &seen_linear, &cfg)?)
        } else {
            None
        };
        let dt = if has(Formulation::needs_dt) {
            Some(LinearTransfer::load(&dir.join("transfer.cfmx"), &dir.join("transfer.json"))?)
        } else {
            None
        };
        let cdt = if m.formulations.contains(&Formulation::D) {
            Some(LinearTransfer::load(
                &dir.join("constrained_transfer.cfmx"),
                &dir.join("constrained_transfer.json"),
            )?)
        } else {
            None
        };
        let kernel = if has(Formulation::is_kernel) {
            let (Some(visual_kernel), Some(text_kernel)) = (config.visual_kernel, config.text_kernel) else {
                return Err(bad("kernel choice"));
            };
            let transfer = KernelTransfer::load(
                &dir.join("kernel_transfer.cfmx"),
                &dir.join("text_gram.cfmx"),
                &dir.join("kernel_transfer.json"),
            )?;
            let b = io::read_matrix(&dir.join("seen_kernel_classifiers.cfmx"))?;
            if b.shape() != (images.nrows() + 1, m.seen.len()) {
                return Err(bad("seen_kernel_classifiers.cfmx"));
            }
            let gram = kernels::gram_rows(&visual_kernel.into(), &images)?.into_inner();
            Some(KernelModels {
                visual_kernel,
                text_kernel,
                gram,
                seen: SeenKernelClassifiers { b, converged: true },
                transfer,
            })
        } else {
            None
        };
        let models = TrainedModels {
            text,
            images,
            labels,
            seen_linear,
            gpr,
            tgp,
            dt,
            cdt,
            kernel,
            formulations: m.formulations,
            config,
        };
        Ok((models, m.seen))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulation_names_roundtrip() {
        for f in Formulation::ALL {
            assert_eq!(f.name().parse::<Formulation>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.name()));
        }
        assert!("F".parse::<Formulation>().is_err());
    }

    #[test]
    fn seen_linear_separates_clusters() {
        let x = DMatrix::from_row_slice(6, 2, &[3.0, 0.0, 3.2, 0.3, 0.0, 3.0, 0.2, 3.1, -3.0, -3.0, -3.1, -2.8]);
        let labels = [0, 0, 1, 1, 2, 2];
        let c = train_seen_linear(&x, &labels, 3, 10.0).unwrap();
        let s = augment_rows(&x) * c.transpose();
        for i in 0..6 {
            let row: Vec<f64> = s.row(i).iter().copied().collect();
            assert_eq!(crate::classifier::argmax(&row), Some(labels[i]));
        }
    }
}
