//! Datasets, class corpora and seen/unseen splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::io;

/// Dense class identifier in `1..=n_classes`.
pub type ClassId = u32;

/// Image features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualDataset {
    features: DMatrix<f64>,
    labels: Vec<ClassId>,
    class_names: BTreeMap<ClassId, String>,
}

impl VisualDataset {
    /// Validates and builds a dataset. The class count is the largest label,
    /// and every id below it must own at least one image.
    pub fn new(features: DMatrix<f64>, labels: Vec<ClassId>) -> Result<Self> {
        let n_classes = labels.iter().copied().max().unwrap_or(0);
        let names = (1..=n_classes).map(|c| (c, format!("class{c}"))).collect();
        Self::with_names(features, labels, names)
    }

    pub fn with_names(
        features: DMatrix<f64>,
        labels: Vec<ClassId>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self> {
        ensure_arg!(features.nrows() >= 1, "dataset has no images");
        ensure_arg!(features.ncols() >= 1, "dataset has zero feature columns");
        ensure_arg!(
            features.nrows() == labels.len(),
            "dimension mismatch: {} feature rows but {} labels",
            features.nrows(),
            labels.len()
        );
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % features.nrows(), pos / features.nrows());
            return Err(Error::Argument(format!(
                "non-finite feature at row {}, column {}",
                r + 1,
                c + 1
            )));
        }
        let n_classes = class_names.len() as ClassId;
        let mut counts = vec![0usize; n_classes as usize];
        for (i, &l) in labels.iter().enumerate() {
            ensure_arg!(
                l >= 1 && l <= n_classes,
                "unknown label {l} on image {} (classes are 1..={n_classes})",
                i + 1
            );
            counts[l as usize - 1] += 1;
        }
        ensure_arg!(
            class_names.keys().copied().eq(1..=n_classes),
            "class names must cover ids 1..={n_classes}"
        );
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Argument(format!("class {} has no images", c + 1)));
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.class_names
    }

    pub fn n_images(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.class_names.keys().copied().collect()
    }

    /// Row indices of every image labelled `class`.
    pub fn images_of(&self, class: ClassId) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        self.features.select_rows(indices)
    }

    /// Features with a trailing column of ones.
    pub fn augmented(&self) -> DMatrix<f64> {
        augment_rows(&self.features)
    }

    pub fn save(&self, features_path: &Path, labels_path: &Path) -> Result<()> {
        io::write_matrix(features_path, &self.features)?;
        io::write_labels(labels_path, &self.labels)
    }
}

/// Reads a feature matrix (CSV or binary) and a labels file.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<VisualDataset> {
    let features = io::read_matrix(features_path)?;
    let labels = io::read_labels(labels_path)?;
    VisualDataset::new(features, labels).map_err(|e| match e {
        Error::Argument(m) => Error::load(features_path, m),
        other => other,
    })
}

/// Appends a column of ones.
pub fn augment_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().insert_column(m.ncols(), 1.0)
}

/// A vector whose last coordinate is the bias entry 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AugmentedVector(DVector<f64>);

impl AugmentedVector {
    pub fn from_features(features: &[f64]) -> Self {
        let mut v = features.to_vec();
        v.push(1.0);
        Self(DVector::from_vec(v))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn features(&self) -> &[f64] {
        &self.0.as_slice()[..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<f64>> for AugmentedVector {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        match v.last() {
            Some(&x) if x == 1.0 => Ok(Self(DVector::from_vec(v))),
            _ => Err("augmented vector must end in 1".into()),
        }
    }
}

impl From<AugmentedVector> for Vec<f64> {
    fn from(v: AugmentedVector) -> Self {
        v.0.as_slice().to_vec()
    }
}

/// One description per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCorpus {
    documents: BTreeMap<ClassId, String>,
    names: BTreeMap<ClassId, String>,
}

impl TextCorpus {
    pub fn new(documents: BTreeMap<ClassId, String>) -> Result<Self> {
        let names = documents.keys().map(|&c| (c, format!("class{c}"))).collect();
        Self::build(documents, names)
    }

    /// Assigns ids `1..` in sorted name order.
    pub fn from_named(named: BTreeMap<String, String>) -> Result<Self> {
        let mut documents = BTreeMap::new();
        let mut names = BTreeMap::new();
        for (i, (name, text)) in named.into_iter().enumerate() {
            let id = i as ClassId + 1;
            documents.insert(id, text);
            names.insert(id, name);
        }
        Self::build(documents, names)
    }

    fn build(documents: BTreeMap<ClassId, String>, names: BTreeMap<ClassId, String>) -> Result<Self> {
        ensure_arg!(!documents.is_empty(), "corpus has no documents");
        for (id, text) in &documents {
            ensure_arg!(*id >= 1, "class ids start at 1");
            if crate::text::tokenize(text).is_empty() {
                return Err(Error::Featurization(format!(
                    "document for class {id} ({}) is empty after stop-word removal",
                    names[id]
                )));
            }
        }
        Ok(Self { documents, names })
    }

    /// Reads a JSON object mapping class name to text.
    pub fn load(path: &Path) -> Result<Self> {
        let named: BTreeMap<String, String> = io::read_json(path)?;
        Self::from_named(named)
    }

    pub fn documents(&self) -> &BTreeMap<ClassId, String> {
        &self.documents
    }

    pub fn document(&self, id: ClassId) -> Option<&str> {
        self.documents.get(&id).map(String::as_str)
    }

    pub fn names(&self) -> &BTreeMap<ClassId, String> {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Partition of the class ids into seen and unseen sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSplit", into = "RawSplit")]
pub struct ClassSplit {
    seen: BTreeSet<ClassId>,
    unseen: BTreeSet<ClassId>,
}

#[derive(Serialize, Deserialize)]
struct RawSplit {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
}

impl TryFrom<RawSplit> for ClassSplit {
    type Error = Error;

    fn try_from(raw: RawSplit) -> Result<Self> {
        let seen: BTreeSet<_> = raw.seen.iter().copied().collect();
        let unseen: BTreeSet<_> = raw.unseen.iter().copied().collect();
        ensure_arg!(seen.len() == raw.seen.len(), "duplicate id in seen list");
        ensure_arg!(unseen.len() == raw.unseen.len(), "duplicate id in unseen list");
        Self::partial(seen, unseen)
    }
}

impl From<ClassSplit> for RawSplit {
    fn from(s: ClassSplit) -> Self {
        RawSplit {
            seen: s.seen.into_iter().collect(),
            unseen: s.unseen.into_iter().collect(),
        }
    }
}

impl ClassSplit {
    /// Builds a split and checks that it covers exactly `all`.
    pub fn new(seen: BTreeSet<ClassId>, unseen: BTreeSet<ClassId>, all: &BTreeSet<ClassId>) -> Result<Self> {
        let split = Self::partial(seen, unseen)?;
        split.check_covers(all)?;
        Ok(split)
    }

    fn partial(seen: BTreeSet<ClassId>, unseen: BTreeSet<ClassId>) -> Result<Self> {
        ensure_arg!(seen.len() >= 2, "a split needs at least two seen classes");
        ensure_arg!(!unseen.is_empty(), "a split needs at least one unseen class");
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Argument(format!("class {c} is both seen and unseen")));
        }
        Ok(Self { seen, unseen })
    }

    pub fn check_covers(&self, all: &BTreeSet<ClassId>) -> Result<()> {
        let union: BTreeSet<_> = self.seen.union(&self.unseen).copied().collect();
        ensure_arg!(
            &union == all,
            "split covers {:?} but the dataset has classes {:?}",
            union,
            all
        );
        Ok(())
    }

    pub fn seen(&self) -> &BTreeSet<ClassId> {
        &self.seen
    }

    pub fn unseen(&self) -> &BTreeSet<ClassId> {
        &self.unseen
    }

    pub fn seen_vec(&self) -> Vec<ClassId> {
        self.seen.iter().copied().collect()
    }

    pub fn unseen_vec(&self) -> Vec<ClassId> {
        self.unseen.iter().copied().collect()
    }
}

/// Either a single split object or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum SplitFile {
    One(ClassSplit),
    Many(Vec<ClassSplit>),
}

pub fn load_splits(path: &Path) -> Result<Vec<ClassSplit>> {
    match io::read_json::<SplitFile>(path)? {
        SplitFile::One(s) => Ok(vec![s]),
        SplitFile::Many(v) if !v.is_empty() => Ok(v),
        SplitFile::Many(_) => Err(Error::load(path, "no splits in file")),
    }
}

/// Shuffles the ids with `rng_seed` and cuts them into `k` contiguous
/// unseen groups whose sizes differ by at most one.
pub fn make_folds(class_ids: &[ClassId], k: usize, rng_seed: u64) -> Result<Vec<ClassSplit>> {
    ensure_arg!(k >= 2, "need at least two folds, got {k}");
    let all: BTreeSet<ClassId> = class_ids.iter().copied().collect();
    ensure_arg!(all.len() == class_ids.len(), "duplicate class ids");
    ensure_arg!(
        k <= class_ids.len(),
        "cannot make {k} folds from {} classes",
        class_ids.len()
    );
    let mut order: Vec<ClassId> = all.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let n = order.len();
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let unseen: BTreeSet<_> = order[start..start + size].iter().copied().collect();
        start += size;
        let seen: BTreeSet<_> = all.difference(&unseen).copied().collect();
        folds.push(ClassSplit::new(seen, unseen, &all)?);
    }
    Ok(folds)
}
