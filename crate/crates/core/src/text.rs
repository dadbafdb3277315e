//! Tokenization, tf-idf, clustered LSI reduction, word embeddings and
//! bags of (word, frequency, embedding) triplets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, TextCorpus};
use crate::error::{ensure_arg, Error, Result};
use crate::io;

pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "may", "me", "might", "more", "most", "must", "my", "myself", "no", "nor",
    "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
    "yours", "yourself", "yourselves",
];

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

/// Lowercases, splits on anything that is not alphanumeric, and drops stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stop_word(t))
        .collect()
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Fitted vocabulary (alphabetical) and inverse document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
}

impl TfIdfModel {
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            let tokens = tokenize(doc);
            if tokens.is_empty() {
                return Err(Error::Featurization(format!(
                    "document {} is empty after tokenization",
                    n_docs + 1
                )));
            }
            for term in term_counts(&tokens).into_keys() {
                *df.entry(term.to_string()).or_insert(0) += 1;
            }
            n_docs += 1;
        }
        ensure_arg!(n_docs > 0, "cannot fit tf-idf on an empty corpus");
        let (terms, idf) = df
            .into_iter()
            .map(|(t, d)| (t, (n_docs as f64 / d as f64).ln()))
            .unzip();
        Ok(Self { terms, idf })
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// Dense tf-idf vector; words outside the vocabulary are ignored but
    /// still count towards the document length.
    pub fn transform(&self, doc: &str) -> Result<DVector<f64>> {
        let tokens = tokenize(doc);
        if tokens.is_empty() {
            return Err(Error::Featurization("document is empty after tokenization".into()));
        }
        let len = tokens.len() as f64;
        let mut v = DVector::zeros(self.terms.len());
        for (term, count) in term_counts(&tokens) {
            if let Some(i) = self.term_index(term) {
                v[i] = count as f64 / len * self.idf[i];
            }
        }
        Ok(v)
    }
}

/// tf-idf vector of every class document, with idf fitted on the whole corpus.
pub fn tfidf(corpus: &TextCorpus) -> Result<(TfIdfModel, BTreeMap<ClassId, DVector<f64>>)> {
    let model = TfIdfModel::fit(corpus.documents().values().map(String::as_str)).map_err(|e| match e {
        Error::Featurization(_) => empty_doc_error(corpus),
        other => other,
    })?;
    let mut out = BTreeMap::new();
    for (&id, doc) in corpus.documents() {
        out.insert(id, model.transform(doc)?);
    }
    Ok((model, out))
}

fn empty_doc_error(corpus: &TextCorpus) -> Error {
    let id = corpus
        .documents()
        .iter()
        .find(|(_, d)| tokenize(d).is_empty())
        .map(|(&id, _)| id)
        .unwrap_or(0);
    Error::Featurization(format!("document for class {id} is empty after tokenization"))
}

/// Linear projection learned by clustered LSI.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    /// Columns are basis directions in term space (vocab × target_dim).
    basis: DMatrix<f64>,
    /// Orthonormal basis of the same span, used for reconstruction.
    span: DMatrix<f64>,
    cluster_dims: Vec<usize>,
}

impl Reducer {
    pub fn from_basis(basis: DMatrix<f64>) -> Self {
        let span = orthonormal_span(&basis);
        let dims = vec![basis.ncols()];
        Self {
            basis,
            span,
            cluster_dims: dims,
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn cluster_dims(&self) -> &[usize] {
        &self.cluster_dims
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_arg!(
            x.len() == self.input_dim(),
            "reducer expects {} terms, got {}",
            self.input_dim(),
            x.len()
        );
        Ok(self.basis.tr_mul(x))
    }

    /// Orthogonal projection of `x` onto the span of the basis.
    pub fn reconstruct(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_arg!(x.len() == self.input_dim(), "dimension mismatch in reconstruct");
        Ok(&self.span * self.span.tr_mul(x))
    }
}

fn orthonormal_span(b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return b.clone();
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > 1e-12 * scale)
        .collect();
    q.select_columns(&keep)
}

/// Spherical k-means with farthest-point initialisation. Returns the
/// cluster index of each row.
pub fn spherical_kmeans(rows: &DMatrix<f64>, k: usize, max_iter: usize) -> Vec<usize> {
    let n = rows.nrows();
    let unit: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let r = rows.row(i).transpose();
            let norm = r.norm();
            if norm > 0.0 {
                r / norm
            } else {
                r
            }
        })
        .collect();
    let k = k.min(n).max(1);
    let mut centers = vec![unit[0].clone()];
    while centers.len() < k {
        let far = (0..n)
            .map(|i| {
                let best = centers.iter().map(|c| c.dot(&unit[i])).fold(f64::NEG_INFINITY, f64::max);
                (i, best)
            })
            .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
        centers.push(unit[far.0].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let s = center.dot(&unit[i]);
                if s > best.1 {
                    best = (c, s);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let mut sum = DVector::zeros(rows.ncols());
            let mut members = 0;
            for i in (0..n).filter(|&i| assign[i] == c) {
                sum += &unit[i];
                members += 1;
            }
            let norm = sum.norm();
            if members > 0 && norm > 0.0 {
                *center = sum / norm;
            }
        }
    }
    assign
}

/// Splits `total` over clusters in proportion to their sizes (largest
/// remainder), never giving a cluster more than its capacity.
pub fn allocate_dims(sizes: &[usize], capacity: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut dims = vec![0usize; sizes.len()];
    if n == 0 {
        return dims;
    }
    let mut remainders = Vec::with_capacity(sizes.len());
    for (c, &s) in sizes.iter().enumerate() {
        let exact = total as f64 * s as f64 / n as f64;
        dims[c] = (exact.floor() as usize).min(capacity[c]);
        remainders.push((exact - exact.floor(), c));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = dims.iter().sum();
    while assigned < total {
        let before = assigned;
        for &(_, c) in &remainders {
            if assigned < total && dims[c] < capacity[c] {
                dims[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    dims
}

/// Fits clustered LSI on the rows of `docs` (documents × terms).
pub fn fit_reducer(docs: &DMatrix<f64>, target_dim: usize, n_clusters: usize) -> Result<Reducer> {
    let (n_docs, vocab) = docs.shape();
    ensure_arg!(n_clusters >= 1, "need at least one cluster");
    ensure_arg!(target_dim >= 1, "target dimension must be positive");
    ensure_arg!(
        target_dim <= n_docs.min(vocab),
        "target dimension {target_dim} exceeds min(vocabulary {vocab}, documents {n_docs})"
    );
    let assign = spherical_kmeans(docs, n_clusters, 100);
    let k = assign.iter().copied().max().unwrap_or(0) + 1;
    let members: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..n_docs).filter(|&i| assign[i] == c).collect())
        .collect();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let capacity: Vec<usize> = sizes.iter().map(|&s| s.min(vocab)).collect();
    let dims = allocate_dims(&sizes, &capacity, target_dim);

    let mut columns = Vec::with_capacity(target_dim);
    for (rows, &d) in members.iter().zip(&dims) {
        if d == 0 {
            continue;
        }
        for v in top_right_singular_vectors(&docs.select_rows(rows), d) {
            columns.push(v);
        }
    }
    let basis = DMatrix::from_columns(&columns);
    let span = orthonormal_span(&basis);
    Ok(Reducer {
        basis,
        span,
        cluster_dims: dims,
    })
}

/// Leading right singular vectors, sign-fixed so the largest-magnitude
/// component is positive.
fn top_right_singular_vectors(m: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(count)
        .map(|i| {
            let mut v = vt.row(i).transpose();
            let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if pivot < 0.0 {
                v.neg_mut();
            }
            v
        })
        .collect()
}

/// Per-class text vectors plus everything needed to featurize new documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub vectors: BTreeMap<ClassId, DVector<f64>>,
    pub model: TfIdfModel,
    pub reducer: Option<Reducer>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    class_ids: Vec<ClassId>,
    terms: Vec<String>,
    idf: Vec<f64>,
    reduced: bool,
}

impl TextFeatures {
    /// tf-idf over the whole corpus; when `target_dim` is given the reducer
    /// is fitted on the `fit_on` classes only and applied to every class.
    pub fn build(
        corpus: &TextCorpus,
        fit_on: &BTreeSet<ClassId>,
        target_dim: Option<usize>,
        n_clusters: usize,
    ) -> Result<Self> {
        let (model, raw) = tfidf(corpus)?;
        let Some(dim) = target_dim else {
            return Ok(Self {
                vectors: raw,
                model,
                reducer: None,
            });
        };
        let rows: Vec<DVector<f64>> = fit_on
            .iter()
            .map(|id| {
                raw.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Argument(format!("class {id} has no document")))
            })
            .collect::<Result<_>>()?;
        ensure_arg!(!rows.is_empty(), "no documents to fit the reducer on");
        let docs = DMatrix::from_fn(rows.len(), model.vocab_size(), |i, j| rows[i][j]);
        let reducer = fit_reducer(&docs, dim, n_clusters)?;
        let vectors = raw
            .iter()
            .map(|(&id, v)| Ok((id, reducer.project(v)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vectors,
            model,
            reducer: Some(reducer),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.values().next().map_or(0, |v| v.len())
    }

    pub fn get(&self, id: ClassId) -> Result<&DVector<f64>> {
        self.vectors
            .get(&id)
            .ok_or_else(|| Error::Argument(format!("no text features for class {id}")))
    }

    /// Rows are the vectors of `ids`, in order.
    pub fn matrix(&self, ids: &[ClassId]) -> Result<DMatrix<f64>> {
        let rows = ids
            .iter()
            .map(|&id| self.get(id).map(|v| v.transpose()))
            .collect::<Result<Vec<_>>>()?;
        ensure_arg!(!rows.is_empty(), "no classes requested");
        Ok(DMatrix::from_rows(&rows))
    }

    pub fn featurize(&self, doc: &str) -> Result<DVector<f64>> {
        let raw = self.model.transform(doc)?;
        match &self.reducer {
            Some(r) => r.project(&raw),
            None => Ok(raw),
        }
    }

    /// Writes `text.cfmx`, `vocabulary.json` and, when reduced, `reducer.cfmx`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let ids: Vec<ClassId> = self.vectors.keys().copied().collect();
        io::write_matrix(&dir.join("text.cfmx"), &self.matrix(&ids)?)?;
        io::write_json(
            &dir.join("vocabulary.json"),
            &VocabularyFile {
                class_ids: ids,
                terms: self.model.terms.clone(),
                idf: self.model.idf.clone(),
                reduced: self.reducer.is_some(),
            },
        )?;
        if let Some(r) = &self.reducer {
            io::write_matrix(&dir.join("reducer.cfmx"), r.basis())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab: VocabularyFile = io::read_json(&dir.join("vocabulary.json"))?;
        let text_path = dir.join("text.cfmx");
        let m = io::read_matrix(&text_path)?;
        if m.nrows() != vocab.class_ids.len() {
            return Err(Error::load(text_path, "row count does not match the class list"));
        }
        let vectors = vocab
            .class_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, m.row(i).transpose()))
            .collect();
        let reducer = if vocab.reduced {
            Some(Reducer::from_basis(io::read_matrix(&dir.join("reducer.cfmx"))?))
        } else {
            None
        };
        Ok(Self {
            vectors,
            model: TfIdfModel {
                terms: vocab.terms,
                idf: vocab.idf,
            },
            reducer,
        })
    }
}

/// Unit-norm word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<DVector<f64>>,
}

impl EmbeddingTable {
    /// Normalizes and stores the given vectors; later duplicates replace
    /// earlier ones.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut table = Self {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        for (word, values) in pairs {
            ensure_arg!(values.len() == dim, "vector for {word:?} has {} entries, expected {dim}", values.len());
            let v = DVector::from_vec(values);
            let norm = v.norm();
            ensure_arg!(norm > 0.0 && norm.is_finite(), "vector for {word:?} cannot be normalized");
            table.insert(word, v / norm);
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, v: DVector<f64>) -> bool {
        if let Some(&i) = self.index.get(&word) {
            self.vectors[i] = v;
            true
        } else {
            self.index.insert(word, self.vectors.len());
            self.vectors.push(v);
            false
        }
    }

    /// Parses the word2vec text format: a `V K` header, then one word and
    /// `K` floats per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header_line = text.lines().position(|l| !l.trim().is_empty()).unwrap_or(0) + 1;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || Error::Parse {
            line: header_line,
            message: format!("header must be `V K`, got {header:?}"),
        };
        if parts.len() != 2 {
            return Err(bad_header());
        }
        let declared: usize = parts[0].parse().map_err(|_| bad_header())?;
        let dim: usize = parts[1].parse().map_err(|_| bad_header())?;
        if dim == 0 {
            return Err(bad_header());
        }
        let mut table = Self {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        let mut rows = 0;
        for (i, line) in lines {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default().to_string();
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("cannot parse {f:?} as a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", values.len()),
                });
            }
            let v = DVector::from_vec(values);
            let norm = v.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("vector for {word:?} cannot be normalized"),
                });
            }
            if table.insert(word.clone(), v / norm) {
                log::warn!("duplicate embedding for {word:?} at line {line_no}; keeping the later one");
            }
            rows += 1;
        }
        if rows != declared {
            return Err(Error::Parse {
                line: header_line,
                message: format!("header declares {declared} words but {rows} follow"),
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_text(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&DVector<f64>> {
        self.index.get(word).map(|&i| &self.vectors[i])
    }
}

/// Distinct in-vocabulary words of a document with their counts and
/// embeddings, sorted by word.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfTriplets {
    pub words: Vec<String>,
    /// `F`, one count per word.
    pub frequencies: DVector<f64>,
    /// `P`, one unit embedding per row.
    pub embeddings: DMatrix<f64>,
}

impl BagOfTriplets {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `Pᵀ F`, the frequency-weighted sum of embeddings.
    pub fn aggregate(&self) -> DVector<f64> {
        self.embeddings.tr_mul(&self.frequencies)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            frequencies: &self.frequencies * factor,
            ..self.clone()
        }
    }
}

pub fn bag_of_triplets(doc: &str, table: &EmbeddingTable) -> Result<BagOfTriplets> {
    let tokens = tokenize(doc);
    let counts: BTreeMap<&str, usize> = term_counts(&tokens)
        .into_iter()
        .filter(|(w, _)| table.get(w).is_some())
        .collect();
    if counts.is_empty() {
        return Err(Error::Featurization(
            "no in-vocabulary words remain after stop-word removal".into(),
        ));
    }
    let words: Vec<String> = counts.keys().map(|w| w.to_string()).collect();
    let frequencies = DVector::from_iterator(counts.len(), counts.values().map(|&c| c as f64));
    let rows: Vec<_> = words.iter().map(|w| table.get(w).unwrap().transpose()).collect();
    Ok(BagOfTriplets {
        words,
        frequencies,
        embeddings: DMatrix::from_rows(&rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn corpus(docs: &[&str]) -> TextCorpus {
        TextCorpus::new(
            docs.iter()
                .enumerate()
                .map(|(i, d)| (i as ClassId + 1, d.to_string()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stop_words_sorted_for_lookup() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("The Red-bird, RED!  bird's"), vec!["red", "bird", "red", "bird", "s"]);
    }

    #[test]
    fn tfidf_hand_computed() {
        let (model, v) = tfidf(&corpus(&["red bird red", "blue flower"])).unwrap();
        let red = model.term_index("red").unwrap();
        let expected = 2.0 / 3.0 * 2f64.ln();
        assert_relative_eq!(v[&1][red], expected, epsilon = 1e-15);
        assert!((v[&1][red] - 0.4621).abs() < 1e-4);
        assert_eq!(v[&2][red], 0.0);
        assert_eq!(model.terms, vec!["bird", "blue", "flower", "red"]);
    }

    #[test]
    fn shared_terms_get_zero_weight() {
        let (model, v) = tfidf(&corpus(&["bird red", "bird blue"])).unwrap();
        let bird = model.term_index("bird").unwrap();
        assert_eq!(v[&1][bird], 0.0);
        assert_eq!(v[&2][bird], 0.0);
    }

    #[test]
    fn single_cluster_reducer_is_lsi() {
        let docs = DMatrix::from_fn(6, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 + (i == j) as u8 as f64);
        let r = fit_reducer(&docs, 3, 1).unwrap();
        assert_eq!(r.output_dim(), 3);
        let gram = r.basis().tr_mul(r.basis());
        assert_relative_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn infeasible_target_dim() {
        let docs = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(fit_reducer(&docs, 3, 1), Err(Error::Argument(_))));
        assert!(fit_reducer(&docs, 0, 1).is_err());
    }

    #[test]
    fn allocation_is_proportional_and_capped() {
        assert_eq!(allocate_dims(&[4, 2], &[4, 2], 3), vec![2, 1]);
        assert_eq!(allocate_dims(&[5, 1], &[5, 1], 6), vec![5, 1]);
        assert_eq!(allocate_dims(&[3, 3], &[1, 3], 4), vec![1, 3]);
    }

    #[test]
    fn kmeans_separates_disjoint_topics() {
        let docs = DMatrix::from_row_slice(
            4,
            4,
            &[1., 1., 0., 0., 2., 1., 0., 0., 0., 0., 1., 3., 0., 0., 1., 1.],
        );
        let a = spherical_kmeans(&docs, 2, 50);
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
    }

    #[test]
    fn embeddings_normalized() {
        let t = EmbeddingTable::parse("2 3\ncat 1 0 0\ndog 0 2 0\n").unwrap();
        assert_eq!(t.get("dog").unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(t.dim(), 3);
    }

    #[test]
    fn short_embedding_row_reports_line() {
        match EmbeddingTable::parse("2 3\ncat 1 0 0\ndog 0 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(EmbeddingTable::parse("3 3\ncat 1 0 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(EmbeddingTable::parse("1 2\nzero 0 0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_embedding_last_wins() {
        let t = EmbeddingTable::parse("2 2\ncat 1 0\ncat 0 3\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("cat").unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn triplets_count_and_filter() {
        let t = EmbeddingTable::parse("2 2\ncat 1 0\ndog 0 1\n").unwrap();
        let b = bag_of_triplets("the cat the cat dog xyzzy", &t).unwrap();
        assert_eq!(b.words, vec!["cat", "dog"]);
        assert_eq!(b.frequencies.as_slice(), &[2.0, 1.0]);
        assert!(matches!(bag_of_triplets("the of and", &t), Err(Error::Featurization(_))));
    }

    #[test]
    fn features_roundtrip_and_featurize() {
        let c = corpus(&["red bird wing", "blue flower petal", "green leaf stem", "red petal leaf"]);
        let fit_on = BTreeSet::from([1, 2, 3]);
        let f = TextFeatures::build(&c, &fit_on, Some(2), 1).unwrap();
        assert_eq!(f.dim(), 2);
        let dir = tempfile::tempdir().unwrap();
        f.save(dir.path()).unwrap();
        let back = TextFeatures::load(dir.path()).unwrap();
        assert_eq!(back.vectors, f.vectors);
        let direct = f.featurize("red petal leaf").unwrap();
        assert_relative_eq!(direct, f.vectors[&4].clone(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn tfidf_ignores_token_order(perm in Just(vec!["red", "bird", "red", "wing", "tail"]).prop_shuffle()) {
            let base = tfidf(&corpus(&["red bird red wing tail", "blue wing"])).unwrap().1;
            let shuffled = tfidf(&corpus(&[&perm.join(" "), "blue wing"])).unwrap().1;
            prop_assert_eq!(&base[&1], &shuffled[&1]);
        }

        #[test]
        fn reducer_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let docs = DMatrix::from_fn(6, 8, |i, j| (((i * 31 + j * 17) as u64 + seed) % 7) as f64);
            let r = fit_reducer(&docs, 3, 2).unwrap();
            let x = DVector::from_fn(8, |i, _| (i as f64 * 0.3 + seed as f64).sin());
            let y = DVector::from_fn(8, |i, _| (i as f64 * 1.7 - seed as f64).cos());
            let lhs = r.project(&(&x * a + &y * b)).unwrap();
            let rhs = r.project(&x).unwrap() * a + r.project(&y).unwrap() * b;
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }
    }
}
