//! Character n-gram TF-IDF and balanced class weights.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfIdfConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub min_df: usize,
    /// Always false for now; stored so the on-disk format can carry it.
    pub sublinear_tf: bool,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        TfIdfConfig {
            ngram_min: 3,
            ngram_max: 5,
            min_df: 2,
            sublinear_tf: false,
        }
    }
}

impl TfIdfConfig {
    fn validate(&self) -> Result<()> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(Error::validation(format!(
                "invalid n-gram range ({}, {})",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

/// Sparse row with strictly increasing column indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::validation("sparse vector: index/value length mismatch"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("sparse vector: indices must be strictly increasing"));
        }
        Ok(SparseVector { indices, values })
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest index + 1 (0 for the empty vector).
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// Character n-grams of `text` for every length in `min..=max`, sliding over
/// the whole string (spaces included).
pub fn char_ngrams(text: &str, min: usize, max: usize) -> impl Iterator<Item = &str> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    (min..=max).flat_map(move |n| {
        let bounds = bounds.clone();
        (0..(n_chars + 1).saturating_sub(n)).map(move |start| &text[bounds[start]..bounds[start + n]])
    })
}

#[derive(Serialize, Deserialize)]
struct TfIdfRepr {
    config: TfIdfConfig,
    n_documents: usize,
    terms: Vec<String>,
    idf: Vec<f64>,
}

/// Fitted TF-IDF vocabulary. Column indices follow the lexicographic order
/// of the n-gram strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfIdfRepr", into = "TfIdfRepr")]
pub struct TfIdfModel {
    config: TfIdfConfig,
    n_documents: usize,
    terms: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl From<TfIdfRepr> for TfIdfModel {
    fn from(r: TfIdfRepr) -> Self {
        let index = r.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TfIdfModel {
            config: r.config,
            n_documents: r.n_documents,
            terms: r.terms,
            idf: r.idf,
            index,
        }
    }
}

impl From<TfIdfModel> for TfIdfRepr {
    fn from(m: TfIdfModel) -> Self {
        TfIdfRepr {
            config: m.config,
            n_documents: m.n_documents,
            terms: m.terms,
            idf: m.idf,
        }
    }
}

impl TfIdfModel {
    pub fn config(&self) -> &TfIdfConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Raw tf times idf, L2-normalized. Unknown n-grams are ignored.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for g in char_ngrams(text, self.config.ngram_min, self.config.ngram_max) {
            if let Some(&col) = self.index.get(g) {
                *counts.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts.into_iter().map(|(c, tf)| (c, tf * self.idf[c])).collect();
        entries.sort_unstable_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        let (indices, values) = entries.into_iter().unzip();
        SparseVector { indices, values }
    }

    pub fn transform_many<S: AsRef<str> + Sync>(&self, texts: &[S], exec: Execution) -> Vec<SparseVector> {
        exec.map(texts, |t| self.transform(t.as_ref()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Fit a vocabulary and smoothed idf `ln((1 + N) / (1 + df)) + 1`, keeping
/// n-grams whose document frequency is at least `min_df`.
pub fn fit_tfidf<S: AsRef<str> + Sync>(corpus: &[S], config: TfIdfConfig) -> Result<TfIdfModel> {
    fit_tfidf_with(corpus, config, Execution::default())
}

pub fn fit_tfidf_with<S: AsRef<str> + Sync>(corpus: &[S], config: TfIdfConfig, exec: Execution) -> Result<TfIdfModel> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot fit TF-IDF on an empty corpus"));
    }
    config.validate()?;
    let per_doc: Vec<HashSet<&str>> = exec.map_range(corpus.len(), |i| {
        char_ngrams(corpus[i].as_ref(), config.ngram_min, config.ngram_max).collect()
    });
    let mut df: HashMap<&str, usize> = HashMap::new();
    for set in &per_doc {
        for &g in set {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, d)| d >= config.min_df.max(1)).collect();
    kept.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let n = corpus.len() as f64;
    let terms: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let idf: Vec<f64> = kept
        .iter()
        .map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfIdfModel::from(TfIdfRepr {
        config,
        n_documents: corpus.len(),
        terms,
        idf,
    }))
}

/// Per-class loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, label: KcLabel) -> f64 {
        self.0[label.index()]
    }

    /// `n_total / (K * n_c)` from raw class counts.
    pub fn balanced(counts: [usize; NUM_CLASSES]) -> Result<Self> {
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::validation(format!(
                "class {} has no examples; balanced weights undefined",
                KcLabel::ALL[k]
            )));
        }
        let total: usize = counts.iter().sum();
        let mut w = [0.0; NUM_CLASSES];
        for (wk, &c) in w.iter_mut().zip(&counts) {
            *wk = total as f64 / (NUM_CLASSES as f64 * c as f64);
        }
        Ok(ClassWeights(w))
    }

    pub fn balanced_from_labels(labels: &[KcLabel]) -> Result<Self> {
        let mut counts = [0; NUM_CLASSES];
        for l in labels {
            counts[l.index()] += 1;
        }
        Self::balanced(counts)
    }
}

pub fn balanced_class_weights(data: &Dataset) -> Result<ClassWeights> {
    ClassWeights::balanced(data.class_counts())
}
