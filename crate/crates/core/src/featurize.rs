//! Text featurization: word n-gram counts, TF-IDF, and precomputed embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{QaPair, UnitKey};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturizerKind {
    Counts,
    Tfidf,
    EmbeddingFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    L1,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub kind: FeaturizerKind,
    #[serde(default)]
    pub include_question: bool,
    #[serde(default = "default_ngram")]
    pub ngram_range: (usize, usize),
    #[serde(default = "default_max_features")]
    pub max_features: usize,
    #[serde(default)]
    pub binary: bool,
    #[serde(default = "yes")]
    pub use_idf: bool,
    #[serde(default = "default_norm")]
    pub norm: Norm,
    #[serde(default = "yes")]
    pub smooth_idf: bool,
    #[serde(default)]
    pub sublinear_tf: bool,
    #[serde(default = "one")]
    pub min_df: usize,
    #[serde(default = "full")]
    pub max_df: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

fn default_ngram() -> (usize, usize) {
    (1, 1)
}
fn default_max_features() -> usize {
    10_000
}
fn default_norm() -> Norm {
    Norm::L2
}
fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn full() -> f64 {
    1.0
}

impl FeaturizerConfig {
    pub fn tfidf(ngram_range: (usize, usize), max_features: usize) -> Self {
        Self {
            kind: FeaturizerKind::Tfidf,
            include_question: false,
            ngram_range,
            max_features,
            binary: false,
            use_idf: true,
            norm: Norm::L2,
            smooth_idf: true,
            sublinear_tf: false,
            min_df: 1,
            max_df: 1.0,
            embedding_path: None,
            embedding_dim: None,
        }
    }

    pub fn counts(ngram_range: (usize, usize), max_features: usize, binary: bool) -> Self {
        Self {
            kind: FeaturizerKind::Counts,
            binary,
            norm: Norm::None,
            ..Self::tfidf(ngram_range, max_features)
        }
    }

    pub fn embedding(path: impl Into<String>, dim: usize) -> Self {
        Self {
            kind: FeaturizerKind::EmbeddingFile,
            embedding_path: Some(path.into()),
            embedding_dim: Some(dim),
            norm: Norm::None,
            ..Self::tfidf((1, 1), 1)
        }
    }

    pub fn with_question(mut self, include: bool) -> Self {
        self.include_question = include;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ngram_range;
        match self.kind {
            FeaturizerKind::EmbeddingFile => {
                if self.embedding_dim.unwrap_or(0) == 0 {
                    return Err(Error::Config("embedding featurizer needs embedding_dim > 0".into()));
                }
            }
            _ => {
                if lo < 1 || lo > hi {
                    return Err(Error::Config(format!("invalid ngram_range ({lo}, {hi})")));
                }
                if self.max_features == 0 {
                    return Err(Error::Config("max_features must be positive".into()));
                }
                if !(self.max_df > 0.0 && self.max_df <= 1.0) {
                    return Err(Error::Config(format!("max_df {} outside (0, 1]", self.max_df)));
                }
            }
        }
        Ok(())
    }

    /// Short human-readable description used in reports.
    pub fn label(&self) -> String {
        let q = if self.include_question { "+q" } else { "" };
        match self.kind {
            FeaturizerKind::Counts => format!(
                "counts{}({},{})/{}{q}",
                if self.binary { "-bin" } else { "" },
                self.ngram_range.0,
                self.ngram_range.1,
                self.max_features
            ),
            FeaturizerKind::Tfidf => format!(
                "tfidf({},{})/{}{q}",
                self.ngram_range.0, self.ngram_range.1, self.max_features
            ),
            FeaturizerKind::EmbeddingFile => {
                format!("embedding{}{q}", self.embedding_dim.unwrap_or(0))
            }
        }
    }
}

/// Sparse feature vector with sorted, unique indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    indices: Vec<u32>,
    values: Vec<T>,
    dim: usize,
}

impl<T: Real> FeatureVector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    pub fn from_dense(values: &[T]) -> Self {
        let mut v = Self::zeros(values.len());
        for (i, &x) in values.iter().enumerate() {
            if x != T::zero() {
                v.indices.push(i as u32);
                v.values.push(x);
            }
        }
        v
    }

    /// Builds from `(index, value)` pairs; duplicates are summed.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, T)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut v = Self::zeros(dim);
        for (i, x) in pairs {
            assert!((i as usize) < dim, "index {i} out of range for dimension {dim}");
            if v.indices.last() == Some(&i) {
                *v.values.last_mut().unwrap() += x;
            } else {
                v.indices.push(i);
                v.values.push(x);
            }
        }
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, j: usize) -> T {
        match self.indices.binary_search(&(j as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => T::zero(),
        }
    }

    pub fn dot(&self, dense: &[T]) -> T {
        self.iter().map(|(i, x)| x * dense[i]).sum()
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (i, x) in self.iter() {
            out[i] = x;
        }
        out
    }

    pub fn norm_l2(&self) -> T {
        self.values.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn sq_norm(&self) -> T {
        self.values.iter().map(|&x| x * x).sum()
    }

    /// Squared Euclidean distance to another sparse vector.
    pub fn sq_dist(&self, other: &Self) -> T {
        let (mut a, mut b) = (0, 0);
        let mut acc = T::zero();
        while a < self.indices.len() || b < other.indices.len() {
            let ia = self.indices.get(a).copied().unwrap_or(u32::MAX);
            let ib = other.indices.get(b).copied().unwrap_or(u32::MAX);
            let d = if ia == ib {
                let d = self.values[a] - other.values[b];
                a += 1;
                b += 1;
                d
            } else if ia < ib {
                a += 1;
                self.values[a - 1]
            } else {
                b += 1;
                other.values[b - 1]
            };
            acc += d * d;
        }
        acc
    }

    fn scale(&mut self, s: T) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

/// Answer alone, or question and answer joined by one space.
pub fn compose_unit_text(qa: &QaPair, include_question: bool) -> String {
    if include_question {
        format!("{} {}", qa.question, qa.answer)
    } else {
        qa.answer.clone()
    }
}

/// Lowercased maximal alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut len = 0usize;
    let mut flush = |cur: &mut String, len: &mut usize| {
        if *len >= 2 {
            out.push(cur.to_lowercase());
        }
        cur.clear();
        *len = 0;
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
            len += 1;
        } else {
            flush(&mut cur, &mut len);
        }
    }
    flush(&mut cur, &mut len);
    out
}

/// Word n-grams with `lo <= n <= hi`, tokens joined by a single space.
pub fn ngrams(tokens: &[String], (lo, hi): (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in lo..=hi {
        if n == 0 || n > tokens.len() {
            continue;
        }
        for w in tokens.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

/// Dense vectors keyed by unit, loaded from a CSV file.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable<T> {
    pub dim: usize,
    vectors: HashMap<UnitKey, Vec<T>>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: UnitKey, v: Vec<T>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.vectors.insert(key, v);
        Ok(())
    }

    pub fn get(&self, key: &UnitKey) -> Result<&[T]> {
        self.vectors
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding {
                interview_id: key.interview_id.clone(),
                qa_index: key.qa_index,
            })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn load_precomputed_embeddings<T: Real>(path: &Path, dim: usize) -> Result<EmbeddingTable<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(f, dim)
}

/// Rows are `interview_id,qa_index,v_1..v_dim`; an optional header row is skipped.
pub fn read_embeddings<T: Real>(reader: impl Read, dim: usize) -> Result<EmbeddingTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = EmbeddingTable::new(dim);
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 1;
        let qa_field = row.get(1).unwrap_or("");
        let Ok(qa_index) = qa_field.parse::<usize>() else {
            if i == 0 {
                continue;
            }
            return Err(Error::InvalidValue {
                line,
                column: "qa_index".into(),
                message: format!("`{qa_field}` is not an index"),
            });
        };
        let values = row
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>().map(T::of).map_err(|_| Error::InvalidValue {
                    line,
                    column: "embedding".into(),
                    message: format!("`{s}` is not numeric"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        table.insert(UnitKey::new(row.get(0).unwrap_or(""), qa_index), values)?;
    }
    Ok(table)
}

/// A featurizer after fitting: vocabulary and idf weights, or an embedding table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct FittedFeaturizer<T> {
    pub config: FeaturizerConfig,
    pub vocabulary: BTreeMap<String, u32>,
    pub idf_weights: Option<Vec<T>>,
    pub dimension: usize,
    #[serde(skip)]
    embeddings: Option<Arc<EmbeddingTable<T>>>,
}

impl<T: PartialEq> PartialEq for FittedFeaturizer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocabulary == other.vocabulary
            && self.idf_weights == other.idf_weights
            && self.dimension == other.dimension
    }
}

pub fn fit_featurizer<T: Real>(docs: &[String], config: &FeaturizerConfig) -> Result<FittedFeaturizer<T>> {
    config.validate()?;
    if config.kind == FeaturizerKind::EmbeddingFile {
        return Err(Error::Config(
            "embedding featurizers are built with fit_embedding_featurizer".into(),
        ));
    }
    if docs.is_empty() {
        return Err(Error::Config("cannot fit a featurizer on zero documents".into()));
    }
    let n = docs.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut tf: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        let grams = ngrams(&tokenize(doc), config.ngram_range);
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for g in &grams {
            *tf.entry(g.clone()).or_default() += 1;
            if seen.insert(g.as_str(), ()).is_none() {
                *df.entry(g.clone()).or_default() += 1;
            }
        }
    }
    let max_doc_count = config.max_df * n as f64;
    let mut kept: Vec<(String, usize)> = tf
        .into_iter()
        .filter(|(term, _)| {
            let d = df[term];
            d >= config.min_df && (d as f64) <= max_doc_count + 1e-12
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(config.max_features);
    let mut terms: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
    terms.sort();
    let vocabulary: BTreeMap<String, u32> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let idf_weights = (config.kind == FeaturizerKind::Tfidf && config.use_idf).then(|| {
        let nf = n as f64;
        terms
            .iter()
            .map(|t| {
                let d = df[t] as f64;
                let v = if config.smooth_idf {
                    ((1.0 + nf) / (1.0 + d)).ln() + 1.0
                } else {
                    (nf / d).ln() + 1.0
                };
                T::of(v)
            })
            .collect()
    });

    Ok(FittedFeaturizer {
        config: config.clone(),
        dimension: vocabulary.len(),
        vocabulary,
        idf_weights,
        embeddings: None,
    })
}

pub fn fit_embedding_featurizer<T: Real>(
    config: &FeaturizerConfig,
    table: Arc<EmbeddingTable<T>>,
) -> Result<FittedFeaturizer<T>> {
    config.validate()?;
    let dim = config.embedding_dim.unwrap_or(table.dim);
    if dim != table.dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: table.dim,
        });
    }
    Ok(FittedFeaturizer {
        config: config.clone(),
        vocabulary: BTreeMap::new(),
        idf_weights: None,
        dimension: dim,
        embeddings: Some(table),
    })
}

impl<T: Real> FittedFeaturizer<T> {
    pub fn attach_embeddings(&mut self, table: Arc<EmbeddingTable<T>>) -> Result<()> {
        if table.dim != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: table.dim,
            });
        }
        self.embeddings = Some(table);
        Ok(())
    }

    pub fn needs_embeddings(&self) -> bool {
        self.config.kind == FeaturizerKind::EmbeddingFile && self.embeddings.is_none()
    }

    /// Maps raw text through the fitted vocabulary. Unknown n-grams are dropped.
    pub fn transform(&self, text: &str) -> FeatureVector<T> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for g in ngrams(&tokenize(text), self.config.ngram_range) {
            if let Some(&idx) = self.vocabulary.get(&g) {
                *counts.entry(idx).or_default() += 1;
            }
        }
        let mut v = FeatureVector::zeros(self.dimension);
        for (idx, c) in counts {
            let x = match self.config.kind {
                FeaturizerKind::Counts if self.config.binary => T::one(),
                FeaturizerKind::Counts => T::of_usize(c),
                _ => {
                    let tf = if self.config.sublinear_tf {
                        T::one() + T::of_usize(c).ln()
                    } else {
                        T::of_usize(c)
                    };
                    match &self.idf_weights {
                        Some(idf) => tf * idf[idx as usize],
                        None => tf,
                    }
                }
            };
            v.indices.push(idx);
            v.values.push(x);
        }
        if self.config.kind == FeaturizerKind::Tfidf {
            let norm = match self.config.norm {
                Norm::L2 => v.norm_l2(),
                Norm::L1 => v.values.iter().map(|x| x.abs()).sum(),
                Norm::None => T::one(),
            };
            if norm > T::zero() {
                v.scale(T::one() / norm);
            }
        }
        v
    }

    /// Featurizes one QA pair: composes its text, or looks up its embedding.
    pub fn transform_unit(&self, qa: &QaPair) -> Result<FeatureVector<T>> {
        match self.config.kind {
            FeaturizerKind::EmbeddingFile => {
                let table = self.embeddings.as_ref().ok_or_else(|| {
                    Error::Config("embedding table not attached to featurizer".into())
                })?;
                Ok(FeatureVector::from_dense(table.get(&qa.key())?))
            }
            _ => Ok(self.transform(&compose_unit_text(qa, self.config.include_question))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn compose_text() {
        let qa = QaPair {
            interview_id: "a".into(),
            qa_index: 0,
            question: "Q?".into(),
            answer: "A.".into(),
        };
        assert_eq!(compose_unit_text(&qa, false), "A.");
        assert_eq!(compose_unit_text(&qa, true), "Q? A.");
    }

    #[test]
    fn tokenizer_rule() {
        assert_eq!(tokenize("He will read Hafezi."), vec!["he", "will", "read", "hafezi"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("a b").is_empty());
        assert_eq!(tokenize("x2 y_z 10"), vec!["x2", "10"]);
    }

    #[test]
    fn ngram_windows() {
        let t = tokenize("aa bb cc");
        assert_eq!(ngrams(&t, (1, 2)), vec!["aa", "bb", "cc", "aa bb", "bb cc"]);
        assert_eq!(ngrams(&t, (3, 3)), vec!["aa bb cc"]);
        assert!(ngrams(&t, (4, 4)).is_empty());
    }

    #[test]
    fn smooth_idf_hand_values() {
        let f: FittedFeaturizer<f64> =
            fit_featurizer(&docs(&["aa bb", "aa cc"]), &FeaturizerConfig::tfidf((1, 1), 1000)).unwrap();
        let idf = f.idf_weights.as_ref().unwrap();
        let expect_rare = (3.0f64 / 2.0).ln() + 1.0;
        assert!((idf[f.vocabulary["aa"] as usize] - 1.0).abs() < 1e-12);
        assert!((idf[f.vocabulary["bb"] as usize] - expect_rare).abs() < 1e-12);
        assert!((expect_rare - 1.405465).abs() < 1e-6);

        let v = f.transform("aa bb");
        let n = (1.0f64 + expect_rare * expect_rare).sqrt();
        assert!((v.get(f.vocabulary["aa"] as usize) - 1.0 / n).abs() < 1e-12);
        assert!((v.get(f.vocabulary["bb"] as usize) - expect_rare / n).abs() < 1e-12);
        assert!((v.get(0) - 0.5797).abs() < 1e-4);
    }

    #[test]
    fn binary_counts_and_cap() {
        let f: FittedFeaturizer<f64> =
            fit_featurizer(&docs(&["xx xx yy"]), &FeaturizerConfig::counts((1, 1), 100, true)).unwrap();
        assert_eq!(f.transform("xx xx yy").get(f.vocabulary["xx"] as usize), 1.0);
        let raw: FittedFeaturizer<f64> =
            fit_featurizer(&docs(&["xx xx yy"]), &FeaturizerConfig::counts((1, 1), 100, false)).unwrap();
        assert_eq!(raw.transform("xx xx yy").get(raw.vocabulary["xx"] as usize), 2.0);

        let capped: FittedFeaturizer<f64> = fit_featurizer(
            &docs(&["aa bb", "aa cc", "aa dd"]),
            &FeaturizerConfig::tfidf((1, 1), 1),
        )
        .unwrap();
        assert_eq!(capped.vocabulary.keys().collect::<Vec<_>>(), vec!["aa"]);
    }

    #[test]
    fn cap_ties_break_lexicographically() {
        let f: FittedFeaturizer<f64> =
            fit_featurizer(&docs(&["zz yy", "xx ww"]), &FeaturizerConfig::counts((1, 1), 2, false)).unwrap();
        assert_eq!(f.vocabulary.keys().collect::<Vec<_>>(), vec!["ww", "xx"]);
    }

    #[test]
    fn unseen_text_and_no_norm() {
        let mut cfg = FeaturizerConfig::tfidf((1, 1), 100);
        let f: FittedFeaturizer<f64> = fit_featurizer(&docs(&["aa bb", "aa cc"]), &cfg).unwrap();
        assert_eq!(f.transform("zz qq").nnz(), 0);
        cfg.norm = Norm::None;
        let raw: FittedFeaturizer<f64> = fit_featurizer(&docs(&["aa bb", "aa cc"]), &cfg).unwrap();
        let v = raw.transform("bb bb");
        assert!((v.get(raw.vocabulary["bb"] as usize) - 2.0 * ((1.5f64).ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn df_filters() {
        let mut cfg = FeaturizerConfig::counts((1, 1), 100, false);
        cfg.min_df = 2;
        let f: FittedFeaturizer<f64> = fit_featurizer(&docs(&["aa bb", "aa cc"]), &cfg).unwrap();
        assert_eq!(f.dimension, 1);
        cfg.min_df = 1;
        cfg.max_df = 0.5;
        let g: FittedFeaturizer<f64> = fit_featurizer(&docs(&["aa bb", "aa cc"]), &cfg).unwrap();
        assert_eq!(g.vocabulary.keys().collect::<Vec<_>>(), vec!["bb", "cc"]);
        cfg.min_df = 3;
        assert!(matches!(
            fit_featurizer::<f64>(&docs(&["aa bb"]), &cfg),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn embeddings_from_csv() {
        let t: EmbeddingTable<f64> = read_embeddings("a,0,1.0,2.0,3.0\na,1,0,0,1\n".as_bytes(), 3).unwrap();
        assert_eq!(t.len(), 2);
        let cfg = FeaturizerConfig::embedding("emb.csv", 3);
        let f = fit_embedding_featurizer(&cfg, Arc::new(t)).unwrap();
        let qa = QaPair {
            interview_id: "a".into(),
            qa_index: 0,
            question: "q".into(),
            answer: "x".into(),
        };
        assert_eq!(f.transform_unit(&qa).unwrap().to_dense(), vec![1.0, 2.0, 3.0]);
        let missing = QaPair { qa_index: 7, ..qa };
        assert!(matches!(f.transform_unit(&missing), Err(Error::MissingEmbedding { .. })));

        let short = read_embeddings::<f64>("a,0,1.0,2.0\n".as_bytes(), 3);
        assert!(matches!(short, Err(Error::DimensionMismatch { expected: 3, found: 2 })));

        let empty: EmbeddingTable<f64> = read_embeddings("".as_bytes(), 300).unwrap();
        assert!(empty.is_empty());
        let ef = fit_embedding_featurizer(&FeaturizerConfig::embedding("e", 300), Arc::new(empty)).unwrap();
        assert_eq!(ef.dimension, 300);
        assert!(matches!(ef.transform_unit(&missing), Err(Error::MissingEmbedding { .. })));
    }

    #[test]
    fn sparse_distance_matches_dense() {
        let a = FeatureVector::from_dense(&[1.0f64, 0.0, 2.0, 0.0]);
        let b = FeatureVector::from_dense(&[0.0f64, 3.0, 1.0, 0.0]);
        assert_eq!(a.sq_dist(&b), 1.0 + 9.0 + 1.0);
        assert_eq!(a.dot(&[1.0, 1.0, 1.0, 1.0]), 3.0);
    }
}
