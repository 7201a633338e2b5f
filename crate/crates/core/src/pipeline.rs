//! Per-code model selection and scaling.
//!
//! Grid search runs grouped stratified k-fold cross-validation over
//! (featurizer, learner) configurations, the best configuration is refit on
//! every training unit, and its QA-level predictions are aggregated to
//! interview scores and merged with the gold sample.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotationSet, CellKey, Corpus, Provenance, QaPair, Split, UnitKey};
use crate::error::{Error, Result};
use crate::featurize::{
    compose_unit_text, fit_embedding_featurizer, fit_featurizer, EmbeddingTable, FeatureVector, FeaturizerConfig,
    FeaturizerKind, FittedFeaturizer,
};
use crate::learners::{
    fit, Activation, KnnWeights, LearnerConfig, LearnerParams, MaxFeatures, OptimSettings, Penalty, TrainedModel,
};
use crate::metrics::{f1, ConfusionCounts};
use crate::scalar::{sample_sd, Real};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_RESOLUTION: usize = 4;
pub const THRESHOLD: f64 = 0.5;

/// `points` values spaced evenly in log space over `[lo, hi]`, inclusive.
pub fn log_uniform(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Integer version of [`log_uniform`], rounded and deduplicated.
pub fn log_uniform_int(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    let mut v: Vec<usize> = log_uniform(lo as f64, hi.max(lo) as f64, points)
        .into_iter()
        .map(|x| x.round() as usize)
        .collect();
    v.dedup();
    v
}

/// A featurizer and learner pair; `featurizer.include_question` selects
/// whether the interviewer's question is part of the unit text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub featurizer: FeaturizerConfig,
    pub learner: LearnerConfig,
}

impl ModelSpec {
    pub fn include_question(&self) -> bool {
        self.featurizer.include_question
    }

    pub fn label(&self) -> String {
        format!(
            "{} | {} | question={}",
            self.featurizer.label(),
            self.learner.label(),
            self.include_question()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub featurizer_grid: Vec<FeaturizerConfig>,
    pub learner_grid: Vec<LearnerConfig>,
    pub include_question_options: Vec<bool>,
    #[serde(default = "default_resolution")]
    pub numeric_range_resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl SearchSpace {
    /// Featurizer-major, then learner, then question inclusion.
    pub fn enumerate(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for f in &self.featurizer_grid {
            for l in &self.learner_grid {
                for &q in &self.include_question_options {
                    out.push(ModelSpec {
                        featurizer: f.clone().with_question(q),
                        learner: l.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.featurizer_grid.len() * self.learner_grid.len() * self.include_question_options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every learner family over its full hyperparameter ranges, each numeric
    /// range discretized log-uniformly at `resolution` points.
    pub fn full(resolution: usize, n_train: usize, seed: u64) -> Self {
        let r = resolution.max(1);
        let mut params = Vec::new();
        for penalty in [Penalty::L1, Penalty::L2] {
            for c in log_uniform(2e-5, 1e4, r) {
                params.push(LearnerParams::Logistic { penalty, c });
            }
        }
        for penalty in [Penalty::L1, Penalty::L2] {
            for alpha in log_uniform(2e-5, 1e3, r) {
                params.push(LearnerParams::SgdModifiedHuber { penalty, alpha });
            }
        }
        for n_estimators in log_uniform_int(100, 1000, r) {
            for max_depth in log_uniform_int(10, 100, r) {
                params.push(LearnerParams::RandomForest {
                    n_estimators,
                    max_depth,
                    bootstrap: true,
                    max_features: MaxFeatures::Sqrt,
                });
            }
        }
        for max_depth in log_uniform_int(5, 100, r) {
            for min_impurity_decrease in log_uniform(2e-5, 1e4, r) {
                params.push(LearnerParams::DecisionTree {
                    max_depth,
                    min_impurity_decrease,
                });
            }
        }
        for hidden in [vec![100], vec![100, 100], vec![100, 100, 100]] {
            for activation in [Activation::Tanh, Activation::Relu] {
                for alpha in log_uniform(0.01, 1.0, r) {
                    params.push(LearnerParams::Mlp {
                        hidden_layer_sizes: hidden.clone(),
                        activation,
                        alpha,
                    });
                }
            }
        }
        for n_neighbors in log_uniform_int(10, n_train.clamp(10, 10_000), r) {
            for weights in [KnnWeights::Uniform, KnnWeights::Distance] {
                params.push(LearnerParams::Knn { n_neighbors, weights });
            }
        }
        for c in log_uniform(1e-5, 1e4, r) {
            params.push(LearnerParams::LinearSvm { c });
        }
        Self {
            featurizer_grid: vec![
                FeaturizerConfig::tfidf((1, 2), 10_000),
                FeaturizerConfig::counts((1, 1), 10_000, false),
            ],
            learner_grid: params.into_iter().map(|p| LearnerConfig::new(p, seed)).collect(),
            include_question_options: vec![false, true],
            numeric_range_resolution: r,
        }
    }

    /// A small space of fast learners, suitable as a default.
    pub fn compact(seed: u64) -> Self {
        let mut learners: Vec<LearnerConfig> = [0.1, 1.0, 10.0]
            .into_iter()
            .map(|c| LearnerParams::Logistic { penalty: Penalty::L2, c })
            .chain([LearnerParams::LinearSvm { c: 1.0 }])
            .chain([LearnerParams::DecisionTree {
                max_depth: 10,
                min_impurity_decrease: 2e-5,
            }])
            .map(|p| LearnerConfig::new(p, seed))
            .collect();
        for l in &mut learners {
            l.optim = OptimSettings { tol: 1e-6, max_epochs: 2000 };
        }
        Self {
            featurizer_grid: vec![FeaturizerConfig::tfidf((1, 2), 5_000)],
            learner_grid: learners,
            include_question_options: vec![false],
            numeric_range_resolution: DEFAULT_RESOLUTION,
        }
    }
}

/// One labeled QA pair available for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingUnit {
    pub qa: QaPair,
    pub label: u8,
    /// Synthetic revisions train models but are never validated on.
    #[serde(default)]
    pub augmented: bool,
}

impl TrainingUnit {
    pub fn key(&self) -> UnitKey {
        self.qa.key()
    }
}

/// Gold-labeled units of `code` from interviews in `splits`.
pub fn gold_units(corpus: &Corpus, code: &str, splits: &[Split]) -> Result<Vec<TrainingUnit>> {
    if corpus.code(code).is_none() {
        return Err(Error::UnknownCode(code.to_string()));
    }
    let gold = corpus
        .gold()
        .ok_or_else(|| Error::Invalid("corpus has no gold annotation set".into()))?;
    let mut units = Vec::new();
    for interview in corpus.interviews.iter().filter(|i| splits.contains(&i.split)) {
        for qa in &interview.qa_pairs {
            let key = CellKey::new(qa.interview_id.clone(), qa.qa_index, code);
            if let Some(label) = gold.get(&key) {
                units.push(TrainingUnit {
                    qa: qa.clone(),
                    label,
                    augmented: false,
                });
            }
        }
    }
    Ok(units)
}

/// Splits `units` into `k` validation folds, dealing shuffled positives and
/// then shuffled negatives round-robin so positive counts differ by at most one.
pub fn stratified_kfold<K: Clone>(units: &[(K, u8)], k: usize, seed: u64) -> Result<Vec<Vec<K>>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if units.len() < k {
        return Err(Error::Invalid(format!("{} units cannot fill {k} folds", units.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..units.len()).filter(|&i| units[i].1 == 1).collect();
    let mut neg: Vec<usize> = (0..units.len()).filter(|&i| units[i].1 != 1).collect();
    if pos.len() < k {
        log::warn!("only {} positives for {k} folds; some folds have none", pos.len());
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds: Vec<Vec<K>> = vec![Vec::new(); k];
    for (slot, i) in pos.into_iter().chain(neg).enumerate() {
        folds[slot % k].push(units[i].0.clone());
    }
    Ok(folds)
}

/// Interview-grouped folds: an interview is positive when any of its
/// non-augmented units is, and all its units share a fold.
pub fn grouped_folds(units: &[TrainingUnit], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut by_interview: BTreeMap<&str, u8> = BTreeMap::new();
    for u in units.iter().filter(|u| !u.augmented) {
        let e = by_interview.entry(u.qa.interview_id.as_str()).or_default();
        *e = (*e).max(u.label);
    }
    let groups: Vec<(String, u8)> = by_interview.into_iter().map(|(id, l)| (id.to_string(), l)).collect();
    stratified_kfold(&groups, k, seed)
}

fn fit_unit_featurizer<T: Real>(
    config: &FeaturizerConfig,
    units: &[&TrainingUnit],
    embeddings: Option<&Arc<EmbeddingTable<T>>>,
) -> Result<FittedFeaturizer<T>> {
    if config.kind == FeaturizerKind::EmbeddingFile {
        let table = embeddings
            .ok_or_else(|| Error::Config("embedding featurizer requested but no embeddings loaded".into()))?;
        return fit_embedding_featurizer(config, Arc::clone(table));
    }
    let docs: Vec<String> = units
        .iter()
        .map(|u| compose_unit_text(&u.qa, config.include_question))
        .collect();
    fit_featurizer(&docs, config)
}

fn featurize<T: Real>(f: &FittedFeaturizer<T>, units: &[&TrainingUnit]) -> Result<Vec<FeatureVector<T>>> {
    units.iter().map(|u| f.transform_unit(&u.qa)).collect()
}

/// Fits `spec` on `train` and returns validation scores for `valid`.
fn fit_and_score<T: Real>(
    spec: &ModelSpec,
    train: &[&TrainingUnit],
    valid: &[&TrainingUnit],
    embeddings: Option<&Arc<EmbeddingTable<T>>>,
) -> Result<Vec<T>> {
    let featurizer = fit_unit_featurizer(&spec.featurizer, train, embeddings)?;
    let x = featurize(&featurizer, train)?;
    let y: Vec<u8> = train.iter().map(|u| u.label).collect();
    let model = fit(&spec.learner, &x, &y)?;
    featurize(&featurizer, valid)?
        .iter()
        .map(|v| model.score(v))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore<T> {
    pub index: usize,
    pub spec: ModelSpec,
    pub fold_f1: Vec<T>,
    pub mean_f1: T,
    /// Set when fitting failed on some fold; such configs are never selected.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfFoldPrediction<T> {
    pub interview_id: String,
    pub qa_index: usize,
    pub fold: usize,
    pub score: T,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVResult<T> {
    pub code_name: String,
    pub k: usize,
    pub seed: u64,
    /// Interview ids per validation fold.
    pub folds: Vec<Vec<String>>,
    pub scores: Vec<ConfigScore<T>>,
    pub best_index: usize,
    pub best: ModelSpec,
    pub best_mean_f1: T,
    /// Validation-fold predictions of the selected config for every
    /// non-augmented training unit.
    pub out_of_fold: Vec<OutOfFoldPrediction<T>>,
}

impl<T: Real> CVResult<T> {
    /// Out-of-fold predictions as an annotation set.
    pub fn out_of_fold_annotations(&self, source_id: &str) -> AnnotationSet {
        let mut set = AnnotationSet::new(source_id, Provenance::ModelPrediction);
        for p in &self.out_of_fold {
            set.set(CellKey::new(p.interview_id.clone(), p.qa_index, self.code_name.clone()), p.label);
        }
        set
    }
}

struct FoldSplit<'a> {
    train: Vec<&'a TrainingUnit>,
    valid: Vec<&'a TrainingUnit>,
}

fn fold_splits<'a>(units: &'a [TrainingUnit], folds: &[Vec<String>]) -> Result<Vec<FoldSplit<'a>>> {
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, ids) in folds.iter().enumerate() {
        for id in ids {
            fold_of.insert(id.as_str(), f);
        }
    }
    let mut splits: Vec<FoldSplit> = (0..folds.len())
        .map(|_| FoldSplit {
            train: Vec::new(),
            valid: Vec::new(),
        })
        .collect();
    for u in units {
        // augmented units whose source interview has no real unit only train
        let home = fold_of.get(u.qa.interview_id.as_str()).copied();
        for (f, split) in splits.iter_mut().enumerate() {
            if home == Some(f) {
                if !u.augmented {
                    split.valid.push(u);
                }
            } else {
                split.train.push(u);
            }
        }
    }
    for (f, split) in splits.iter().enumerate() {
        let train_ids: BTreeSet<&str> = split.train.iter().map(|u| u.qa.interview_id.as_str()).collect();
        if let Some(u) = split.valid.iter().find(|u| train_ids.contains(u.qa.interview_id.as_str())) {
            return Err(Error::Invalid(format!(
                "fold {f}: interview {} appears in both training and validation",
                u.qa.interview_id
            )));
        }
    }
    Ok(splits)
}

fn f1_of<T: Real>(scores: &[T], units: &[&TrainingUnit]) -> T {
    let mut c = ConfusionCounts::default();
    for (s, u) in scores.iter().zip(units) {
        c.add(u8::from(*s >= T::of(THRESHOLD)), u.label);
    }
    f1(&c)
}

/// Cross-validated selection of the best configuration for one code.
pub fn grid_search<T: Real>(
    code: &str,
    units: &[TrainingUnit],
    space: &SearchSpace,
    k: usize,
    seed: u64,
    embeddings: Option<Arc<EmbeddingTable<T>>>,
) -> Result<CVResult<T>> {
    let candidates = space.enumerate();
    if candidates.is_empty() {
        return Err(Error::EmptySearchSpace);
    }
    let labels: BTreeSet<u8> = units.iter().filter(|u| !u.augmented).map(|u| u.label).collect();
    if labels.len() < 2 {
        return Err(Error::Invalid(format!("code `{code}`: training units contain a single class")));
    }
    let folds = grouped_folds(units, k, seed)?;
    let splits = fold_splits(units, &folds)?;
    let emb = embeddings.as_ref();

    let scores: Vec<ConfigScore<T>> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(index, spec)| {
            let mut fold_f1 = Vec::with_capacity(splits.len());
            let mut error = None;
            for split in &splits {
                match fit_and_score(&spec, &split.train, &split.valid, emb) {
                    Ok(s) => fold_f1.push(f1_of(&s, &split.valid)),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            let mean_f1 = if error.is_some() {
                T::neg_infinity()
            } else {
                fold_f1.iter().copied().sum::<T>() / T::of_usize(fold_f1.len())
            };
            ConfigScore {
                index,
                spec,
                fold_f1,
                mean_f1,
                error,
            }
        })
        .collect();

    let mut best: Option<&ConfigScore<T>> = None;
    for s in scores.iter().filter(|s| s.error.is_none()) {
        if best.is_none_or(|b| s.mean_f1 > b.mean_f1) {
            best = Some(s);
        }
    }
    let Some(best) = best else {
        let reason = scores.iter().find_map(|s| s.error.clone()).unwrap_or_default();
        return Err(Error::Invalid(format!("code `{code}`: every configuration failed ({reason})")));
    };
    log::info!("{code}: selected #{} {} (mean F1 {:.4})", best.index, best.spec.label(), best.mean_f1);

    let mut out_of_fold = Vec::new();
    for (f, split) in splits.iter().enumerate() {
        let s = fit_and_score(&best.spec, &split.train, &split.valid, emb)?;
        for (score, u) in s.into_iter().zip(&split.valid) {
            out_of_fold.push(OutOfFoldPrediction {
                interview_id: u.qa.interview_id.clone(),
                qa_index: u.qa.qa_index,
                fold: f,
                score,
                label: u8::from(score >= T::of(THRESHOLD)),
            });
        }
    }
    out_of_fold.sort_by(|a, b| (&a.interview_id, a.qa_index).cmp(&(&b.interview_id, b.qa_index)));

    Ok(CVResult {
        code_name: code.to_string(),
        k,
        seed,
        folds,
        best_index: best.index,
        best: best.spec.clone(),
        best_mean_f1: best.mean_f1,
        scores,
        out_of_fold,
    })
}

/// The selected featurizer and learner, refit on all training units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeModel<T> {
    pub code_name: String,
    pub featurizer: FittedFeaturizer<T>,
    pub model: TrainedModel<T>,
    pub cv: CVResult<T>,
    pub n_training_units: usize,
}

pub fn fit_final<T: Real>(
    code: &str,
    units: &[TrainingUnit],
    cv: CVResult<T>,
    embeddings: Option<Arc<EmbeddingTable<T>>>,
) -> Result<CodeModel<T>> {
    if cv.code_name != code {
        return Err(Error::Invalid(format!(
            "cross-validation result is for `{}`, not `{code}`",
            cv.code_name
        )));
    }
    let all: Vec<&TrainingUnit> = units.iter().collect();
    let featurizer = fit_unit_featurizer(&cv.best.featurizer, &all, embeddings.as_ref())?;
    let x = featurize(&featurizer, &all)?;
    let y: Vec<u8> = all.iter().map(|u| u.label).collect();
    let model = fit(&cv.best.learner, &x, &y)?;
    Ok(CodeModel {
        code_name: code.to_string(),
        featurizer,
        model,
        cv,
        n_training_units: all.len(),
    })
}

impl<T: Real> CodeModel<T> {
    pub fn score(&self, qa: &QaPair) -> Result<T> {
        self.model.score(&self.featurizer.transform_unit(qa)?)
    }

    pub fn attach_embeddings(&mut self, table: Arc<EmbeddingTable<T>>) -> Result<()> {
        self.featurizer.attach_embeddings(table)
    }
}

/// One binary cell per QA pair of the interviews in `targets`.
pub fn predict_annotations<T: Real>(
    model: &CodeModel<T>,
    corpus: &Corpus,
    targets: &[Split],
    source_id: &str,
) -> Result<AnnotationSet> {
    let qas: Vec<&QaPair> = corpus
        .interviews
        .iter()
        .filter(|i| targets.contains(&i.split))
        .flat_map(|i| &i.qa_pairs)
        .collect();
    let labels: Vec<u8> = qas
        .par_iter()
        .map(|qa| Ok(u8::from(model.score(qa)? >= T::of(THRESHOLD))))
        .collect::<Result<_>>()?;
    let mut set = AnnotationSet::new(source_id, Provenance::ModelPrediction);
    for (qa, label) in qas.into_iter().zip(labels) {
        set.insert(CellKey::new(qa.interview_id.clone(), qa.qa_index, model.code_name.clone()), label)?;
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Share of QA pairs labeled positive.
    #[default]
    Mean,
    /// 1 if any QA pair is positive.
    Max,
}

pub type AggregationSpec = Aggregation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterviewScoreTable<T> {
    pub source_id: String,
    pub code_name: String,
    pub aggregation: Aggregation,
    pub scores: BTreeMap<String, T>,
}

/// Collapses the cells of `code` to one score per interview. Interviews in
/// `expected` without any cell are reported and left out.
pub fn aggregate_to_interview<T: Real>(
    annotations: &AnnotationSet,
    code: &str,
    aggregation: Aggregation,
    expected: Option<&BTreeSet<String>>,
) -> InterviewScoreTable<T> {
    let mut acc: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (key, label) in annotations.code_cells(code) {
        let e = acc.entry(key.interview_id.clone()).or_default();
        e.0 += label as usize;
        e.1 += 1;
    }
    if let Some(expected) = expected {
        let missing = expected.iter().filter(|id| !acc.contains_key(*id)).count();
        if missing > 0 {
            log::warn!("{code}: {missing} interviews have no annotated QA pairs and were excluded");
        }
    }
    let scores = acc
        .into_iter()
        .map(|(id, (pos, n))| {
            let s = match aggregation {
                Aggregation::Mean => T::of_usize(pos) / T::of_usize(n),
                Aggregation::Max => T::of_usize(pos.min(1)),
            };
            (id, s)
        })
        .collect();
    InterviewScoreTable {
        source_id: annotations.source_id.clone(),
        code_name: code.to_string(),
        aggregation,
        scores,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOrigin {
    Gold,
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancedSample<T> {
    pub code_name: String,
    pub aggregation: Aggregation,
    pub scores: BTreeMap<String, (T, ScoreOrigin)>,
}

pub const ENHANCED_SOURCE: &str = "enhanced";

impl<T: Real> EnhancedSample<T> {
    pub fn to_table(&self) -> InterviewScoreTable<T> {
        InterviewScoreTable {
            source_id: ENHANCED_SOURCE.to_string(),
            code_name: self.code_name.clone(),
            aggregation: self.aggregation,
            scores: self.scores.iter().map(|(id, (s, _))| (id.clone(), *s)).collect(),
        }
    }

    pub fn count(&self, origin: ScoreOrigin) -> usize {
        self.scores.values().filter(|(_, o)| *o == origin).count()
    }
}

/// Gold scores wherever they exist, predicted scores elsewhere.
pub fn enhance_sample<T: Real>(
    gold: &InterviewScoreTable<T>,
    predicted: &InterviewScoreTable<T>,
) -> Result<EnhancedSample<T>> {
    if gold.code_name != predicted.code_name {
        return Err(Error::Invalid(format!(
            "cannot merge `{}` gold with `{}` predictions",
            gold.code_name, predicted.code_name
        )));
    }
    let mut scores: BTreeMap<String, (T, ScoreOrigin)> = predicted
        .scores
        .iter()
        .map(|(id, &s)| (id.clone(), (s, ScoreOrigin::Predicted)))
        .collect();
    for (id, &s) in &gold.scores {
        scores.insert(id.clone(), (s, ScoreOrigin::Gold));
    }
    Ok(EnhancedSample {
        code_name: gold.code_name.clone(),
        aggregation: gold.aggregation,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate<T> {
    pub point: T,
    /// Mean of the replicate statistics.
    pub replicate_mean: T,
    pub std_error: T,
    pub ci_low: T,
    pub ci_high: T,
    pub replicates: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile<T: Real>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Resamples `items` with replacement `replicates` times and summarizes the
/// distribution of `statistic`.
pub fn bootstrap_statistic<I, T, F>(items: &[I], statistic: F, replicates: usize, seed: u64) -> Result<BootstrapEstimate<T>>
where
    I: Clone,
    T: Real,
    F: Fn(&[I]) -> T,
{
    if items.len() < 2 {
        return Err(Error::Invalid("bootstrap needs at least 2 items".into()));
    }
    if replicates < 100 {
        return Err(Error::Config(format!("bootstrap needs at least 100 replicates, got {replicates}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = items.len();
    let mut sample: Vec<I> = Vec::with_capacity(n);
    let mut stats: Vec<T> = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        sample.clear();
        sample.extend((0..n).map(|_| items[rng.random_range(0..n)].clone()));
        stats.push(statistic(&sample));
    }
    let std_error = sample_sd(&stats);
    let replicate_mean = stats.iter().copied().sum::<T>() / T::of_usize(replicates);
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(BootstrapEstimate {
        point: statistic(items),
        replicate_mean,
        std_error,
        ci_low: quantile(&stats, 0.025),
        ci_high: quantile(&stats, 0.975),
        replicates,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reproducibility record written next to every run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub created_unix: u64,
    pub seed: u64,
    pub config_sha256: String,
    /// Input file name to content hash.
    pub data_sha256: BTreeMap<String, String>,
    pub codes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_space: Option<SearchSpace>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_sha256: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed,
            config_sha256,
            data_sha256: BTreeMap::new(),
            codes: Vec::new(),
            search_space: None,
            notes: Vec::new(),
        }
    }
}
