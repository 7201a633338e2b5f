//! Supervised scaling of qualitative interview annotations, and auditing of
//! any annotation source (trained model or LLM) for accuracy, net
//! over-prediction and covariate-correlated error.
//!
//! Module map:
//! - [`corpus`]: interviews, QA pairs, codebook, annotation sets, covariates.
//! - [`featurize`]: n-gram count / TF-IDF featurizers and precomputed embeddings.
//! - [`learners`]: the classifier family searched during model selection.
//! - [`pipeline`]: grouped stratified k-fold grid search, final fit, prediction,
//!   interview aggregation, enhanced sample, bootstrap.
//! - [`metrics`]: F1, accuracy, random-guess baseline, net over-prediction.
//! - [`biasaudit`]: OLS with IID standard errors, F-tests, coefficient comparison.
//! - [`llmbridge`]: few-shot chain-of-thought prompts, label parsing, provider
//!   interface with caching and retry, dialogue augmentation.
//! - [`synthlab`]: synthetic corpora with planted signals and error injection.

pub mod biasaudit;
pub mod corpus;
pub mod error;
pub mod featurize;
pub mod learners;
pub mod linalg;
pub mod llmbridge;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod special;
pub mod synthlab;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FeatureVector = featurize::FeatureVector<f64>;
pub type FittedFeaturizer = featurize::FittedFeaturizer<f64>;
pub type TrainedModel = learners::TrainedModel<f64>;
pub type CodeModel = pipeline::CodeModel<f64>;
pub type InterviewScoreTable = pipeline::InterviewScoreTable<f64>;
pub type RegressionTable = biasaudit::RegressionTable<f64>;
pub type BiasTestResult = biasaudit::BiasTestResult<f64>;
pub type CodeEvalReport = metrics::CodeEvalReport<f64>;
