//! The classifier family searched during model selection.
//!
//! Every learner is fit from sparse feature vectors and binary labels and
//! exposes a probability-like score in `[0, 1]`. Fitting is deterministic
//! given the config seed.

mod gradcheck;
mod knn;
mod linear;
mod mlp;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureVector;
use crate::scalar::{sigmoid, Real};

pub use gradcheck::{loss_gradient_check, GradCheckFamily, GradCheckInstance};
pub use linear::{HingeObjective, LogisticObjective};
pub use mlp::{Mlp, MlpObjective};
pub use tree::{Node, Tree};

/// Loss + gradient in a flat parameter vector.
pub trait Objective<T: Real> {
    fn n_params(&self) -> usize;
    /// Returns the loss and writes the gradient into `grad`.
    fn value_grad(&self, params: &[T], grad: &mut [T]) -> T;
    fn value(&self, params: &[T]) -> T {
        let mut g = vec![T::zero(); self.n_params()];
        self.value_grad(params, &mut g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeights {
    Uniform,
    Distance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerFamily {
    Logistic,
    SgdModifiedHuber,
    DecisionTree,
    RandomForest,
    Knn,
    Mlp,
    LinearSvm,
}

impl LearnerFamily {
    pub const ALL: [LearnerFamily; 7] = [
        LearnerFamily::Logistic,
        LearnerFamily::SgdModifiedHuber,
        LearnerFamily::DecisionTree,
        LearnerFamily::RandomForest,
        LearnerFamily::Knn,
        LearnerFamily::Mlp,
        LearnerFamily::LinearSvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerFamily::Logistic => "logistic",
            LearnerFamily::SgdModifiedHuber => "sgd_modified_huber",
            LearnerFamily::DecisionTree => "decision_tree",
            LearnerFamily::RandomForest => "random_forest",
            LearnerFamily::Knn => "knn",
            LearnerFamily::Mlp => "mlp",
            LearnerFamily::LinearSvm => "linear_svm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Family plus its hyperparameters. Each variant only admits its own knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerParams {
    Logistic {
        penalty: Penalty,
        c: f64,
    },
    /// Loss is fixed to modified Huber and the step schedule to "optimal".
    SgdModifiedHuber {
        penalty: Penalty,
        alpha: f64,
    },
    DecisionTree {
        max_depth: usize,
        min_impurity_decrease: f64,
    },
    RandomForest {
        n_estimators: usize,
        max_depth: usize,
        #[serde(default = "default_true")]
        bootstrap: bool,
        #[serde(default = "default_sqrt")]
        max_features: MaxFeatures,
    },
    Knn {
        n_neighbors: usize,
        weights: KnnWeights,
    },
    Mlp {
        hidden_layer_sizes: Vec<usize>,
        activation: Activation,
        alpha: f64,
    },
    LinearSvm {
        c: f64,
    },
}

fn default_true() -> bool {
    true
}
fn default_sqrt() -> MaxFeatures {
    MaxFeatures::Sqrt
}

impl LearnerParams {
    pub fn family(&self) -> LearnerFamily {
        match self {
            LearnerParams::Logistic { .. } => LearnerFamily::Logistic,
            LearnerParams::SgdModifiedHuber { .. } => LearnerFamily::SgdModifiedHuber,
            LearnerParams::DecisionTree { .. } => LearnerFamily::DecisionTree,
            LearnerParams::RandomForest { .. } => LearnerFamily::RandomForest,
            LearnerParams::Knn { .. } => LearnerFamily::Knn,
            LearnerParams::Mlp { .. } => LearnerFamily::Mlp,
            LearnerParams::LinearSvm { .. } => LearnerFamily::LinearSvm,
        }
    }
}

/// Stopping rule for the iterative learners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSettings {
    /// Relative change in training loss below which fitting stops.
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_epochs: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub params: LearnerParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optim: OptimSettings,
}

impl LearnerConfig {
    pub fn new(params: LearnerParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            optim: OptimSettings::default(),
        }
    }

    pub fn family(&self) -> LearnerFamily {
        self.params.family()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.params {
            LearnerParams::Logistic { c, .. } | LearnerParams::LinearSvm { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return bad(format!("C must be positive, got {c}"));
                }
            }
            LearnerParams::SgdModifiedHuber { alpha, .. } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return bad(format!("alpha must be positive, got {alpha}"));
                }
            }
            LearnerParams::DecisionTree {
                max_depth,
                min_impurity_decrease,
            } => {
                if *max_depth == 0 {
                    return bad("max_depth must be at least 1".into());
                }
                if !(*min_impurity_decrease >= 0.0) {
                    return bad("min_impurity_decrease must be non-negative".into());
                }
            }
            LearnerParams::RandomForest {
                n_estimators,
                max_depth,
                ..
            } => {
                if *n_estimators == 0 || *max_depth == 0 {
                    return bad("n_estimators and max_depth must be at least 1".into());
                }
            }
            LearnerParams::Knn { n_neighbors, .. } => {
                if *n_neighbors == 0 {
                    return bad("n_neighbors must be at least 1".into());
                }
            }
            LearnerParams::Mlp {
                hidden_layer_sizes,
                alpha,
                ..
            } => {
                if hidden_layer_sizes.is_empty() || hidden_layer_sizes.contains(&0) {
                    return bad("hidden_layer_sizes must be non-empty and positive".into());
                }
                if !(*alpha >= 0.0) {
                    return bad("alpha must be non-negative".into());
                }
            }
        }
        if !(self.optim.tol >= 0.0) || self.optim.max_epochs == 0 {
            return bad("invalid optimizer settings".into());
        }
        Ok(())
    }

    /// Compact description used in reports.
    pub fn label(&self) -> String {
        match &self.params {
            LearnerParams::Logistic { penalty, c } => format!("logistic({penalty:?},C={c:.3e})"),
            LearnerParams::SgdModifiedHuber { penalty, alpha } => {
                format!("sgd_mhuber({penalty:?},alpha={alpha:.3e})")
            }
            LearnerParams::DecisionTree {
                max_depth,
                min_impurity_decrease,
            } => format!("tree(depth={max_depth},mid={min_impurity_decrease:.3e})"),
            LearnerParams::RandomForest {
                n_estimators,
                max_depth,
                ..
            } => format!("forest(n={n_estimators},depth={max_depth})"),
            LearnerParams::Knn {
                n_neighbors,
                weights,
            } => format!("knn(k={n_neighbors},{weights:?})"),
            LearnerParams::Mlp {
                hidden_layer_sizes,
                activation,
                alpha,
            } => format!("mlp({hidden_layer_sizes:?},{activation:?},alpha={alpha:.3e})"),
            LearnerParams::LinearSvm { c } => format!("linear_svm(C={c:.3e})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `sigmoid(margin)`
    Sigmoid,
    /// `clip((margin + 1) / 2, 0, 1)`
    ModifiedHuber,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState<T> {
    Constant {
        value: T,
    },
    Linear {
        weights: Vec<T>,
        bias: T,
        link: Link,
    },
    Tree {
        tree: Tree<T>,
    },
    Forest {
        trees: Vec<Tree<T>>,
    },
    Knn {
        points: Vec<FeatureVector<T>>,
        labels: Vec<u8>,
        k: usize,
        weights: KnnWeights,
    },
    Mlp {
        net: Mlp<T>,
    },
}

/// A fitted classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub config: LearnerConfig,
    pub state: ModelState<T>,
    pub feature_dimension: usize,
    pub training_prevalence: T,
    /// Set when the training labels had a single class.
    pub degenerate: bool,
}

pub fn fit<T: Real>(config: &LearnerConfig, x: &[FeatureVector<T>], y: &[u8]) -> Result<TrainedModel<T>> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Invalid("need at least 2 training samples".into()));
    }
    let dim = x[0].dim();
    if let Some(bad) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    let prevalence = T::of_usize(positives) / T::of_usize(y.len());
    if positives == 0 || positives == y.len() {
        return Ok(TrainedModel {
            config: config.clone(),
            state: ModelState::Constant { value: prevalence },
            feature_dimension: dim,
            training_prevalence: prevalence,
            degenerate: true,
        });
    }

    let state = match &config.params {
        LearnerParams::Logistic { penalty, c } => {
            let (weights, bias) = linear::fit_logistic(x, y, dim, *penalty, *c, &config.optim);
            ModelState::Linear {
                weights,
                bias,
                link: Link::Sigmoid,
            }
        }
        LearnerParams::LinearSvm { c } => {
            let (weights, bias) = linear::fit_linear_svm(x, y, dim, *c, &config.optim);
            ModelState::Linear {
                weights,
                bias,
                link: Link::Sigmoid,
            }
        }
        LearnerParams::SgdModifiedHuber { penalty, alpha } => {
            let (weights, bias) = linear::fit_sgd_modified_huber(x, y, dim, *penalty, *alpha, config.seed);
            ModelState::Linear {
                weights,
                bias,
                link: Link::ModifiedHuber,
            }
        }
        LearnerParams::DecisionTree {
            max_depth,
            min_impurity_decrease,
        } => {
            let weights = vec![1u32; y.len()];
            let opts = tree::TreeOptions {
                max_depth: *max_depth,
                min_impurity_decrease: *min_impurity_decrease,
                max_features: MaxFeatures::All,
            };
            ModelState::Tree {
                tree: tree::build_tree(x, y, &weights, dim, &opts, config.seed),
            }
        }
        LearnerParams::RandomForest {
            n_estimators,
            max_depth,
            bootstrap,
            max_features,
        } => ModelState::Forest {
            trees: tree::build_forest(x, y, dim, *n_estimators, *max_depth, *bootstrap, *max_features, config.seed),
        },
        LearnerParams::Knn {
            n_neighbors,
            weights,
        } => {
            let k = if *n_neighbors > x.len() {
                log::warn!(
                    "n_neighbors {} exceeds {} training samples; clamped",
                    n_neighbors,
                    x.len()
                );
                x.len()
            } else {
                *n_neighbors
            };
            ModelState::Knn {
                points: x.to_vec(),
                labels: y.to_vec(),
                k,
                weights: *weights,
            }
        }
        LearnerParams::Mlp {
            hidden_layer_sizes,
            activation,
            alpha,
        } => ModelState::Mlp {
            net: mlp::fit_mlp(x, y, dim, hidden_layer_sizes, *activation, *alpha, &config.optim, config.seed),
        },
    };

    Ok(TrainedModel {
        config: config.clone(),
        state,
        feature_dimension: dim,
        training_prevalence: prevalence,
        degenerate: false,
    })
}

impl<T: Real> TrainedModel<T> {
    /// Probability-like score in `[0, 1]`.
    pub fn score(&self, x: &FeatureVector<T>) -> Result<T> {
        if x.dim() != self.feature_dimension {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dimension,
                found: x.dim(),
            });
        }
        let s = match &self.state {
            ModelState::Constant { value } => *value,
            ModelState::Linear { weights, bias, link } => {
                let m = x.dot(weights) + *bias;
                match link {
                    Link::Sigmoid => sigmoid(m),
                    Link::ModifiedHuber => ((m + T::one()) * T::of(0.5)).max(T::zero()).min(T::one()),
                }
            }
            ModelState::Tree { tree } => tree.score(x),
            ModelState::Forest { trees } => {
                trees.iter().map(|t| t.score(x)).sum::<T>() / T::of_usize(trees.len())
            }
            ModelState::Knn {
                points,
                labels,
                k,
                weights,
            } => knn::score(points, labels, *k, *weights, x),
            ModelState::Mlp { net } => net.score(x),
        };
        Ok(if s.is_nan() { T::zero() } else { s.max(T::zero()).min(T::one()) })
    }

    /// 1 iff score >= threshold.
    pub fn predict(&self, x: &FeatureVector<T>, threshold: T) -> Result<u8> {
        Ok(u8::from(self.score(x)? >= threshold))
    }

    /// L2 norm of the linear weights (excluding bias), if the model is linear.
    pub fn weight_norm(&self) -> Option<T> {
        match &self.state {
            ModelState::Linear { weights, .. } => {
                Some(weights.iter().map(|&w| w * w).sum::<T>().sqrt())
            }
            _ => None,
        }
    }
}

/// Deterministic per-index seed derivation (splitmix64 over `seed ^ index`).
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
