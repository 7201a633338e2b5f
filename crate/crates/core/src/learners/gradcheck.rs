//! Finite-difference verification of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activation, HingeObjective, LogisticObjective, MlpObjective, Objective};
use crate::featurize::FeatureVector;

const STEP: f64 = 1e-5;
/// Denominator floor so that near-zero partials do not inflate the ratio.
const FLOOR: f64 = 1e-6;
/// Minimum distance of every hinge margin from the kink.
const KINK_GAP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckFamily {
    Logistic,
    Mlp,
    LinearSvm,
}

/// Shape of the random problem to check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckInstance {
    pub n_samples: usize,
    pub n_features: usize,
    pub l2: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for GradCheckInstance {
    fn default() -> Self {
        Self {
            n_samples: 10,
            n_features: 3,
            l2: 0.1,
            hidden: vec![100],
            activation: Activation::Tanh,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn max_deviation(obj: &impl Objective<f64>, params: &[f64]) -> f64 {
    let mut grad = vec![0.0; obj.n_params()];
    obj.value_grad(params, &mut grad);
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + STEP;
        let up = obj.value(&p);
        p[k] = orig - STEP;
        let down = obj.value(&p);
        p[k] = orig;
        let fd = (up - down) / (2.0 * STEP);
        let dev = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(FLOOR);
        worst = worst.max(dev);
    }
    worst
}

/// Draws a random problem and parameter point and returns the largest
/// relative gap between analytic and central-difference partials.
pub fn loss_gradient_check(family: GradCheckFamily, instance: &GradCheckInstance, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (instance.n_samples.max(1), instance.n_features.max(1));
    let x: Vec<FeatureVector<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            FeatureVector::from_dense(&row)
        })
        .collect();
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();

    match family {
        GradCheckFamily::Logistic => {
            let obj = LogisticObjective { x: &x, y: &y, dim: d, l2: instance.l2 };
            let params: Vec<f64> = (0..=d).map(|_| 0.5 * normal(&mut rng)).collect();
            max_deviation(&obj, &params)
        }
        GradCheckFamily::LinearSvm => {
            let obj = HingeObjective { x: &x, y: &y, dim: d, l2: instance.l2 };
            let params = loop {
                let p: Vec<f64> = (0..=d).map(|_| 0.5 * normal(&mut rng)).collect();
                let clear = x.iter().zip(&y).all(|(xi, &yi)| {
                    let s = if yi == 1 { 1.0 } else { -1.0 };
                    let m = xi.dot(&p[..d]) + p[d];
                    (1.0 - s * m).abs() > KINK_GAP
                });
                if clear {
                    break p;
                }
            };
            max_deviation(&obj, &params)
        }
        GradCheckFamily::Mlp => {
            let obj = MlpObjective::new(&x, &y, d, &instance.hidden, instance.activation, instance.l2);
            let params = obj.init_params(&mut rng);
            max_deviation(&obj, &params)
        }
    }
}
