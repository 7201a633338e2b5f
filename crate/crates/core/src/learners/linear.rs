//! Linear learners: L1/L2 logistic regression and linear SVM by (proximal)
//! gradient descent, and the modified-Huber SGD classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Objective, OptimSettings, Penalty};
use crate::featurize::FeatureVector;
use crate::scalar::{sigmoid, softplus, Real};

#[inline]
fn signed<T: Real>(label: u8) -> T {
    if label == 1 {
        T::one()
    } else {
        -T::one()
    }
}

/// Mean log loss plus `l2/2 * |w|^2`. Parameters are `[w..., bias]`.
pub struct LogisticObjective<'a, T> {
    pub x: &'a [FeatureVector<T>],
    pub y: &'a [u8],
    pub dim: usize,
    pub l2: T,
}

impl<T: Real> Objective<T> for LogisticObjective<'_, T> {
    fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn value_grad(&self, params: &[T], grad: &mut [T]) -> T {
        let (w, b) = (&params[..self.dim], params[self.dim]);
        grad.iter_mut().for_each(|g| *g = T::zero());
        let inv_n = T::one() / T::of_usize(self.x.len());
        let mut loss = T::zero();
        for (xi, &yi) in self.x.iter().zip(self.y) {
            let m = xi.dot(w) + b;
            loss += softplus(-signed::<T>(yi) * m);
            let r = (sigmoid(m) - T::of_usize(yi as usize)) * inv_n;
            for (j, v) in xi.iter() {
                grad[j] += r * v;
            }
            grad[self.dim] += r;
        }
        let mut reg = T::zero();
        for j in 0..self.dim {
            grad[j] += self.l2 * w[j];
            reg += w[j] * w[j];
        }
        loss * inv_n + self.l2 * T::of(0.5) * reg
    }
}

/// Mean hinge loss plus `l2/2 * |w|^2`; the gradient is a subgradient at kinks.
pub struct HingeObjective<'a, T> {
    pub x: &'a [FeatureVector<T>],
    pub y: &'a [u8],
    pub dim: usize,
    pub l2: T,
}

impl<T: Real> Objective<T> for HingeObjective<'_, T> {
    fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn value_grad(&self, params: &[T], grad: &mut [T]) -> T {
        let (w, b) = (&params[..self.dim], params[self.dim]);
        grad.iter_mut().for_each(|g| *g = T::zero());
        let inv_n = T::one() / T::of_usize(self.x.len());
        let mut loss = T::zero();
        for (xi, &yi) in self.x.iter().zip(self.y) {
            let s = signed::<T>(yi);
            let slack = T::one() - s * (xi.dot(w) + b);
            if slack > T::zero() {
                loss += slack;
                for (j, v) in xi.iter() {
                    grad[j] -= s * v * inv_n;
                }
                grad[self.dim] -= s * inv_n;
            }
        }
        let mut reg = T::zero();
        for j in 0..self.dim {
            grad[j] += self.l2 * w[j];
            reg += w[j] * w[j];
        }
        loss * inv_n + self.l2 * T::of(0.5) * reg
    }
}

fn l1_norm<T: Real>(w: &[T]) -> T {
    w.iter().map(|v| v.abs()).sum()
}

fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Proximal gradient descent with backtracking on the quadratic upper bound.
/// The first `n_penalized` parameters carry an L1 penalty of weight `l1`.
pub(crate) fn proximal_gradient<T: Real, O: Objective<T>>(
    obj: &O,
    n_penalized: usize,
    l1: T,
    optim: &OptimSettings,
) -> Vec<T> {
    let n = obj.n_params();
    let mut p = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut f = obj.value_grad(&p, &mut g);
    let mut total = f + l1 * l1_norm(&p[..n_penalized]);
    let mut cand = vec![T::zero(); n];
    let mut gc = vec![T::zero(); n];
    let mut step = T::one();
    let tol = T::of(optim.tol);
    let half = T::of(0.5);

    for _ in 0..optim.max_epochs {
        let mut fc;
        loop {
            for i in 0..n {
                let v = p[i] - step * g[i];
                cand[i] = if i < n_penalized { soft_threshold(v, step * l1) } else { v };
            }
            fc = obj.value_grad(&cand, &mut gc);
            let mut lin = T::zero();
            let mut sq = T::zero();
            for i in 0..n {
                let d = cand[i] - p[i];
                lin += g[i] * d;
                sq += d * d;
            }
            let bound = f + lin + sq * half / step;
            if fc <= bound + T::of(1e-12) * f.abs().max(T::one()) {
                break;
            }
            step *= half;
            if step < T::of(1e-20) {
                return p;
            }
        }
        let new_total = fc + l1 * l1_norm(&cand[..n_penalized]);
        std::mem::swap(&mut p, &mut cand);
        std::mem::swap(&mut g, &mut gc);
        f = fc;
        let rel = (total - new_total).abs() / total.abs().max(T::min_positive_value());
        total = new_total;
        if rel < tol {
            break;
        }
        step *= T::of(2.0);
    }
    p
}

/// Subgradient descent with Armijo backtracking for non-smooth objectives.
/// Keeps the best iterate seen.
pub(crate) fn subgradient_descent<T: Real, O: Objective<T>>(obj: &O, optim: &OptimSettings) -> Vec<T> {
    let n = obj.n_params();
    let mut p = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut f = obj.value_grad(&p, &mut g);
    let mut cand = vec![T::zero(); n];
    let mut gc = vec![T::zero(); n];
    let mut step = T::one();
    let tol = T::of(optim.tol);
    let half = T::of(0.5);
    let c1 = T::of(1e-4);

    for _ in 0..optim.max_epochs {
        let gg: T = g.iter().map(|&v| v * v).sum();
        if gg == T::zero() {
            break;
        }
        let mut fc;
        loop {
            for i in 0..n {
                cand[i] = p[i] - step * g[i];
            }
            fc = obj.value_grad(&cand, &mut gc);
            if fc <= f - c1 * step * gg {
                break;
            }
            step *= half;
            if step < T::of(1e-14) {
                return p;
            }
        }
        std::mem::swap(&mut p, &mut cand);
        std::mem::swap(&mut g, &mut gc);
        let rel = (f - fc).abs() / f.abs().max(T::min_positive_value());
        f = fc;
        if rel < tol {
            break;
        }
        step *= T::of(2.0);
    }
    p
}

pub(crate) fn fit_logistic<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    dim: usize,
    penalty: Penalty,
    c: f64,
    optim: &OptimSettings,
) -> (Vec<T>, T) {
    // C * sum(loss) + R(w)  ==  n*C * [mean(loss) + R(w) / (n*C)]
    let strength = T::of(1.0 / (c * x.len() as f64));
    let params = match penalty {
        Penalty::L2 => {
            let obj = LogisticObjective { x, y, dim, l2: strength };
            proximal_gradient(&obj, dim, T::zero(), optim)
        }
        Penalty::L1 => {
            let obj = LogisticObjective { x, y, dim, l2: T::zero() };
            proximal_gradient(&obj, dim, strength, optim)
        }
    };
    let bias = params[dim];
    (params[..dim].to_vec(), bias)
}

pub(crate) fn fit_linear_svm<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    dim: usize,
    c: f64,
    optim: &OptimSettings,
) -> (Vec<T>, T) {
    let obj = HingeObjective {
        x,
        y,
        dim,
        l2: T::of(1.0 / (c * x.len() as f64)),
    };
    let params = subgradient_descent(&obj, optim);
    let bias = params[dim];
    (params[..dim].to_vec(), bias)
}

/// Derivative of the modified Huber loss with respect to the margin `p`.
fn modified_huber_dloss(p: f64, y: f64) -> f64 {
    let z = p * y;
    if z >= 1.0 {
        0.0
    } else if z >= -1.0 {
        -2.0 * (1.0 - z) * y
    } else {
        -4.0 * y
    }
}

fn modified_huber_loss(p: f64, y: f64) -> f64 {
    let z = p * y;
    if z >= 1.0 {
        0.0
    } else if z >= -1.0 {
        (1.0 - z) * (1.0 - z)
    } else {
        -4.0 * z
    }
}

const SGD_MAX_EPOCHS: usize = 1000;
const SGD_TOL: f64 = 1e-3;
const SGD_NO_CHANGE: usize = 5;

/// Per-sample SGD on the modified Huber loss with the "optimal" schedule
/// `eta_t = 1 / (alpha * (t0 + t))`. L2 uses a lazily applied weight scale;
/// L1 uses cumulative-penalty truncation.
pub(crate) fn fit_sgd_modified_huber<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    dim: usize,
    penalty: Penalty,
    alpha: f64,
    seed: u64,
) -> (Vec<T>, T) {
    let n = x.len();
    let mut v = vec![0.0f64; dim];
    let mut wscale = 1.0f64;
    let mut bias = 0.0f64;
    // L1 bookkeeping
    let mut u = 0.0f64;
    let mut q = vec![0.0f64; dim];

    let typw = (1.0 / alpha.sqrt()).sqrt();
    let eta0 = typw / modified_huber_dloss(-typw, 1.0).abs().max(1.0);
    let t0 = 1.0 / (eta0 * alpha);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 1.0f64;
    let mut best_loss = f64::INFINITY;
    let mut no_improve = 0;

    for _ in 0..SGD_MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let xi = &x[i];
            let yi = if y[i] == 1 { 1.0 } else { -1.0 };
            let eta = 1.0 / (alpha * (t0 + t - 1.0));
            let p = wscale * xi.iter().map(|(j, val)| v[j] * val.as_f64()).sum::<f64>() + bias;
            epoch_loss += modified_huber_loss(p, yi);
            let d = modified_huber_dloss(p, yi);
            match penalty {
                Penalty::L2 => {
                    wscale *= (1.0 - eta * alpha).max(1e-9);
                    if wscale < 1e-9 {
                        v.iter_mut().for_each(|w| *w *= wscale);
                        wscale = 1.0;
                    }
                }
                Penalty::L1 => {}
            }
            if d != 0.0 {
                for (j, val) in xi.iter() {
                    v[j] -= eta * d * val.as_f64() / wscale;
                }
                bias -= eta * d;
            }
            if penalty == Penalty::L1 {
                u += eta * alpha;
                for (j, _) in xi.iter() {
                    let z = v[j];
                    if v[j] > 0.0 {
                        v[j] = (v[j] - (u + q[j])).max(0.0);
                    } else if v[j] < 0.0 {
                        v[j] = (v[j] + (u - q[j])).min(0.0);
                    }
                    q[j] += v[j] - z;
                }
            }
            t += 1.0;
        }
        if epoch_loss > best_loss - SGD_TOL * n as f64 {
            no_improve += 1;
        } else {
            no_improve = 0;
        }
        best_loss = best_loss.min(epoch_loss);
        if no_improve >= SGD_NO_CHANGE {
            break;
        }
    }
    let w = v.iter().map(|&w| T::of(w * wscale)).collect();
    (w, T::of(bias))
}
