//! Fully connected network with a single sigmoid output, trained on mean log
//! loss plus an L2 weight penalty with minibatch Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Objective, OptimSettings};
use crate::featurize::FeatureVector;
use crate::scalar::{sigmoid, softplus, Real};

const BATCH_SIZE: usize = 200;
const LEARNING_RATE: f64 = 1e-3;
const PATIENCE: usize = 10;

/// Layer `l` occupies `sizes[l] * sizes[l+1]` input-major weights followed by
/// `sizes[l+1]` biases in `params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<T>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0];
    for w in sizes.windows(2) {
        let last = *offsets.last().unwrap();
        offsets.push(last + w[0] * w[1] + w[1]);
    }
    offsets
}

#[inline]
fn activate<T: Real>(a: Activation, z: T) -> T {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(T::zero()),
    }
}

/// Derivative expressed through the activated value.
#[inline]
fn activate_deriv<T: Real>(a: Activation, out: T) -> T {
    match a {
        Activation::Tanh => T::one() - out * out,
        Activation::Relu => {
            if out > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Forward pass. `hidden[l]` receives the activated output of hidden layer `l`.
/// Returns the output logit.
fn forward<T: Real>(
    sizes: &[usize],
    offsets: &[usize],
    act: Activation,
    params: &[T],
    x: &FeatureVector<T>,
    hidden: &mut [Vec<T>],
) -> T {
    let n_layers = sizes.len() - 1;
    let mut logit = T::zero();
    for l in 0..n_layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params[offsets[l]..offsets[l] + n_in * n_out];
        let b = &params[offsets[l] + n_in * n_out..offsets[l + 1]];
        let mut z = b.to_vec();
        if l == 0 {
            for (i, v) in x.iter() {
                let row = &w[i * n_out..(i + 1) * n_out];
                z.iter_mut().zip(row).for_each(|(zo, &wo)| *zo += v * wo);
            }
        } else {
            for (i, &v) in hidden[l - 1].iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                let row = &w[i * n_out..(i + 1) * n_out];
                z.iter_mut().zip(row).for_each(|(zo, &wo)| *zo += v * wo);
            }
        }
        if l + 1 == n_layers {
            logit = z[0];
        } else {
            for zo in z.iter_mut() {
                *zo = activate(act, *zo);
            }
            hidden[l] = z;
        }
    }
    logit
}

impl<T: Real> Mlp<T> {
    pub fn score(&self, x: &FeatureVector<T>) -> T {
        let offsets = layer_offsets(&self.sizes);
        let mut hidden = vec![Vec::new(); self.sizes.len() - 2];
        sigmoid(forward(&self.sizes, &offsets, self.activation, &self.params, x, &mut hidden))
    }
}

/// Mean log loss over the samples plus `alpha / (2 n) * sum(W^2)` (biases
/// unpenalized).
pub struct MlpObjective<'a, T> {
    pub x: &'a [FeatureVector<T>],
    pub y: &'a [u8],
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub alpha: T,
}

impl<'a, T: Real> MlpObjective<'a, T> {
    pub fn new(
        x: &'a [FeatureVector<T>],
        y: &'a [u8],
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        alpha: T,
    ) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            x,
            y,
            sizes,
            activation,
            alpha,
        }
    }

    fn loss_grad_on(&self, params: &[T], rows: &[usize], grad: &mut [T]) -> T {
        let sizes = &self.sizes;
        let offsets = layer_offsets(sizes);
        let n_layers = sizes.len() - 1;
        let n_hidden = n_layers - 1;
        grad.iter_mut().for_each(|g| *g = T::zero());
        let mut hidden = vec![Vec::new(); n_hidden];
        let mut loss = T::zero();

        for &r in rows {
            let x = &self.x[r];
            let y = T::of_usize(self.y[r] as usize);
            let z = forward(sizes, &offsets, self.activation, params, x, &mut hidden);
            loss += softplus(z) - y * z;

            let mut delta = vec![sigmoid(z) - y];
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (sizes[l], sizes[l + 1]);
                let w_off = offsets[l];
                let b_off = w_off + n_in * n_out;
                for o in 0..n_out {
                    grad[b_off + o] += delta[o];
                }
                if l == 0 {
                    for (i, v) in x.iter() {
                        let g = &mut grad[w_off + i * n_out..w_off + (i + 1) * n_out];
                        g.iter_mut().zip(&delta).for_each(|(gi, &d)| *gi += v * d);
                    }
                } else {
                    let input = &hidden[l - 1];
                    let mut prev = vec![T::zero(); n_in];
                    for i in 0..n_in {
                        let row = w_off + i * n_out;
                        let mut back = T::zero();
                        for o in 0..n_out {
                            grad[row + o] += input[i] * delta[o];
                            back += params[row + o] * delta[o];
                        }
                        prev[i] = back * activate_deriv(self.activation, input[i]);
                    }
                    delta = prev;
                }
            }
        }

        let inv_n = T::one() / T::of_usize(rows.len());
        grad.iter_mut().for_each(|g| *g *= inv_n);
        let mut reg = T::zero();
        let coef = self.alpha * inv_n;
        for l in 0..n_layers {
            let w_off = offsets[l];
            for k in w_off..w_off + sizes[l] * sizes[l + 1] {
                reg += params[k] * params[k];
                grad[k] += coef * params[k];
            }
        }
        loss * inv_n + coef * T::of(0.5) * reg
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<T> {
        let offsets = layer_offsets(&self.sizes);
        let mut p = vec![T::zero(); *offsets.last().unwrap()];
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for k in offsets[l]..offsets[l] + n_in * n_out {
                p[k] = T::of(rng.random_range(-bound..bound));
            }
        }
        p
    }
}

impl<T: Real> Objective<T> for MlpObjective<'_, T> {
    fn n_params(&self) -> usize {
        *layer_offsets(&self.sizes).last().unwrap()
    }

    fn value_grad(&self, params: &[T], grad: &mut [T]) -> T {
        let rows: Vec<usize> = (0..self.x.len()).collect();
        self.loss_grad_on(params, &rows, grad)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_mlp<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    dim: usize,
    hidden: &[usize],
    activation: Activation,
    alpha: f64,
    optim: &OptimSettings,
    seed: u64,
) -> Mlp<T> {
    let obj = MlpObjective::new(x, y, dim, hidden, activation, T::of(alpha));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = obj.init_params(&mut rng);
    let n_params = params.len();
    let mut grad = vec![T::zero(); n_params];
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut t = 0i32;

    let mut order: Vec<usize> = (0..x.len()).collect();
    let batch = BATCH_SIZE.min(x.len());
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..optim.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for rows in order.chunks(batch) {
            let loss = obj.loss_grad_on(&params, rows, &mut grad).as_f64();
            epoch_loss += loss * rows.len() as f64;
            t += 1;
            let lr = LEARNING_RATE * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
            for k in 0..n_params {
                let g = grad[k].as_f64();
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                params[k] -= T::of(lr * m[k] / (v[k].sqrt() + eps));
            }
        }
        epoch_loss /= x.len() as f64;
        if !epoch_loss.is_finite() {
            log::warn!("mlp loss diverged; stopping early");
            break;
        }
        if !best.is_finite() || epoch_loss < best - optim.tol * best.abs() {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= PATIENCE {
                break;
            }
        }
    }

    Mlp {
        sizes: obj.sizes.clone(),
        activation,
        params,
    }
}
