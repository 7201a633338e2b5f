//! CART decision trees (Gini impurity, exhaustive threshold search) and
//! bagged random forests.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, MaxFeatures};
use crate::featurize::FeatureVector;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<T> {
    Leaf {
        /// Weighted fraction of positive training samples reaching the leaf.
        value: T,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: u32,
        threshold: T,
        left: u32,
        right: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn score(&self, x: &FeatureVector<T>) -> T {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x.get(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

pub(crate) struct TreeOptions {
    pub max_depth: usize,
    pub min_impurity_decrease: f64,
    pub max_features: MaxFeatures,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

struct Builder<'a, T> {
    x: &'a [FeatureVector<T>],
    y: &'a [u8],
    w: &'a [u32],
    dim: usize,
    total_weight: f64,
    opts: &'a TreeOptions,
    rng: ChaCha8Rng,
    buckets: Vec<Vec<(f64, usize)>>,
    candidate: Vec<bool>,
}

#[inline]
fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

impl<T: Real> Builder<'_, T> {
    fn totals(&self, samples: &[usize]) -> (f64, f64) {
        samples.iter().fold((0.0, 0.0), |(w, p), &i| {
            let wi = self.w[i] as f64;
            (w + wi, p + wi * self.y[i] as f64)
        })
    }

    fn best_split(&mut self, samples: &[usize]) -> Option<Candidate> {
        let (weight, pos) = self.totals(samples);
        if pos <= 0.0 || pos >= weight {
            return None;
        }
        let parent = gini(pos, weight);

        let all = self.opts.max_features == MaxFeatures::All;
        if !all {
            let m = ((self.dim as f64).sqrt().floor() as usize).max(1).min(self.dim);
            self.candidate.iter_mut().for_each(|c| *c = false);
            for j in rand::seq::index::sample(&mut self.rng, self.dim, m) {
                self.candidate[j] = true;
            }
        }

        let mut touched = Vec::new();
        for &i in samples {
            for (j, v) in self.x[i].iter() {
                if v == T::zero() || !(all || self.candidate[j]) {
                    continue;
                }
                if self.buckets[j].is_empty() {
                    touched.push(j);
                }
                self.buckets[j].push((v.as_f64(), i));
            }
        }
        touched.sort_unstable();

        let mut best: Option<Candidate> = None;
        let mut items: Vec<(f64, f64, f64)> = Vec::new();
        for &j in &touched {
            items.clear();
            let (mut wnz, mut pnz) = (0.0, 0.0);
            for &(v, i) in &self.buckets[j] {
                let wi = self.w[i] as f64;
                let pi = wi * self.y[i] as f64;
                wnz += wi;
                pnz += pi;
                items.push((v, wi, pi));
            }
            let w0 = weight - wnz;
            if w0 > 0.0 {
                items.push((0.0, w0, pos - pnz));
            }
            items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

            let (mut wl, mut pl) = (0.0, 0.0);
            for k in 0..items.len() - 1 {
                wl += items[k].1;
                pl += items[k].2;
                if items[k + 1].0 <= items[k].0 {
                    continue;
                }
                let wr = weight - wl;
                let pr = pos - pl;
                let child = (wl * gini(pl, wl) + wr * gini(pr, wr)) / weight;
                let decrease = weight / self.total_weight * (parent - child);
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let mut threshold = 0.5 * (items[k].0 + items[k + 1].0);
                    if threshold >= items[k + 1].0 {
                        threshold = items[k].0;
                    }
                    best = Some(Candidate {
                        feature: j,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        for &j in &touched {
            self.buckets[j].clear();
        }
        best.filter(|b| b.decrease > 1e-12 && b.decrease >= self.opts.min_impurity_decrease)
    }

    fn build(mut self, root: Vec<usize>) -> Tree<T> {
        let mut nodes: Vec<Node<T>> = Vec::new();
        // (node slot, samples, depth)
        let mut stack = vec![(0usize, root, 0usize)];
        nodes.push(Node::Leaf { value: T::zero() });
        while let Some((slot, samples, depth)) = stack.pop() {
            let (weight, pos) = self.totals(&samples);
            let leaf = Node::Leaf {
                value: T::of(if weight > 0.0 { pos / weight } else { 0.0 }),
            };
            let split = if depth < self.opts.max_depth {
                self.best_split(&samples)
            } else {
                None
            };
            let Some(split) = split else {
                nodes[slot] = leaf;
                continue;
            };
            let threshold = T::of(split.threshold);
            let (left, right): (Vec<usize>, Vec<usize>) = samples
                .iter()
                .partition(|&&i| self.x[i].get(split.feature) <= threshold);
            let l = nodes.len();
            nodes.push(Node::Leaf { value: T::zero() });
            nodes.push(Node::Leaf { value: T::zero() });
            nodes[slot] = Node::Split {
                feature: split.feature as u32,
                threshold,
                left: l as u32,
                right: (l + 1) as u32,
            };
            // right pushed first so the left subtree is expanded first
            stack.push((l + 1, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
        Tree { nodes }
    }
}

pub(crate) fn build_tree<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    weights: &[u32],
    dim: usize,
    opts: &TreeOptions,
    seed: u64,
) -> Tree<T> {
    let samples: Vec<usize> = (0..x.len()).filter(|&i| weights[i] > 0).collect();
    let total_weight = samples.iter().map(|&i| weights[i] as f64).sum();
    let builder = Builder {
        x,
        y,
        w: weights,
        dim,
        total_weight,
        opts,
        rng: ChaCha8Rng::seed_from_u64(seed),
        buckets: vec![Vec::new(); dim],
        candidate: vec![false; dim],
    };
    builder.build(samples)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_forest<T: Real>(
    x: &[FeatureVector<T>],
    y: &[u8],
    dim: usize,
    n_estimators: usize,
    max_depth: usize,
    bootstrap: bool,
    max_features: MaxFeatures,
    seed: u64,
) -> Vec<Tree<T>> {
    let opts = TreeOptions {
        max_depth,
        min_impurity_decrease: 0.0,
        max_features,
    };
    (0..n_estimators)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(seed, t as u64);
            let mut weights = vec![0u32; x.len()];
            if bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed ^ 0xB007);
                for _ in 0..x.len() {
                    weights[rng.random_range(0..x.len())] += 1;
                }
            } else {
                weights.iter_mut().for_each(|w| *w = 1);
            }
            build_tree(x, y, &weights, dim, &opts, tree_seed)
        })
        .collect()
}
