use super::KnnWeights;
use crate::featurize::FeatureVector;
use crate::scalar::Real;

/// Positive fraction among the `k` nearest training points (Euclidean).
/// Distance ties are broken by training order.
pub(crate) fn score<T: Real>(
    points: &[FeatureVector<T>],
    labels: &[u8],
    k: usize,
    weights: KnnWeights,
    x: &FeatureVector<T>,
) -> T {
    let mut d: Vec<(T, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.sq_dist(x), i))
        .collect();
    let k = k.min(d.len()).max(1);
    let by_dist = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by_dist);
        d.truncate(k);
    }
    d.sort_by(by_dist);

    match weights {
        KnnWeights::Uniform => {
            let pos = d.iter().filter(|(_, i)| labels[*i] == 1).count();
            T::of_usize(pos) / T::of_usize(k)
        }
        KnnWeights::Distance => {
            let exact: Vec<usize> = d
                .iter()
                .filter(|(dist, _)| *dist == T::zero())
                .map(|&(_, i)| i)
                .collect();
            if !exact.is_empty() {
                let pos = exact.iter().filter(|&&i| labels[i] == 1).count();
                return T::of_usize(pos) / T::of_usize(exact.len());
            }
            let (mut num, mut den) = (T::zero(), T::zero());
            for (dist, i) in d {
                let w = T::one() / dist.sqrt();
                den += w;
                if labels[i] == 1 {
                    num += w;
                }
            }
            num / den
        }
    }
}
