//! Reconstruction, utilization, convergence-speed, and map-quality metrics.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::error::{KvqError, Result};
use crate::grid::GridTopology;

/// Per-code usage counts within a batch.
#[derive(Debug, Clone)]
pub struct UsageHistogram {
    pub counts: Vec<u64>,
}

impl UsageHistogram {
    pub fn from_winners(winners: &[usize], k: usize) -> Self {
        let mut counts = vec![0u64; k];
        for &w in winners {
            counts[w] += 1;
        }
        UsageHistogram { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// exp of the entropy of usage frequencies; K for uniform usage, 1 for collapse.
pub fn perplexity(h: &UsageHistogram) -> Result<f64> {
    let total = h.total();
    if total == 0 {
        return Err(KvqError::Undefined("perplexity of an empty histogram".into()));
    }
    let total = total as f64;
    let entropy: f64 = h
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Fraction of codes used at least once.
pub fn utilization(h: &UsageHistogram) -> Result<f64> {
    if h.total() == 0 {
        return Err(KvqError::Undefined("utilization of an empty histogram".into()));
    }
    let used = h.counts.iter().filter(|&&c| c > 0).count();
    Ok(used as f64 / h.counts.len() as f64)
}

/// Step at which the (optionally smoothed) trace enters `margin` of its final
/// value and stays there; `None` when the trace never settles (i.e. the final
/// smoothed point itself is above the bound, which cannot happen, so only for
/// empty traces). A transient dip below the band does not count as reaching
/// the final performance.
pub fn steps_to_threshold(trace: &[(u64, f64)], margin: f64, window: usize) -> Option<u64> {
    if trace.is_empty() {
        return None;
    }
    let window = window.max(1);
    let smoothed: Vec<f64> = (0..trace.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            let s: f64 = trace[lo..=i].iter().map(|&(_, v)| v).sum();
            s / (i - lo + 1) as f64
        })
        .collect();
    let bound = (1.0 + margin) * smoothed[smoothed.len() - 1];
    // first index after the last excursion above the band
    let mut idx = 0;
    for (i, &v) in smoothed.iter().enumerate() {
        if v > bound {
            idx = i + 1;
        }
    }
    Some(trace[idx.min(trace.len() - 1)].0)
}

/// Fraction of inputs whose best and second-best matching units are not grid
/// neighbours (threshold sqrt 2 for 2D, 1 for 1D).
pub fn topographic_error(data: &[f64], codebook: &Codebook, grid: &GridTopology) -> Result<f64> {
    if codebook.size() < 2 {
        return Err(KvqError::Undefined("topographic error needs K >= 2".into()));
    }
    if grid.size() != codebook.size() {
        return Err(KvqError::Config("grid and codebook disagree on K".into()));
    }
    let dim = codebook.dim();
    if data.is_empty() || data.len() % dim != 0 {
        return Err(KvqError::ShapeMismatch { expected: dim, actual: data.len() % dim });
    }
    let threshold = grid.default_threshold();
    let rows = data.len() / dim;
    let errors = map_rows(data, dim, |row| {
        let (best, second) = codebook.best_two(row)?;
        let d = grid.grid_distance(best, second)?;
        Ok(if d > threshold { 1u64 } else { 0 })
    })?;
    Ok(errors.iter().sum::<u64>() as f64 / rows as f64)
}

/// Mean squared euclidean distance from each input to its winning prototype.
pub fn quantization_error(data: &[f64], codebook: &Codebook) -> Result<f64> {
    let dim = codebook.dim();
    if data.is_empty() || data.len() % dim != 0 {
        return Err(KvqError::ShapeMismatch { expected: dim, actual: data.len() % dim });
    }
    let rows = data.len() / dim;
    let dists = map_rows(data, dim, |row| {
        let k = codebook.best_matching_unit(row)?;
        let w = codebook.prototype(k)?;
        Ok(row.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    })?;
    Ok(dists.iter().sum::<f64>() / rows as f64)
}

#[cfg(feature = "parallel")]
fn map_rows<T, F>(data: &[f64], dim: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<T> + Sync,
{
    data.par_chunks_exact(dim).map(|row| f(row)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rows<T, F>(data: &[f64], dim: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(&[f64]) -> Result<T>,
{
    data.chunks_exact(dim).map(|row| f(row)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Metric;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perplexity_uniform_single_and_pair() {
        let uniform = UsageHistogram { counts: vec![3; 16] };
        assert!((perplexity(&uniform).unwrap() - 16.0).abs() < 1e-12);
        let single = UsageHistogram { counts: vec![0, 7, 0] };
        assert!((perplexity(&single).unwrap() - 1.0).abs() < 1e-12);
        let pair = UsageHistogram { counts: vec![5, 5, 0, 0] };
        assert!((perplexity(&pair).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_empty_is_undefined() {
        let h = UsageHistogram { counts: vec![0; 4] };
        assert!(perplexity(&h).is_err());
    }

    #[test]
    fn utilization_cases() {
        assert_eq!(utilization(&UsageHistogram { counts: vec![1; 8] }).unwrap(), 1.0);
        let mut counts = vec![0u64; 512];
        counts[9] = 3;
        assert!((utilization(&UsageHistogram { counts }).unwrap() - 1.0 / 512.0).abs() < 1e-15);
        assert_eq!(
            utilization(&UsageHistogram { counts: vec![3, 0, 1, 0] }).unwrap(),
            0.5
        );
    }

    #[test]
    fn perplexity_bounded_by_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..10).map(|_| rng.gen_range(0..20)).collect();
            if counts.iter().sum::<u64>() == 0 {
                continue;
            }
            let p = perplexity(&UsageHistogram { counts }).unwrap();
            assert!((1.0 - 1e-12..=10.0 + 1e-9).contains(&p));
        }
    }

    #[test]
    fn steps_to_threshold_hand_cases() {
        // monotone decreasing
        let trace: Vec<(u64, f64)> = vec![(0, 10.0), (1, 2.0), (2, 1.05), (3, 1.0)];
        assert_eq!(steps_to_threshold(&trace, 0.10, 1), Some(2));
        // constant trace
        let flat: Vec<(u64, f64)> = (0..5).map(|i| (i, 3.0)).collect();
        assert_eq!(steps_to_threshold(&flat, 0.10, 1), Some(0));
        // never reached (bound below all smoothed values cannot happen for
        // margin >= 0 since the final point always qualifies)
        assert_eq!(steps_to_threshold(&[], 0.10, 1), None);
        // a transient dip into the band does not count: the trace must stay
        // within the margin from the reported step onward
        let bounce: Vec<(u64, f64)> = vec![(0, 10.0), (1, 1.0), (2, 5.0), (3, 1.05), (4, 1.0)];
        assert_eq!(steps_to_threshold(&bounce, 0.10, 1), Some(3));
    }

    #[test]
    fn topographic_error_ordered_line_is_zero() {
        let grid = GridTopology::line(8).unwrap();
        let weights: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let cb = Codebook::from_weights(weights, 8, 1, Metric::Euclidean).unwrap();
        let data: Vec<f64> = (0..100).map(|i| i as f64 * 0.07).collect();
        assert_eq!(topographic_error(&data, &cb, &grid).unwrap(), 0.0);
    }

    #[test]
    fn topographic_error_k2_always_zero() {
        let grid = GridTopology::line(2).unwrap();
        let cb = Codebook::from_weights(vec![0.0, 1.0], 2, 1, Metric::Euclidean).unwrap();
        let data = vec![-3.0, 0.2, 0.9, 5.0];
        assert_eq!(topographic_error(&data, &cb, &grid).unwrap(), 0.0);
    }

    #[test]
    fn topographic_error_permuted_near_neighbor_fraction() {
        // ordered 1D codebook, then randomly permuted: error should sit near
        // 1 - (mean neighbour count)/(K-1)
        let grid = GridTopology::line(32).unwrap();
        let ordered: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let data: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.0157) % 31.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let mut perm: Vec<usize> = (0..32).collect();
            for i in (1..32).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let weights: Vec<f64> = perm.iter().map(|&p| ordered[p]).collect();
            let cb = Codebook::from_weights(weights, 32, 1, Metric::Euclidean).unwrap();
            acc += topographic_error(&data, &cb, &grid).unwrap();
        }
        let mean = acc / trials as f64;
        // mean neighbour count on a 32-line is (2*30 + 2)/32 ~ 1.94, so the
        // expected neighbour fraction is ~1.94/31 ~ 0.0625
        assert!((mean - (1.0 - 0.0625)).abs() < 0.05, "mean permuted error {mean}");
    }

    #[test]
    fn topographic_error_translation_invariant() {
        let grid = GridTopology::rect(4, 4).unwrap();
        let cb = Codebook::init_gaussian(16, 2, 3, Metric::Euclidean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> =
            (0..50 * 2).map(|_| crate::codebook::standard_normal(&mut rng)).collect();
        let e0 = topographic_error(&data, &cb, &grid).unwrap();
        let shifted: Vec<f64> = cb.weights().iter().map(|w| w + 4.25).collect();
        let cb2 = Codebook::from_weights(shifted, 16, 2, Metric::Euclidean).unwrap();
        let data2: Vec<f64> = data.iter().map(|v| v + 4.25).collect();
        assert_eq!(e0, topographic_error(&data2, &cb2, &grid).unwrap());
    }

    #[test]
    fn quantization_error_basics() {
        let cb = Codebook::from_weights(vec![0.0, 0.0, 1.0, 1.0], 2, 2, Metric::Euclidean).unwrap();
        // points exactly on prototypes
        assert_eq!(quantization_error(&[0.0, 0.0, 1.0, 1.0], &cb).unwrap(), 0.0);

        // single prototype at the data mean: qerr equals trace of covariance
        let data = vec![-1.0, 0.0, 1.0, 0.0, 0.0, -2.0, 0.0, 2.0];
        let cb1 = Codebook::from_weights(vec![0.0, 0.0], 1, 2, Metric::Euclidean).unwrap();
        let variance = (1.0 + 1.0 + 4.0 + 4.0) / 4.0;
        assert!((quantization_error(&data, &cb1).unwrap() - variance).abs() < 1e-12);
    }

    #[test]
    fn quantization_error_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cb = Codebook::init_gaussian(8, 3, 9, Metric::Euclidean).unwrap();
        let data: Vec<f64> =
            (0..40 * 3).map(|_| crate::codebook::standard_normal(&mut rng)).collect();
        let got = quantization_error(&data, &cb).unwrap();
        let mut acc = 0.0;
        for row in data.chunks(3) {
            let mut best = f64::INFINITY;
            for k in 0..8 {
                let w = cb.prototype(k).unwrap();
                let d: f64 = row.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d);
            }
            acc += best;
        }
        assert!((got - acc / 40.0).abs() < 1e-12);
    }

    #[test]
    fn lloyd_step_does_not_increase_quantization_error() {
        use crate::neighborhood::NeighborhoodSchedule;
        use crate::quantizer::{EmaParams, Quantizer};
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data: Vec<f64> =
            (0..100 * 2).map(|_| crate::codebook::standard_normal(&mut rng)).collect();
        let cb = Codebook::init_gaussian(6, 2, 19, Metric::Euclidean).unwrap();
        let before = quantization_error(&data, &cb).unwrap();
        let mut q =
            Quantizer::new(cb, NeighborhoodSchedule::identity(6), EmaParams::default()).unwrap();
        q.batch_ksom_step(&data).unwrap();
        let after = quantization_error(&data, q.codebook()).unwrap();
        assert!(after <= before + 1e-12);
    }
}
