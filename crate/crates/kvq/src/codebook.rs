//! Prototype storage and best-matching-unit search.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{KvqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    NegativeDot,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::NegativeDot => "negative-dot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    Gaussian,
    DataSample,
}

/// K prototype vectors of dimension d, stored flat row-major.
#[derive(Debug, Clone)]
pub struct Codebook {
    weights: Vec<f64>,
    k: usize,
    dim: usize,
    metric: Metric,
}

/// Result of assigning a batch of inputs to their best matching units.
#[derive(Debug, Clone)]
pub struct AssignmentBatch {
    pub winners: Vec<usize>,
    /// Per-cluster member index lists, ascending within each cluster.
    pub membership: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
}

impl Codebook {
    pub fn from_weights(weights: Vec<f64>, k: usize, dim: usize, metric: Metric) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(KvqError::Config("codebook needs K >= 1 and d >= 1".into()));
        }
        if weights.len() != k * dim {
            return Err(KvqError::ShapeMismatch { expected: k * dim, actual: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(KvqError::NonFinite { context: "codebook weights".into() });
        }
        Ok(Codebook { weights, k, dim, metric })
    }

    /// Gaussian init: i.i.d. standard normal entries, deterministic in the seed.
    pub fn init_gaussian(k: usize, dim: usize, seed: u64, metric: Metric) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(KvqError::Config("codebook needs K >= 1 and d >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..k * dim).map(|_| standard_normal(&mut rng)).collect();
        Ok(Codebook { weights, k, dim, metric })
    }

    /// Data-sample init: K vectors drawn without replacement from `data` (rows x dim).
    pub fn init_data_sample(
        k: usize,
        dim: usize,
        seed: u64,
        metric: Metric,
        data: &[f64],
    ) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(KvqError::Config("data length is not a multiple of d".into()));
        }
        let rows = data.len() / dim;
        if rows < k {
            return Err(KvqError::Config(format!(
                "data-sample init needs at least K = {k} vectors, got {rows}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<usize> = (0..rows).collect();
        // Fisher-Yates prefix
        let mut weights = Vec::with_capacity(k * dim);
        for i in 0..k {
            let j = rng.gen_range(i..rows);
            pool.swap(i, j);
            weights.extend_from_slice(&data[pool[i] * dim..(pool[i] + 1) * dim]);
        }
        Codebook::from_weights(weights, k, dim, metric)
    }

    pub fn init(
        k: usize,
        dim: usize,
        seed: u64,
        scheme: InitScheme,
        metric: Metric,
        data: Option<&[f64]>,
    ) -> Result<Self> {
        match scheme {
            InitScheme::Gaussian => Codebook::init_gaussian(k, dim, seed, metric),
            InitScheme::DataSample => {
                let data = data.ok_or_else(|| {
                    KvqError::Config("data-sample init requires a data batch".into())
                })?;
                Codebook::init_data_sample(k, dim, seed, metric, data)
            }
        }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn prototype(&self, k: usize) -> Result<&[f64]> {
        if k >= self.k {
            return Err(KvqError::IndexOutOfRange { index: k, k: self.k });
        }
        Ok(&self.weights[k * self.dim..(k + 1) * self.dim])
    }

    fn dissimilarity(&self, x: &[f64], k: usize) -> f64 {
        let w = &self.weights[k * self.dim..(k + 1) * self.dim];
        match self.metric {
            // squared L2: same argmin as L2, cheaper
            Metric::Euclidean => x
                .iter()
                .zip(w)
                .map(|(a, b)| {
                    let d = a - b;
                    d * d
                })
                .sum(),
            Metric::NegativeDot => -x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(KvqError::ShapeMismatch { expected: self.dim, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KvqError::NonFinite { context: "input vector".into() });
        }
        Ok(())
    }

    /// Best matching unit: argmin of the dissimilarity, ties broken to the lowest index.
    pub fn best_matching_unit(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(self.bmu_unchecked(x))
    }

    fn bmu_unchecked(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = self.dissimilarity(x, 0);
        for k in 1..self.k {
            let d = self.dissimilarity(x, k);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Best and second-best matching units (same tie rule, winner excluded).
    pub fn best_two(&self, x: &[f64]) -> Result<(usize, usize)> {
        if self.k < 2 {
            return Err(KvqError::Undefined("second-best unit needs K >= 2".into()));
        }
        self.check_input(x)?;
        let winner = self.bmu_unchecked(x);
        let mut second = usize::MAX;
        let mut second_d = f64::INFINITY;
        for k in 0..self.k {
            if k == winner {
                continue;
            }
            let d = self.dissimilarity(x, k);
            if d < second_d {
                second = k;
                second_d = d;
            }
        }
        Ok((winner, second))
    }

    /// Assign every row of `x` (rows x dim, flat) to its best matching unit.
    pub fn assign_batch(&self, x: &[f64]) -> Result<AssignmentBatch> {
        let winners = self.winners(x)?;
        Ok(self.collate(winners))
    }

    /// Sequential assignment, independent of the `parallel` feature.
    pub fn assign_batch_sequential(&self, x: &[f64]) -> Result<AssignmentBatch> {
        let winners = self.winners_sequential(x)?;
        Ok(self.collate(winners))
    }

    fn validate_batch(&self, x: &[f64]) -> Result<usize> {
        if x.len() % self.dim != 0 {
            return Err(KvqError::ShapeMismatch {
                expected: self.dim,
                actual: x.len() % self.dim,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KvqError::NonFinite { context: "input batch".into() });
        }
        Ok(x.len() / self.dim)
    }

    #[cfg(feature = "parallel")]
    pub fn winners(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.validate_batch(x)?;
        Ok(x.par_chunks_exact(self.dim).map(|row| self.bmu_unchecked(row)).collect())
    }

    #[cfg(not(feature = "parallel"))]
    pub fn winners(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.winners_sequential(x)
    }

    pub fn winners_sequential(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.validate_batch(x)?;
        Ok(x.chunks_exact(self.dim).map(|row| self.bmu_unchecked(row)).collect())
    }

    fn collate(&self, winners: Vec<usize>) -> AssignmentBatch {
        let mut membership = vec![Vec::new(); self.k];
        let mut counts = vec![0usize; self.k];
        for (i, &w) in winners.iter().enumerate() {
            membership[w].push(i);
            counts[w] += 1;
        }
        AssignmentBatch { winners, membership, counts }
    }
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.gen::<f64>();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn gaussian_init_deterministic_and_finite() {
        let a = Codebook::init_gaussian(512, 64, 7, Metric::Euclidean).unwrap();
        let b = Codebook::init_gaussian(512, 64, 7, Metric::Euclidean).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.weights().len(), 512 * 64);
        assert!(a.weights().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn data_sample_init_is_a_permutation_of_the_batch() {
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let cb = Codebook::init_data_sample(4, 3, 1, Metric::Euclidean, &data).unwrap();
        let mut rows: Vec<Vec<f64>> =
            cb.weights().chunks(3).map(|r| r.to_vec()).collect();
        let mut expect: Vec<Vec<f64>> = data.chunks(3).map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, expect);
    }

    #[test]
    fn data_sample_init_too_few_vectors() {
        let data = vec![0.0; 6];
        assert!(matches!(
            Codebook::init_data_sample(4, 3, 1, Metric::Euclidean, &data),
            Err(KvqError::Config(_))
        ));
    }

    #[test]
    fn bmu_nearest_and_tie_break() {
        let cb =
            Codebook::from_weights(vec![0.0, 0.0, 1.0, 0.0], 2, 2, Metric::Euclidean).unwrap();
        assert_eq!(cb.best_matching_unit(&[0.9, 0.0]).unwrap(), 1);
        // equidistant: lowest index wins
        assert_eq!(cb.best_matching_unit(&[0.5, 0.0]).unwrap(), 0);
    }

    #[test]
    fn bmu_negative_dot() {
        let cb =
            Codebook::from_weights(vec![1.0, 0.0, 0.0, 2.0], 2, 2, Metric::NegativeDot).unwrap();
        assert_eq!(cb.best_matching_unit(&[1.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn bmu_dimension_mismatch() {
        let cb = Codebook::init_gaussian(4, 3, 0, Metric::Euclidean).unwrap();
        assert!(matches!(
            cb.best_matching_unit(&[0.0, 0.0]),
            Err(KvqError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn assign_batch_matches_bruteforce() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cb = Codebook::init_gaussian(8, 4, 11, Metric::Euclidean).unwrap();
        let batch: Vec<f64> = (0..64 * 4).map(|_| standard_normal(&mut rng)).collect();
        let a = cb.assign_batch(&batch).unwrap();
        assert_eq!(a.counts.iter().sum::<usize>(), 64);
        for (i, row) in batch.chunks(4).enumerate() {
            // brute-force scan oracle
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..8 {
                let w = cb.prototype(k).unwrap();
                let d: f64 = row.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            assert_eq!(a.winners[i], best);
            assert!(a.membership[best].contains(&i));
        }
    }

    #[test]
    fn empty_batch_is_valid() {
        let cb = Codebook::init_gaussian(4, 3, 0, Metric::Euclidean).unwrap();
        let a = cb.assign_batch(&[]).unwrap();
        assert!(a.winners.is_empty());
        assert_eq!(a.counts, vec![0; 4]);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cb = Codebook::init_gaussian(16, 6, 5, Metric::Euclidean).unwrap();
        let batch: Vec<f64> = (0..200 * 6).map(|_| standard_normal(&mut rng)).collect();
        let a = cb.assign_batch(&batch).unwrap();
        let b = cb.assign_batch_sequential(&batch).unwrap();
        assert_eq!(a.winners, b.winners);
        assert_eq!(a.counts, b.counts);
    }

    proptest! {
        // translation invariance of the euclidean argmin
        #[test]
        fn euclidean_winner_translation_invariant(
            seed in 0u64..1000, shift in -5.0f64..5.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cb = Codebook::init_gaussian(8, 3, seed, Metric::Euclidean).unwrap();
            let x: Vec<f64> = (0..3).map(|_| standard_normal(&mut rng)).collect();
            let w0 = cb.best_matching_unit(&x).unwrap();
            let shifted_weights: Vec<f64> = cb.weights().iter().map(|w| w + shift).collect();
            let cb2 = Codebook::from_weights(shifted_weights, 8, 3, Metric::Euclidean).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            prop_assert_eq!(w0, cb2.best_matching_unit(&xs).unwrap());
        }
    }
}
