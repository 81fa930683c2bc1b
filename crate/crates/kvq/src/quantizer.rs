//! Codebook learning rules: online KSOM, its Hebbian matrix form, batch KSOM,
//! EMA-VQ, and mini-batch EMA-KSOM.
//!
//! All rules share one stepping discipline: assignments are computed against
//! the pre-update codebook for the whole batch, then every EMA / weight
//! update is applied atomically. Per-cluster sums accumulate in ascending
//! input order so reduction equivalences can be checked bit-exactly.

use crate::codebook::{Codebook, Metric};
use crate::error::{KvqError, Result};
use crate::neighborhood::NeighborhoodSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    EmaVq,
    KsomOnline,
    KsomBatch,
    KsomMinibatch,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::EmaVq => "ema-vq",
            Algorithm::KsomOnline => "ksom-online",
            Algorithm::KsomBatch => "ksom-batch",
            Algorithm::KsomMinibatch => "ksom-minibatch",
        }
    }
}

/// EMA / learning-rate knobs shared by all algorithms.
#[derive(Debug, Clone, Copy)]
pub struct EmaParams {
    /// Initial value of every count EMA, 0 or 1.
    pub n_init: u8,
    /// Whether clusters with zero (weighted) members still decay.
    pub update_empty: bool,
    /// Additive smoothing constant for the count quotient.
    pub epsilon: f64,
    /// KSOM learning rate and EMA mixing weight (decay = 1 - beta).
    pub beta: f64,
}

impl Default for EmaParams {
    fn default() -> Self {
        EmaParams { n_init: 1, update_empty: true, epsilon: 1e-5, beta: 0.01 }
    }
}

impl EmaParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_init > 1 {
            return Err(KvqError::Config("n-init must be 0 or 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(KvqError::Config("epsilon must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(KvqError::Config("beta must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-cluster EMA accumulators: m_k (weighted input sums) and N_k (weighted counts).
#[derive(Debug, Clone)]
pub struct EmaState {
    pub m: Vec<f64>,
    pub n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Quantizer {
    codebook: Codebook,
    schedule: NeighborhoodSchedule,
    params: EmaParams,
    ema: EmaState,
    t: u64,
}

impl Quantizer {
    pub fn new(
        codebook: Codebook,
        schedule: NeighborhoodSchedule,
        params: EmaParams,
    ) -> Result<Self> {
        params.validate()?;
        if schedule.grid().size() != codebook.size() {
            return Err(KvqError::Config(format!(
                "grid size {} does not match codebook size {}",
                schedule.grid().size(),
                codebook.size()
            )));
        }
        let mut q = Quantizer {
            ema: EmaState { m: Vec::new(), n: Vec::new() },
            codebook,
            schedule,
            params,
            t: 0,
        };
        q.reset_counters();
        Ok(q)
    }

    /// Reset t to 0 and re-seed the EMAs from the current codebook:
    /// m_k = w_k, N_k = n_init. With n_init = 1 the initial quotient
    /// reproduces w_k exactly.
    pub fn reset_counters(&mut self) {
        self.t = 0;
        self.ema.m = self.codebook.weights().to_vec();
        self.ema.n = vec![self.params.n_init as f64; self.codebook.size()];
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_mut(&mut self) -> &mut Codebook {
        &mut self.codebook
    }

    pub fn schedule(&self) -> &NeighborhoodSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &EmaParams {
        &self.params
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Smoothed counts for the quotient: (N_k + eps) * S / (S + K * eps)
    /// with S the total count mass. Never written back to the state.
    pub fn smoothed_counts(&self) -> Vec<f64> {
        let k = self.codebook.size();
        let total: f64 = self.ema.n.iter().sum();
        let eps = self.params.epsilon;
        let scale = total / (total + k as f64 * eps);
        self.ema.n.iter().map(|n| (n + eps) * scale).collect()
    }

    /// One online KSOM update (Kohonen's rule) for a single input.
    pub fn online_ksom_step(&mut self, x: &[f64]) -> Result<()> {
        let winner = self.codebook.best_matching_unit(x)?;
        let beta = self.params.beta;
        let dim = self.codebook.dim();
        for k in 0..self.codebook.size() {
            let coeff = self.schedule.coefficient(winner, k, self.t)?;
            if coeff == 0.0 {
                continue;
            }
            let scale = beta * coeff;
            let w = &mut self.codebook.weights_mut()[k * dim..(k + 1) * dim];
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += scale * (xi - *wi);
            }
        }
        self.t += 1;
        Ok(())
    }

    /// The Hebbian matrix form: y = hardmax(W x), then
    /// W += (beta A y) outer (x - W^T y). Requires the negative-dot metric,
    /// since hardmax(Wx) is not the euclidean winner.
    pub fn matrix_form_step(&mut self, x: &[f64]) -> Result<()> {
        if self.codebook.metric() != Metric::NegativeDot {
            return Err(KvqError::Config(
                "matrix-form step requires the negative-dot metric".into(),
            ));
        }
        let dim = self.codebook.dim();
        if x.len() != dim {
            return Err(KvqError::ShapeMismatch { expected: dim, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KvqError::NonFinite { context: "input vector".into() });
        }
        // y = hardmax(W x): largest dot product, ties to the lowest index
        let mut winner = 0;
        let mut best = f64::NEG_INFINITY;
        for k in 0..self.codebook.size() {
            let dot: f64 =
                self.codebook.weights()[k * dim..(k + 1) * dim].iter().zip(x).map(|(w, v)| w * v).sum();
            if dot > best {
                winner = k;
                best = dot;
            }
        }
        // W^T y is the winner's prototype
        let wstar: Vec<f64> = self.codebook.weights()[winner * dim..(winner + 1) * dim].to_vec();
        let beta = self.params.beta;
        for k in 0..self.codebook.size() {
            // (A y)_k = A_{k, k*}
            let coeff = self.schedule.coefficient(k, winner, self.t)?;
            if coeff == 0.0 {
                continue;
            }
            let scale = beta * coeff;
            let w = &mut self.codebook.weights_mut()[k * dim..(k + 1) * dim];
            for i in 0..dim {
                w[i] += scale * (x[i] - wstar[i]);
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Per-cluster raw sums and counts, members accumulated in ascending
    /// input order.
    fn cluster_sums(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let dim = self.codebook.dim();
        let a = self.codebook.assign_batch(x)?;
        let k = self.codebook.size();
        let mut sums = vec![0.0; k * dim];
        for (i, &w) in a.winners.iter().enumerate() {
            let row = &x[i * dim..(i + 1) * dim];
            let s = &mut sums[w * dim..(w + 1) * dim];
            for (si, xi) in s.iter_mut().zip(row) {
                *si += xi;
            }
        }
        Ok((sums, a.counts))
    }

    /// One full-dataset batch KSOM update. With the identity schedule this is
    /// exactly one Lloyd iteration of K-means; clusters whose weighted count
    /// is zero keep their previous prototype.
    pub fn batch_ksom_step(&mut self, x: &[f64]) -> Result<()> {
        if x.is_empty() {
            return Err(KvqError::Config("batch KSOM needs a nonempty dataset".into()));
        }
        let dim = self.codebook.dim();
        let k = self.codebook.size();
        let (sums, counts) = self.cluster_sums(x)?;
        let mut m = vec![0.0; k * dim];
        let mut n = vec![0.0; k];
        for target in 0..k {
            for j in 0..k {
                if counts[j] == 0 {
                    continue;
                }
                let coeff = self.schedule.coefficient(j, target, self.t)?;
                if coeff == 0.0 {
                    continue;
                }
                let src = &sums[j * dim..(j + 1) * dim];
                let dst = &mut m[target * dim..(target + 1) * dim];
                for (di, si) in dst.iter_mut().zip(src) {
                    *di += coeff * si;
                }
                n[target] += coeff * counts[j] as f64;
            }
        }
        for target in 0..k {
            if n[target] > 0.0 {
                let w = &mut self.codebook.weights_mut()[target * dim..(target + 1) * dim];
                for (wi, mi) in w.iter_mut().zip(&m[target * dim..(target + 1) * dim]) {
                    *wi = mi / n[target];
                }
            }
        }
        self.t += 1;
        Ok(())
    }

    /// One EMA-VQ update on a batch of encoder outputs. Requires the identity
    /// schedule; a cluster is empty when it has no members in the batch.
    pub fn ema_vq_step(&mut self, e: &[f64]) -> Result<()> {
        if !self.schedule.is_identity() {
            return Err(KvqError::Config("ema-vq requires the identity schedule".into()));
        }
        if e.is_empty() {
            return Err(KvqError::Config("ema-vq needs a nonempty batch".into()));
        }
        let dim = self.codebook.dim();
        let k = self.codebook.size();
        let beta = self.params.beta;
        let decay = 1.0 - beta;
        let (sums, counts) = self.cluster_sums(e)?;
        let mut updated = vec![false; k];
        for c in 0..k {
            if counts[c] == 0 && !self.params.update_empty {
                continue;
            }
            updated[c] = true;
            let s = &sums[c * dim..(c + 1) * dim];
            let m = &mut self.ema.m[c * dim..(c + 1) * dim];
            for (mi, si) in m.iter_mut().zip(s) {
                *mi = decay * *mi + beta * si;
            }
            self.ema.n[c] = decay * self.ema.n[c] + beta * counts[c] as f64;
        }
        self.write_quotients(&updated);
        self.t += 1;
        Ok(())
    }

    /// One mini-batch EMA-KSOM update: EMAs of neighbourhood-weighted sums
    /// and counts. A cluster is empty when its weighted count contribution
    /// is zero, so a populated neighbour keeps it alive.
    pub fn minibatch_ksom_step(&mut self, e: &[f64]) -> Result<()> {
        if e.is_empty() {
            return Err(KvqError::Config("mini-batch KSOM needs a nonempty batch".into()));
        }
        let dim = self.codebook.dim();
        let k = self.codebook.size();
        let beta = self.params.beta;
        let decay = 1.0 - beta;
        let (sums, counts) = self.cluster_sums(e)?;
        let mut wsums = vec![0.0; k * dim];
        let mut wcounts = vec![0.0; k];
        for target in 0..k {
            for j in 0..k {
                if counts[j] == 0 {
                    continue;
                }
                let coeff = self.schedule.coefficient(j, target, self.t)?;
                if coeff == 0.0 {
                    continue;
                }
                let src = &sums[j * dim..(j + 1) * dim];
                let dst = &mut wsums[target * dim..(target + 1) * dim];
                for (di, si) in dst.iter_mut().zip(src) {
                    *di += coeff * si;
                }
                wcounts[target] += coeff * counts[j] as f64;
            }
        }
        let mut updated = vec![false; k];
        for c in 0..k {
            if wcounts[c] == 0.0 && !self.params.update_empty {
                continue;
            }
            updated[c] = true;
            let s = &wsums[c * dim..(c + 1) * dim];
            let m = &mut self.ema.m[c * dim..(c + 1) * dim];
            for (mi, si) in m.iter_mut().zip(s) {
                *mi = decay * *mi + beta * si;
            }
            self.ema.n[c] = decay * self.ema.n[c] + beta * wcounts[c];
        }
        self.write_quotients(&updated);
        self.t += 1;
        Ok(())
    }

    fn write_quotients(&mut self, updated: &[bool]) {
        let dim = self.codebook.dim();
        let smoothed = self.smoothed_counts();
        for c in 0..self.codebook.size() {
            if !updated[c] {
                continue;
            }
            let denom = smoothed[c];
            let m = &self.ema.m[c * dim..(c + 1) * dim];
            let w = &mut self.codebook.weights_mut()[c * dim..(c + 1) * dim];
            for (wi, mi) in w.iter_mut().zip(m) {
                *wi = mi / denom;
            }
        }
    }

    /// Dispatch one step of the configured algorithm on a batch. Online
    /// algorithms consume the batch one input at a time (one update each).
    pub fn step(&mut self, algorithm: Algorithm, batch: &[f64]) -> Result<()> {
        match algorithm {
            Algorithm::EmaVq => self.ema_vq_step(batch),
            Algorithm::KsomBatch => self.batch_ksom_step(batch),
            Algorithm::KsomMinibatch => self.minibatch_ksom_step(batch),
            Algorithm::KsomOnline => {
                let dim = self.codebook.dim();
                for row in batch.chunks_exact(dim) {
                    self.online_ksom_step(row)?;
                }
                Ok(())
            }
        }
    }
}
