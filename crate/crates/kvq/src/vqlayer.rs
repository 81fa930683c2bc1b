//! Desk-scale straight-through VQ autoencoder.
//!
//! The input is split into N contiguous patches; a shared 2-layer tanh MLP
//! encodes each patch to an embedding, each embedding is quantised to its
//! best matching prototype, and a mirror MLP decodes back. Gradients are
//! derived by hand; the quantiser is crossed with the straight-through
//! estimator (the gradient at the decoder input is copied, exactly, to the
//! encoder output). The codebook itself receives no gradient: it learns
//! only through the quantizer module.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::{standard_normal, Codebook};
use crate::data::DataSource;
use crate::error::{KvqError, Result};
use crate::grid::GridTopology;
use crate::metrics::{self, UsageHistogram};
use crate::quantizer::{Algorithm, Quantizer};

/// Discrete latent representation: one codebook index per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentCode(pub Vec<usize>);

#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub d_in: usize,
    pub n_latents: usize,
    pub d_hidden: usize,
    pub d_emb: usize,
}

impl ModelShape {
    pub fn d_patch(&self) -> usize {
        self.d_in / self.n_latents
    }
}

#[derive(Debug, Clone)]
pub struct ToyAutoencoder {
    shape: ModelShape,
    /// All weights and biases, flat; see the offset table in `ranges`.
    params: Vec<f64>,
    pub alpha: f64,
    pub learning_rate: f64,
}

/// Offsets of the eight parameter tensors inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Ranges {
    enc_w1: (usize, usize),
    enc_b1: (usize, usize),
    enc_w2: (usize, usize),
    enc_b2: (usize, usize),
    dec_w1: (usize, usize),
    dec_b1: (usize, usize),
    dec_w2: (usize, usize),
    dec_b2: (usize, usize),
    total: usize,
}

fn ranges(s: &ModelShape) -> Ranges {
    let dp = s.d_patch();
    let dh = s.d_hidden;
    let de = s.d_emb;
    let mut off = 0;
    let mut take = |n: usize| {
        let r = (off, off + n);
        off += n;
        r
    };
    let enc_w1 = take(dh * dp);
    let enc_b1 = take(dh);
    let enc_w2 = take(de * dh);
    let enc_b2 = take(de);
    let dec_w1 = take(dh * de);
    let dec_b1 = take(dh);
    let dec_w2 = take(dp * dh);
    let dec_b2 = take(dp);
    Ranges { enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2, total: off }
}

/// y = W x + b for a rows x cols row-major W.
fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut Vec<f64>) {
    y.clear();
    for r in 0..rows {
        let mut acc = b[r];
        let row = &w[r * cols..(r + 1) * cols];
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y.push(acc);
    }
}

/// Result of one forward pass, with caches for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub code: LatentCode,
    pub reconstruction: Vec<f64>,
    pub recon_loss: f64,
    pub commit_loss: f64,
    embeddings: Vec<f64>,
    enc_hidden: Vec<f64>,
    dec_hidden: Vec<f64>,
}

impl ForwardPass {
    pub fn total_loss(&self, alpha: f64) -> f64 {
        self.recon_loss + alpha * self.commit_loss
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Flat gradient aligned with the parameter vector.
    pub grads: Vec<f64>,
    /// Gradient at the decoder input, per patch (N x d_emb).
    pub decoder_input_grads: Vec<f64>,
    /// Reconstruction-term gradient at the encoder output, per patch.
    /// Straight-through: identical to `decoder_input_grads`.
    pub encoder_output_recon_grads: Vec<f64>,
}

impl ToyAutoencoder {
    pub fn new(shape: ModelShape, alpha: f64, learning_rate: f64, seed: u64) -> Result<Self> {
        if shape.d_in == 0
            || shape.n_latents == 0
            || shape.d_hidden == 0
            || shape.d_emb == 0
            || shape.d_in % shape.n_latents != 0
        {
            return Err(KvqError::Config(
                "model shape needs positive dims with n_latents dividing d_in".into(),
            ));
        }
        let r = ranges(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; r.total];
        let dp = shape.d_patch();
        let mut init = |range: (usize, usize), fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for i in range.0..range.1 {
                params[i] = scale * standard_normal(&mut rng);
            }
        };
        init(r.enc_w1, dp);
        init(r.enc_w2, shape.d_hidden);
        init(r.dec_w1, shape.d_emb);
        init(r.dec_w2, shape.d_hidden);
        // biases start at zero
        Ok(ToyAutoencoder { shape, params, alpha, learning_rate })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn param_vector(&self) -> &[f64] {
        &self.params
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(KvqError::ShapeMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn slice(&self, r: (usize, usize)) -> &[f64] {
        &self.params[r.0..r.1]
    }

    /// Encoder outputs for one input: N x d_emb embeddings plus the hidden
    /// activations cache.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.shape.d_in {
            return Err(KvqError::ShapeMismatch { expected: self.shape.d_in, actual: x.len() });
        }
        let r = ranges(&self.shape);
        let dp = self.shape.d_patch();
        let dh = self.shape.d_hidden;
        let de = self.shape.d_emb;
        let mut embeddings = Vec::with_capacity(self.shape.n_latents * de);
        let mut hidden = Vec::with_capacity(self.shape.n_latents * dh);
        let mut pre = Vec::new();
        for patch in x.chunks_exact(dp) {
            affine(self.slice(r.enc_w1), self.slice(r.enc_b1), patch, dh, dp, &mut pre);
            let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            let mut e = Vec::new();
            affine(self.slice(r.enc_w2), self.slice(r.enc_b2), &h, de, dh, &mut e);
            hidden.extend_from_slice(&h);
            embeddings.extend_from_slice(&e);
        }
        Ok((embeddings, hidden))
    }

    /// Decode one embedding row back to a patch, returning the hidden
    /// activations too.
    fn decode_patch(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let r = ranges(&self.shape);
        let dp = self.shape.d_patch();
        let dh = self.shape.d_hidden;
        let de = self.shape.d_emb;
        let mut pre = Vec::new();
        affine(self.slice(r.dec_w1), self.slice(r.dec_b1), q, dh, de, &mut pre);
        let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let mut p = Vec::new();
        affine(self.slice(r.dec_w2), self.slice(r.dec_b2), &h, dp, dh, &mut p);
        (p, h)
    }

    /// Full forward pass with free assignments.
    pub fn forward(&self, x: &[f64], codebook: &Codebook) -> Result<ForwardPass> {
        let (embeddings, _) = self.encode(x)?;
        let winners = codebook.winners_sequential(&embeddings)?;
        self.forward_with_assignments(x, codebook, &winners)
    }

    /// Forward pass with the argmin frozen to the given assignments; the
    /// finite-difference oracle differentiates this.
    pub fn forward_with_assignments(
        &self,
        x: &[f64],
        codebook: &Codebook,
        winners: &[usize],
    ) -> Result<ForwardPass> {
        if winners.len() != self.shape.n_latents {
            return Err(KvqError::ShapeMismatch {
                expected: self.shape.n_latents,
                actual: winners.len(),
            });
        }
        let (embeddings, enc_hidden) = self.encode(x)?;
        let de = self.shape.d_emb;
        if codebook.dim() != de {
            return Err(KvqError::ShapeMismatch { expected: de, actual: codebook.dim() });
        }
        let dp = self.shape.d_patch();
        let n = self.shape.n_latents;
        let mut reconstruction = Vec::with_capacity(self.shape.d_in);
        let mut dec_hidden = Vec::with_capacity(n * self.shape.d_hidden);
        let mut commit = 0.0;
        for (i, &k) in winners.iter().enumerate() {
            let e = &embeddings[i * de..(i + 1) * de];
            let w = codebook.prototype(k)?;
            commit += e.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let (p, h) = self.decode_patch(w);
            reconstruction.extend_from_slice(&p);
            dec_hidden.extend_from_slice(&h);
        }
        let recon_loss: f64 = x
            .iter()
            .zip(&reconstruction)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let commit_loss = commit / n as f64;
        let _ = dp;
        Ok(ForwardPass {
            code: LatentCode(winners.to_vec()),
            reconstruction,
            recon_loss,
            commit_loss,
            embeddings,
            enc_hidden,
            dec_hidden,
        })
    }

    /// Manual backward pass for the total loss of a completed forward pass,
    /// with the straight-through copy feeding the encoder.
    pub fn backward(
        &self,
        x: &[f64],
        codebook: &Codebook,
        fwd: &ForwardPass,
    ) -> Result<BackwardPass> {
        self.backward_impl(x, codebook, fwd, true)
    }

    /// True gradient of the frozen-assignment loss: the encoder sees only the
    /// commitment term. This is what finite differences of
    /// `forward_with_assignments` measure; decoder gradients are identical to
    /// `backward`.
    pub fn backward_frozen(
        &self,
        x: &[f64],
        codebook: &Codebook,
        fwd: &ForwardPass,
    ) -> Result<BackwardPass> {
        self.backward_impl(x, codebook, fwd, false)
    }

    fn backward_impl(
        &self,
        x: &[f64],
        codebook: &Codebook,
        fwd: &ForwardPass,
        straight_through: bool,
    ) -> Result<BackwardPass> {
        let r = ranges(&self.shape);
        let dp = self.shape.d_patch();
        let dh = self.shape.d_hidden;
        let de = self.shape.d_emb;
        let n = self.shape.n_latents;
        let mut grads = vec![0.0; r.total];
        let mut decoder_input_grads = Vec::with_capacity(n * de);
        let mut encoder_output_recon_grads = Vec::with_capacity(n * de);
        for i in 0..n {
            let patch = &x[i * dp..(i + 1) * dp];
            let p_hat = &fwd.reconstruction[i * dp..(i + 1) * dp];
            let h2 = &fwd.dec_hidden[i * dh..(i + 1) * dh];
            let h1 = &fwd.enc_hidden[i * dh..(i + 1) * dh];
            let e = &fwd.embeddings[i * de..(i + 1) * de];
            let q = codebook.prototype(fwd.code.0[i])?;

            // reconstruction term
            let dp_hat: Vec<f64> =
                p_hat.iter().zip(patch).map(|(a, b)| 2.0 * (a - b)).collect();
            for row in 0..dp {
                grads[r.dec_w2.0 + row * dh..r.dec_w2.0 + (row + 1) * dh]
                    .iter_mut()
                    .zip(h2)
                    .for_each(|(g, &hv)| *g += dp_hat[row] * hv);
                grads[r.dec_b2.0 + row] += dp_hat[row];
            }
            // back through decoder tanh
            let mut da2 = vec![0.0; dh];
            for row in 0..dp {
                let wrow = &self.params[r.dec_w2.0 + row * dh..r.dec_w2.0 + (row + 1) * dh];
                for c in 0..dh {
                    da2[c] += wrow[c] * dp_hat[row];
                }
            }
            for c in 0..dh {
                da2[c] *= 1.0 - h2[c] * h2[c];
            }
            for row in 0..dh {
                grads[r.dec_w1.0 + row * de..r.dec_w1.0 + (row + 1) * de]
                    .iter_mut()
                    .zip(q)
                    .for_each(|(g, &qv)| *g += da2[row] * qv);
                grads[r.dec_b1.0 + row] += da2[row];
            }
            // gradient at the decoder input
            let mut dq = vec![0.0; de];
            for row in 0..dh {
                let wrow = &self.params[r.dec_w1.0 + row * de..r.dec_w1.0 + (row + 1) * de];
                for c in 0..de {
                    dq[c] += wrow[c] * da2[row];
                }
            }
            decoder_input_grads.extend_from_slice(&dq);
            encoder_output_recon_grads.extend_from_slice(&dq);

            // straight-through copy plus the commitment term
            let commit_scale = 2.0 * self.alpha / n as f64;
            let de_grad: Vec<f64> = dq
                .iter()
                .zip(e.iter().zip(q))
                .map(|(&g, (&ev, &qv))| {
                    let copied = if straight_through { g } else { 0.0 };
                    copied + commit_scale * (ev - qv)
                })
                .collect();

            // back through the encoder
            for row in 0..de {
                grads[r.enc_w2.0 + row * dh..r.enc_w2.0 + (row + 1) * dh]
                    .iter_mut()
                    .zip(h1)
                    .for_each(|(g, &hv)| *g += de_grad[row] * hv);
                grads[r.enc_b2.0 + row] += de_grad[row];
            }
            let mut da1 = vec![0.0; dh];
            for row in 0..de {
                let wrow = &self.params[r.enc_w2.0 + row * dh..r.enc_w2.0 + (row + 1) * dh];
                for c in 0..dh {
                    da1[c] += wrow[c] * de_grad[row];
                }
            }
            for c in 0..dh {
                da1[c] *= 1.0 - h1[c] * h1[c];
            }
            for row in 0..dh {
                grads[r.enc_w1.0 + row * dp..r.enc_w1.0 + (row + 1) * dp]
                    .iter_mut()
                    .zip(patch)
                    .for_each(|(g, &pv)| *g += da1[row] * pv);
                grads[r.enc_b1.0 + row] += da1[row];
            }
        }
        Ok(BackwardPass { grads, decoder_input_grads, encoder_output_recon_grads })
    }

    /// Decode an explicit latent code without touching the encoder.
    pub fn decode_latent(&self, code: &LatentCode, codebook: &Codebook) -> Result<Vec<f64>> {
        if code.0.len() != self.shape.n_latents {
            return Err(KvqError::ShapeMismatch {
                expected: self.shape.n_latents,
                actual: code.0.len(),
            });
        }
        let mut out = Vec::with_capacity(self.shape.d_in);
        for &k in &code.0 {
            let (p, _) = self.decode_patch(codebook.prototype(k)?);
            out.extend_from_slice(&p);
        }
        Ok(out)
    }
}

/// How a latent offset perturbation moves code indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// Shift grid coordinates by (offset, offset), clamping at the grid
    /// boundary (the KSOM interpretation).
    GridClamp,
    /// Shift the raw index by offset, modulo K (the EMA-VQ interpretation).
    IndexWrap,
}

/// Shift a latent code by an integer offset.
pub fn perturb_code(
    code: &LatentCode,
    offset: i64,
    grid: &GridTopology,
    mode: PerturbMode,
) -> Result<LatentCode> {
    let k = grid.size();
    let mut out = Vec::with_capacity(code.0.len());
    for &idx in &code.0 {
        let new = match mode {
            PerturbMode::IndexWrap => {
                (idx as i64 + offset).rem_euclid(k as i64) as usize
            }
            PerturbMode::GridClamp => {
                let (x, y) = grid.coords(idx)?;
                let (w, h) = grid.extents();
                let nx = (x as i64 + offset).clamp(0, w as i64 - 1) as usize;
                let ny = (y as i64 + offset).clamp(0, h as i64 - 1) as usize;
                grid.index_of(nx, ny)?
            }
        };
        out.push(new);
    }
    Ok(LatentCode(out))
}

/// Decode the constant code (k, ..., k) for every codebook index, in index
/// order; entry k is what the grid node at coords(k) represents.
pub fn decode_grid(model: &ToyAutoencoder, codebook: &Codebook) -> Result<Vec<Vec<f64>>> {
    let n = model.shape().n_latents;
    (0..codebook.size())
        .map(|k| model.decode_latent(&LatentCode(vec![k; n]), codebook))
        .collect()
}

/// One row of a training trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub step: u64,
    pub recon_loss: f64,
    pub commit_loss: f64,
    /// Codebook metrics, present every `eval_interval` steps.
    pub perplexity: Option<f64>,
    pub utilization: Option<f64>,
    pub val_loss: Option<f64>,
    /// Mean squared distance of held-out embeddings to their prototypes.
    pub val_qerr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// (step, val_loss) points, for steps_to_threshold.
    pub fn validation_curve(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.val_loss.map(|v| (r.step, v)))
            .collect()
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.validation_curve().last().map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub steps: u64,
    pub eval_interval: u64,
    /// Batches of held-out data per evaluation.
    pub val_batches: u64,
}

/// Stream id offset separating validation batches from training batches.
const VAL_STREAM_OFFSET: u64 = 1 << 62;

/// Alternate SGD on the encoder/decoder with quantizer steps on the same
/// batch's encoder outputs. Deterministic given the seeds baked into the
/// model, quantizer, and source.
pub fn train(
    model: &mut ToyAutoencoder,
    quantizer: &mut Quantizer,
    algorithm: Algorithm,
    source: &DataSource,
    options: TrainOptions,
) -> Result<Trace> {
    let eval_interval = options.eval_interval.max(1);
    let batch = source.batch_size();
    let dim = source.dim();
    if dim != model.shape().d_in {
        return Err(KvqError::ShapeMismatch { expected: model.shape().d_in, actual: dim });
    }
    let n = model.shape().n_latents;
    let de = model.shape().d_emb;
    let n_params = model.param_vector().len();
    let mut rows = Vec::with_capacity(options.steps as usize);
    for step in 0..options.steps {
        let data = source.batch(step);
        let mut grad_acc = vec![0.0; n_params];
        let mut embeddings = Vec::with_capacity(batch * n * de);
        let mut winners_all = Vec::with_capacity(batch * n);
        let mut recon_loss = 0.0;
        let mut commit_loss = 0.0;
        for x in data.chunks_exact(dim) {
            let fwd = model.forward(x, quantizer.codebook())?;
            let bwd = model.backward(x, quantizer.codebook(), &fwd)?;
            for (a, g) in grad_acc.iter_mut().zip(&bwd.grads) {
                *a += g;
            }
            embeddings.extend_from_slice(fwd.embeddings());
            winners_all.extend_from_slice(&fwd.code.0);
            recon_loss += fwd.recon_loss;
            commit_loss += fwd.commit_loss;
        }
        recon_loss /= batch as f64;
        commit_loss /= batch as f64;
        let total = recon_loss + model.alpha * commit_loss;
        if !total.is_finite() {
            return Err(KvqError::Diverged { step, message: format!("loss = {total}") });
        }
        // SGD on the mean gradient
        let lr = model.learning_rate / batch as f64;
        let params: Vec<f64> = model
            .param_vector()
            .iter()
            .zip(&grad_acc)
            .map(|(p, g)| p - lr * g)
            .collect();
        model.set_param_vector(&params)?;
        // codebook update on this batch's encoder outputs
        quantizer.step(algorithm, &embeddings)?;

        let mut row = TraceRow {
            step,
            recon_loss,
            commit_loss,
            perplexity: None,
            utilization: None,
            val_loss: None,
            val_qerr: None,
        };
        if step % eval_interval == 0 || step + 1 == options.steps {
            let hist = UsageHistogram::from_winners(&winners_all, quantizer.codebook().size());
            row.perplexity = Some(metrics::perplexity(&hist)?);
            row.utilization = Some(metrics::utilization(&hist)?);
            let mut val = 0.0;
            let mut qerr = 0.0;
            let mut count = 0usize;
            for v in 0..options.val_batches.max(1) {
                let vdata = source.batch(VAL_STREAM_OFFSET + v);
                for x in vdata.chunks_exact(dim) {
                    let fwd = model.forward(x, quantizer.codebook())?;
                    val += fwd.total_loss(model.alpha);
                    // commit_loss is the mean squared embedding-to-prototype
                    // distance for this input's latents
                    qerr += fwd.commit_loss;
                    count += 1;
                }
            }
            row.val_loss = Some(val / count as f64);
            row.val_qerr = Some(qerr / count as f64);
        }
        rows.push(row);
    }
    Ok(Trace { rows })
}
