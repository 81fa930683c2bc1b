//! Deterministic data sources: synthetic distributions and CIFAR-10-format
//! image patches.
//!
//! Every batch is a pure function of (seed, batch index); the PRNG is
//! ChaCha8 with the batch index as the stream id, so sources are
//! reproducible across runs and machines.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::codebook::standard_normal;
use crate::error::{KvqError, Result};

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_IMAGE_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Affine map of byte values to [-0.5, 0.5]: 0 -> -0.5, 255 -> +0.5.
    Centered,
}

#[derive(Debug, Clone)]
enum SourceKind {
    GaussianMixture { means: Vec<f64>, components: usize },
    UniformSquare,
    /// Pre-extracted patch vectors, sampled with replacement per batch.
    Pool { vectors: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct DataSource {
    kind: SourceKind,
    dim: usize,
    seed: u64,
    batch_size: usize,
}

impl DataSource {
    /// Isotropic unit-variance Gaussian mixture with uniform weights.
    /// Component means sit on a lattice scaled so pairwise distances are at
    /// least `separation`.
    pub fn gaussian_mixture(
        components: usize,
        dim: usize,
        separation: f64,
        seed: u64,
        batch_size: usize,
    ) -> Result<Self> {
        if components == 0 || dim == 0 || batch_size == 0 {
            return Err(KvqError::Config("mixture needs M, d, batch size >= 1".into()));
        }
        if !(separation > 0.0) {
            return Err(KvqError::Config("separation must be positive".into()));
        }
        let side = (components as f64).powf(1.0 / dim as f64).ceil() as usize;
        let side = side.max(1);
        let mut means = vec![0.0; components * dim];
        for m in 0..components {
            let mut rest = m;
            for j in 0..dim {
                means[m * dim + j] = (rest % side) as f64 * separation;
                rest /= side;
            }
        }
        // center the lattice so the mixture has zero mean
        for j in 0..dim {
            let avg = (0..components).map(|m| means[m * dim + j]).sum::<f64>()
                / components as f64;
            for m in 0..components {
                means[m * dim + j] -= avg;
            }
        }
        Ok(DataSource {
            kind: SourceKind::GaussianMixture { means, components },
            dim,
            seed,
            batch_size,
        })
    }

    /// Uniform samples from the unit hypercube [0, 1]^d.
    pub fn uniform_square(dim: usize, seed: u64, batch_size: usize) -> Result<Self> {
        if dim == 0 || batch_size == 0 {
            return Err(KvqError::Config("uniform source needs d, batch size >= 1".into()));
        }
        Ok(DataSource { kind: SourceKind::UniformSquare, dim, seed, batch_size })
    }

    /// Wrap explicit vectors; batches are sampled from the pool with
    /// replacement.
    pub fn raw_vectors(vectors: Vec<f64>, dim: usize, seed: u64, batch_size: usize) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(KvqError::Config("raw vectors must be a nonempty multiple of d".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(KvqError::NonFinite { context: "raw vectors".into() });
        }
        Ok(DataSource { kind: SourceKind::Pool { vectors }, dim, seed, batch_size })
    }

    /// Load CIFAR-10 binary files and tile every image into patches of side
    /// `patch` with the given stride. Labels are discarded.
    pub fn cifar10<P: AsRef<Path>>(
        paths: &[P],
        patch: usize,
        stride: usize,
        normalization: Normalization,
        seed: u64,
        batch_size: usize,
    ) -> Result<Self> {
        if patch == 0 || patch > CIFAR_IMAGE_SIDE || stride == 0 {
            return Err(KvqError::Config("patch size must be in 1..=32, stride >= 1".into()));
        }
        let dim = CIFAR_CHANNELS * patch * patch;
        let mut vectors = Vec::new();
        for path in paths {
            let records = read_cifar_file(path.as_ref())?;
            for record in records.chunks(CIFAR_RECORD_BYTES) {
                let pixels = &record[1..]; // label byte dropped
                extract_patches(pixels, patch, stride, normalization, &mut vectors);
            }
        }
        if vectors.is_empty() {
            return Err(KvqError::Config("no patches extracted".into()));
        }
        Ok(DataSource { kind: SourceKind::Pool { vectors }, dim, seed, batch_size })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of vectors in the underlying pool, if any.
    pub fn pool_len(&self) -> Option<usize> {
        match &self.kind {
            SourceKind::Pool { vectors } => Some(vectors.len() / self.dim),
            _ => None,
        }
    }

    pub fn pool(&self) -> Option<&[f64]> {
        match &self.kind {
            SourceKind::Pool { vectors } => Some(vectors),
            _ => None,
        }
    }

    /// The batch at `index`; fully determined by (seed, index).
    pub fn batch(&self, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        let rows = self.batch_size;
        let mut out = Vec::with_capacity(rows * self.dim);
        match &self.kind {
            SourceKind::GaussianMixture { means, components } => {
                for _ in 0..rows {
                    let c = rng.gen_range(0..*components);
                    let mean = &means[c * self.dim..(c + 1) * self.dim];
                    for &mu in mean {
                        out.push(mu + standard_normal(&mut rng));
                    }
                }
            }
            SourceKind::UniformSquare => {
                for _ in 0..rows * self.dim {
                    out.push(rng.gen::<f64>());
                }
            }
            SourceKind::Pool { vectors } => {
                let n = vectors.len() / self.dim;
                for _ in 0..rows {
                    let i = rng.gen_range(0..n);
                    out.extend_from_slice(&vectors[i * self.dim..(i + 1) * self.dim]);
                }
            }
        }
        out
    }
}

fn read_cifar_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(KvqError::Format { offset: 0, message: "empty CIFAR-10 file".into() });
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let complete = bytes.len() / CIFAR_RECORD_BYTES;
        return Err(KvqError::Format {
            offset: (complete * CIFAR_RECORD_BYTES) as u64,
            message: format!(
                "truncated record: file holds {} bytes, record {} is incomplete \
                 ({} of {} bytes)",
                bytes.len(),
                complete,
                bytes.len() - complete * CIFAR_RECORD_BYTES,
                CIFAR_RECORD_BYTES
            ),
        });
    }
    Ok(bytes)
}

/// Tile one channel-major 3x32x32 pixel block into patch vectors.
fn extract_patches(
    pixels: &[u8],
    patch: usize,
    stride: usize,
    normalization: Normalization,
    out: &mut Vec<f64>,
) {
    let side = CIFAR_IMAGE_SIDE;
    let mut y = 0;
    while y + patch <= side {
        let mut x = 0;
        while x + patch <= side {
            for c in 0..CIFAR_CHANNELS {
                for py in 0..patch {
                    for px in 0..patch {
                        let v = pixels[c * side * side + (y + py) * side + (x + px)];
                        out.push(match normalization {
                            Normalization::None => v as f64,
                            Normalization::Centered => v as f64 / 255.0 - 0.5,
                        });
                    }
                }
            }
            x += stride;
        }
        y += stride;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn batches_are_deterministic() {
        let a = DataSource::gaussian_mixture(4, 2, 10.0, 7, 32).unwrap();
        let b = DataSource::gaussian_mixture(4, 2, 10.0, 7, 32).unwrap();
        assert_eq!(a.batch(0), b.batch(0));
        assert_eq!(a.batch(5), b.batch(5));
        assert_ne!(a.batch(0), a.batch(1));
    }

    #[test]
    fn single_component_is_iid_gaussian() {
        let s = DataSource::gaussian_mixture(1, 3, 1.0, 0, 1000).unwrap();
        let batch = s.batch(0);
        let mean: f64 = batch.iter().sum::<f64>() / batch.len() as f64;
        assert!(mean.abs() < 0.1);
        assert!(batch.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mixture_batch_means_near_true_means() {
        // law of large numbers at n = 10^4 per the 3 sigma / sqrt n bound
        let m = 4;
        let s = DataSource::gaussian_mixture(m, 2, 10.0, 3, 10_000).unwrap();
        let means = match &s.kind {
            SourceKind::GaussianMixture { means, .. } => means.clone(),
            _ => unreachable!(),
        };
        // pairwise separation of lattice means
        for a in 0..m {
            for b in (a + 1)..m {
                let d: f64 = (0..2)
                    .map(|j| (means[a * 2 + j] - means[b * 2 + j]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 10.0 - 1e-9);
            }
        }
        let batch = s.batch(0);
        // assign each sample to the nearest true mean and check cluster means
        let mut sums = vec![0.0; m * 2];
        let mut counts = vec![0usize; m];
        for row in batch.chunks(2) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..m {
                let d: f64 =
                    (0..2).map(|j| (row[j] - means[c * 2 + j]).powi(2)).sum();
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            counts[best] += 1;
            for j in 0..2 {
                sums[best * 2 + j] += row[j];
            }
        }
        for c in 0..m {
            assert!(counts[c] > 1000, "component {c} undersampled");
            for j in 0..2 {
                let emp = sums[c * 2 + j] / counts[c] as f64;
                let bound = 3.0 / (counts[c] as f64).sqrt();
                assert!((emp - means[c * 2 + j]).abs() < bound + 0.05);
            }
        }
    }

    #[test]
    fn uniform_square_in_bounds() {
        let s = DataSource::uniform_square(2, 1, 500).unwrap();
        assert!(s.batch(3).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    fn write_cifar(records: usize, truncate: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut bytes = Vec::new();
        for r in 0..records {
            bytes.push(r as u8); // label
            for i in 0..3072usize {
                bytes.push(((i + r * 7) % 256) as u8);
            }
        }
        bytes.truncate(bytes.len() - truncate);
        f.write_all(&bytes).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn cifar_patch_tiling_counts() {
        let f = write_cifar(1, 0);
        // stride = patch: (32/8)^2 patches of dimension 3*64
        let s = DataSource::cifar10(&[f.path()], 8, 8, Normalization::None, 0, 4).unwrap();
        assert_eq!(s.pool_len(), Some(16));
        assert_eq!(s.dim(), 192);
        // whole image as one vector
        let s = DataSource::cifar10(&[f.path()], 32, 32, Normalization::None, 0, 4).unwrap();
        assert_eq!(s.pool_len(), Some(1));
        assert_eq!(s.dim(), 3072);
    }

    #[test]
    fn cifar_normalization_endpoints() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut bytes = vec![0u8; CIFAR_RECORD_BYTES];
        bytes[1] = 0;
        bytes[2] = 255;
        f.write_all(&bytes).unwrap();
        f.flush().unwrap();
        let s = DataSource::cifar10(&[f.path()], 32, 32, Normalization::Centered, 0, 1).unwrap();
        let pool = s.pool().unwrap();
        assert_eq!(pool[0], -0.5);
        assert_eq!(pool[1], 0.5);
    }

    #[test]
    fn cifar_truncated_record_reports_offset() {
        let f = write_cifar(2, 10);
        let err = DataSource::cifar10(&[f.path()], 8, 8, Normalization::None, 0, 4).unwrap_err();
        match err {
            KvqError::Format { offset, .. } => {
                assert_eq!(offset, CIFAR_RECORD_BYTES as u64)
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cifar_roundtrip_bytes() {
        let f = write_cifar(3, 0);
        let bytes = read_cifar_file(f.path()).unwrap();
        assert_eq!(bytes.len(), 3 * CIFAR_RECORD_BYTES);
        // unnormalized whole-image patches reproduce the pixel bytes exactly
        let s = DataSource::cifar10(&[f.path()], 32, 32, Normalization::None, 0, 1).unwrap();
        let pool = s.pool().unwrap();
        for r in 0..3 {
            for i in 0..3072 {
                assert_eq!(
                    pool[r * 3072 + i],
                    bytes[r * CIFAR_RECORD_BYTES + 1 + i] as f64
                );
            }
        }
    }

    #[test]
    fn raw_vectors_validation() {
        assert!(DataSource::raw_vectors(vec![1.0, 2.0, 3.0], 2, 0, 4).is_err());
        assert!(DataSource::raw_vectors(vec![f64::NAN, 2.0], 2, 0, 4).is_err());
    }
}
