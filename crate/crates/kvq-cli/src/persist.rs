//! Binary persistence: codebook files (KVQ1) and trained toy models (KVM1).
//!
//! KVQ1 layout, little-endian throughout:
//!   magic "KVQ1" | version u32 | K u32 | d u32 | grid dimensionality u32 |
//!   grid extents 2 x u32 (height 1 for 1D) | metric tag u32 |
//!   K*d f32 prototypes in index order, row-major.
//! Weights are stored as f32 even when training ran in f64 (lossy by design).

use std::fs;
use std::path::Path;

use kvq::codebook::{Codebook, Metric};
use kvq::error::{KvqError, Result};
use kvq::grid::GridTopology;
use kvq::vqlayer::{ModelShape, ToyAutoencoder};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"KVQ1";
pub const CODEBOOK_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"KVM1";
pub const MODEL_VERSION: u32 = 1;

fn metric_tag(metric: Metric) -> u32 {
    match metric {
        Metric::Euclidean => 0,
        Metric::NegativeDot => 1,
    }
}

fn metric_from_tag(tag: u32, offset: u64) -> Result<Metric> {
    match tag {
        0 => Ok(Metric::Euclidean),
        1 => Ok(Metric::NegativeDot),
        _ => Err(KvqError::Format { offset, message: format!("unknown metric tag {tag}") }),
    }
}

pub fn codebook_to_bytes(codebook: &Codebook, grid: &GridTopology) -> Result<Vec<u8>> {
    if grid.size() != codebook.size() {
        return Err(KvqError::Config("grid size does not match codebook".into()));
    }
    let (w, h) = grid.extents();
    let mut out = Vec::with_capacity(32 + codebook.weights().len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    for v in [
        CODEBOOK_VERSION,
        codebook.size() as u32,
        codebook.dim() as u32,
        grid.dimensionality() as u32,
        w as u32,
        h as u32,
        metric_tag(codebook.metric()),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in codebook.weights() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn codebook_from_bytes(bytes: &[u8]) -> Result<(Codebook, GridTopology)> {
    let header_len = 4 + 7 * 4;
    if bytes.len() < header_len {
        return Err(KvqError::Format {
            offset: bytes.len() as u64,
            message: format!("file too short for header: {} < {header_len} bytes", bytes.len()),
        });
    }
    if &bytes[0..4] != CODEBOOK_MAGIC {
        return Err(KvqError::Format { offset: 0, message: "bad magic, expected KVQ1".into() });
    }
    let word = |i: usize| -> u32 {
        u32::from_le_bytes(bytes[4 + i * 4..8 + i * 4].try_into().unwrap())
    };
    let version = word(0);
    if version != CODEBOOK_VERSION {
        return Err(KvqError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let k = word(1) as usize;
    let dim = word(2) as usize;
    let dims = word(3);
    let width = word(4) as usize;
    let height = word(5) as usize;
    let metric = metric_from_tag(word(6), 28)?;
    let grid = match dims {
        1 => {
            if height != 1 || width != k {
                return Err(KvqError::Format {
                    offset: 20,
                    message: "1D grid extents must be (K, 1)".into(),
                });
            }
            GridTopology::line(width)?
        }
        2 => {
            if width * height != k {
                return Err(KvqError::Format {
                    offset: 20,
                    message: format!("grid {width}x{height} does not cover K = {k}"),
                });
            }
            GridTopology::rect(width, height)?
        }
        _ => {
            return Err(KvqError::Format {
                offset: 16,
                message: format!("unsupported grid dimensionality {dims}"),
            })
        }
    };
    let expected = header_len + k * dim * 4;
    if bytes.len() != expected {
        return Err(KvqError::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!("size mismatch: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let weights: Vec<f64> = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((Codebook::from_weights(weights, k, dim, metric)?, grid))
}

pub fn save_codebook(codebook: &Codebook, grid: &GridTopology, path: &Path) -> Result<()> {
    fs::write(path, codebook_to_bytes(codebook, grid)?)?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<(Codebook, GridTopology)> {
    codebook_from_bytes(&fs::read(path)?)
}

/// Trained toy models keep full f64 precision so render/perturb reproduce
/// training-time reconstructions exactly.
pub fn model_to_bytes(model: &ToyAutoencoder) -> Vec<u8> {
    let s = model.shape();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    for v in [
        MODEL_VERSION,
        s.d_in as u32,
        s.n_latents as u32,
        s.d_hidden as u32,
        s.d_emb as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.alpha.to_le_bytes());
    out.extend_from_slice(&model.learning_rate.to_le_bytes());
    for &p in model.param_vector() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ToyAutoencoder> {
    let header_len = 4 + 5 * 4 + 16;
    if bytes.len() < header_len || &bytes[0..4] != MODEL_MAGIC {
        return Err(KvqError::Format { offset: 0, message: "bad model header".into() });
    }
    let word = |i: usize| -> u32 {
        u32::from_le_bytes(bytes[4 + i * 4..8 + i * 4].try_into().unwrap())
    };
    if word(0) != MODEL_VERSION {
        return Err(KvqError::Format {
            offset: 4,
            message: format!("unsupported model version {}", word(0)),
        });
    }
    let shape = ModelShape {
        d_in: word(1) as usize,
        n_latents: word(2) as usize,
        d_hidden: word(3) as usize,
        d_emb: word(4) as usize,
    };
    let alpha = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let lr = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let params: Vec<f64> = bytes[header_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = ToyAutoencoder::new(shape, alpha, lr, 0)?;
    model.set_param_vector(&params).map_err(|_| KvqError::Format {
        offset: header_len as u64,
        message: "parameter payload does not match the model shape".into(),
    })?;
    Ok(model)
}

pub fn save_model(model: &ToyAutoencoder, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ToyAutoencoder> {
    model_from_bytes(&fs::read(path)?)
}
