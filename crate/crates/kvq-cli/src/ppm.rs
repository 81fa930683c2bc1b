//! PPM (P6) rendering of decoded codebook grids.
//!
//! Each grid cell becomes a P x P tile; tiles are separated by a one-pixel
//! black border, so the image is (W*(P+1)+1) x (H*(P+1)+1) pixels. Tile
//! vectors of length 3*P*P are treated as channel-major RGB, length P*P as
//! grayscale.

use kvq::error::{KvqError, Result};
use kvq::grid::GridTopology;

/// Round half away from zero, then clip to [0, 255].
fn to_byte(v: f64) -> u8 {
    let r = if v >= 0.0 { (v + 0.5).floor() } else { (v - 0.5).ceil() };
    r.clamp(0.0, 255.0) as u8
}

/// Undo the centered [-0.5, 0.5] pixel normalization; `centered = false`
/// treats values as raw byte intensities.
fn inverse_normalize(v: f64, centered: bool) -> f64 {
    if centered {
        (v + 0.5) * 255.0
    } else {
        v
    }
}

fn tile_side(dim: usize) -> Result<(usize, bool)> {
    // Prefer the RGB interpretation when the length allows both.
    if dim % 3 == 0 {
        let side = ((dim / 3) as f64).sqrt().round() as usize;
        if side * side * 3 == dim {
            return Ok((side, true));
        }
    }
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        return Ok((side, false));
    }
    Err(KvqError::Config(format!(
        "tile length {dim} is neither 3*P*P nor P*P for any integer P"
    )))
}

/// Render one decoded vector per grid cell into a P6 image. Cell `k` lands at
/// the grid coordinates of `k`, with y = 0 at the bottom of the image.
pub fn render_grid(tiles: &[Vec<f64>], grid: &GridTopology, centered: bool) -> Result<Vec<u8>> {
    if tiles.len() != grid.size() {
        return Err(KvqError::ShapeMismatch { expected: grid.size(), actual: tiles.len() });
    }
    if tiles.is_empty() {
        return Err(KvqError::Config("nothing to render".into()));
    }
    let dim = tiles[0].len();
    let (p, rgb) = tile_side(dim)?;
    let (gw, gh) = grid.extents();
    let width = gw * (p + 1) + 1;
    let height = gh * (p + 1) + 1;
    let mut pixels = vec![0u8; width * height * 3];

    for (k, tile) in tiles.iter().enumerate() {
        if tile.len() != dim {
            return Err(KvqError::ShapeMismatch { expected: dim, actual: tile.len() });
        }
        let (gx, gy) = grid.coords(k)?;
        let x0 = gx * (p + 1) + 1;
        let y0 = (gh - 1 - gy) * (p + 1) + 1;
        for py in 0..p {
            for px in 0..p {
                let base = ((y0 + py) * width + x0 + px) * 3;
                for c in 0..3 {
                    let v = if rgb {
                        tile[c * p * p + py * p + px]
                    } else {
                        tile[py * p + px]
                    };
                    pixels[base + c] = to_byte(inverse_normalize(v, centered));
                }
            }
        }
    }

    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_byte(127.5), 128);
        assert_eq!(to_byte(0.4), 0);
        assert_eq!(to_byte(-3.0), 0);
        assert_eq!(to_byte(300.0), 255);
        assert_eq!(inverse_normalize(0.0, true), 127.5);
        assert_eq!(to_byte(inverse_normalize(0.0, true)), 128);
        assert_eq!(to_byte(inverse_normalize(-0.5, true)), 0);
        assert_eq!(to_byte(inverse_normalize(0.5, true)), 255);
    }

    #[test]
    fn golden_two_by_one_grayscale() {
        // Two 1x1 grayscale tiles on a 2x1 grid: image is 5x3 with borders.
        let grid = GridTopology::rect(2, 1).unwrap();
        let tiles = vec![vec![0.0], vec![0.5]];
        let bytes = render_grid(&tiles, &grid, true).unwrap();
        let mut expect = b"P6\n5 3\n255\n".to_vec();
        let rows: [[u8; 5]; 3] = [
            [0, 0, 0, 0, 0],
            [0, 128, 0, 255, 0],
            [0, 0, 0, 0, 0],
        ];
        for row in rows {
            for v in row {
                expect.extend_from_slice(&[v, v, v]);
            }
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn rgb_tiles_and_dimensions() {
        // 2x2 grid of 2x2 RGB tiles -> 7x7 image.
        let grid = GridTopology::rect(2, 2).unwrap();
        let tiles: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64 * 0.1; 12]).collect();
        let bytes = render_grid(&tiles, &grid, true).unwrap();
        assert!(bytes.starts_with(b"P6\n7 7\n255\n"));
        assert_eq!(bytes.len(), b"P6\n7 7\n255\n".len() + 7 * 7 * 3);
        // k = 2 has grid coords (0, 1): top-left tile in image space.
        let header = b"P6\n7 7\n255\n".len();
        let top_left_pixel = header + (1 * 7 + 1) * 3;
        assert_eq!(bytes[top_left_pixel], to_byte((0.2 + 0.5) * 255.0));
    }

    #[test]
    fn rejects_awkward_lengths() {
        let grid = GridTopology::line(1).unwrap();
        assert!(render_grid(&[vec![0.0; 5]], &grid, true).is_err());
        assert!(render_grid(&[], &GridTopology::line(2).unwrap(), true).is_err());
    }
}
