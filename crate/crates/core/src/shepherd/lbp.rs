//! Uniform local binary pattern histograms.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// 58 uniform patterns plus one bin shared by every non-uniform pattern.
pub const LBP_BINS: usize = 59;

// Neighbor offsets in bit order, clockwise from the top-left.
const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

/// Number of 0/1 transitions when walking the 8 bits circularly.
pub fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Maps each 8-bit code to its histogram bin. Uniform codes get bins
/// `0..58` in ascending code order; everything else lands in bin 58.
pub fn bin_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u8; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if transitions(code) <= 2 {
                table[code as usize] = next;
                next += 1;
            } else {
                table[code as usize] = (LBP_BINS - 1) as u8;
            }
        }
        debug_assert_eq!(next as usize, LBP_BINS - 1);
        table
    })
}

/// Code at interior pixel `(x, y)`: bit `n` is set when neighbor `n` is
/// strictly brighter than the center.
pub fn lbp_code(gray: &ImageBuffer, x: usize, y: usize) -> u8 {
    let center = gray.get(x, y, 0);
    let mut code = 0u8;
    for (bit, (dx, dy)) in NEIGHBORS.iter().enumerate() {
        let nx = (x as isize + dx) as usize;
        let ny = (y as isize + dy) as usize;
        if gray.get(nx, ny, 0) > center {
            code |= 1 << bit;
        }
    }
    code
}

/// Per-cell uniform LBP histograms over a `grid x grid` partition of the
/// image, each L1-normalized, concatenated row-major by cell.
pub fn lbp_histogram(image: &ImageBuffer, grid: usize) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(Error::Config("LBP grid must be at least 1".into()));
    }
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(Error::Input(format!("LBP needs at least a 3x3 image, got {w}x{h}")));
    }
    let gray = image.to_gray();
    let table = bin_table();
    let mut hist = vec![0.0; LBP_BINS * grid * grid];
    for y in 1..h - 1 {
        let cy = y * grid / h;
        for x in 1..w - 1 {
            let cx = x * grid / w;
            let bin = table[lbp_code(&gray, x, y) as usize] as usize;
            hist[(cy * grid + cx) * LBP_BINS + bin] += 1.0;
        }
    }
    for cell in hist.chunks_exact_mut(LBP_BINS) {
        let total: f64 = cell.iter().sum();
        if total > 0.0 {
            cell.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(hist)
}
