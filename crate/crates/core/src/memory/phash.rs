//! 64-bit difference hash over a 9×8 box-averaged thumbnail.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::PixelGrid;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PHash(pub u64);

impl fmt::Debug for PHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PHash({:016x})", self.0)
    }
}

/// Pixel span `[start, end)` of cell `i` out of `cells` along an axis of `len`.
/// Every cell covers at least one pixel.
fn cell_span(i: usize, cells: usize, len: usize) -> (usize, usize) {
    let start = (i * len / cells).min(len - 1);
    let end = ((i + 1) * len / cells).max(start + 1).min(len);
    (start, end)
}

/// Mean intensity of each of the 8 rows × 9 columns of cells.
pub fn thumbnail(grid: &PixelGrid) -> [[f64; 9]; 8] {
    assert!(!grid.is_empty(), "cannot hash an empty grid");
    let mut cells = [[0.0; 9]; 8];
    for (r, row) in cells.iter_mut().enumerate() {
        let (y0, y1) = cell_span(r, 8, grid.height);
        for (c, cell) in row.iter_mut().enumerate() {
            let (x0, x1) = cell_span(c, 9, grid.width);
            let mut sum = 0u64;
            for y in y0..y1 {
                sum += grid.pixels[y * grid.width + x0..y * grid.width + x1]
                    .iter()
                    .map(|&p| p as u64)
                    .sum::<u64>();
            }
            *cell = sum as f64 / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    cells
}

/// Bit `8r + c` is set iff cell `(r, c)` is brighter than cell `(r, c + 1)`.
pub fn phash(grid: &PixelGrid) -> PHash {
    let cells = thumbnail(grid);
    let mut bits = 0u64;
    for (r, row) in cells.iter().enumerate() {
        for c in 0..8 {
            if row[c] > row[c + 1] {
                bits |= 1 << (8 * r + c);
            }
        }
    }
    PHash(bits)
}

/// `1 - hamming(a, b) / 64`.
pub fn phash_similarity(a: PHash, b: PHash) -> f64 {
    1.0 - (a.0 ^ b.0).count_ones() as f64 / 64.0
}
