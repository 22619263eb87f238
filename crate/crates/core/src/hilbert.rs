//! Hilbert space-filling curve layout of payload bytes into square byte-class
//! images, plus PNG rendering.
//!
//! Coordinate convention: `x` is the column, `y` is the row, origin at the
//! top-left. The order-1 curve visits (0,0), (0,1), (1,1), (1,0) — a U shape
//! opening to the right. Consecutive curve indices are always grid-adjacent,
//! which is the locality property that makes the layout useful: bytes that
//! are close in the stream land close in the image.

use crate::byteclass::{class_color, classify_byte, ByteClass};
use crate::pcap::PayloadChunk;
use crate::png;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HilbertError {
    #[error("curve index {d} out of range for order {order} (max {max})")]
    IndexOutOfRange { order: u32, d: u64, max: u64 },
    #[error("coordinate ({x},{y}) out of range for order {order} (side {side})")]
    CoordOutOfRange { order: u32, x: u32, y: u32, side: u32 },
    #[error("chunk of {len} bytes exceeds order-{order} capacity of {capacity} cells")]
    ChunkTooLarge { order: u32, len: usize, capacity: u64 },
}

/// Cells on one side of an order-`k` grid.
pub fn side_len(order: u32) -> u32 {
    1 << order
}

/// Total cell count 4^k of an order-`k` grid.
pub fn capacity(order: u32) -> u64 {
    1u64 << (2 * order)
}

fn rotate_quadrant(s: u32, x: &mut u32, y: &mut u32, rx: u32, ry: u32) {
    if ry == 0 {
        if rx == 1 {
            *x = s - 1 - *x;
            *y = s - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}

/// Map a curve index to its (x, y) cell on the order-`k` grid.
pub fn d2xy(order: u32, d: u64) -> Result<(u32, u32), HilbertError> {
    assert!((1..=31).contains(&order), "order must be in 1..=31");
    let max = capacity(order);
    if d >= max {
        return Err(HilbertError::IndexOutOfRange { order, d, max });
    }
    let side = side_len(order);
    let (mut x, mut y) = (0u32, 0u32);
    let mut t = d;
    let mut s = 1u32;
    while s < side {
        let rx = (1 & (t >> 1)) as u32;
        let ry = (1 & (t ^ rx as u64)) as u32;
        rotate_quadrant(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t >>= 2;
        s <<= 1;
    }
    Ok((x, y))
}

/// Inverse of [`d2xy`]: map a cell back to its curve index.
pub fn xy2d(order: u32, x: u32, y: u32) -> Result<u64, HilbertError> {
    assert!((1..=31).contains(&order), "order must be in 1..=31");
    let side = side_len(order);
    if x >= side || y >= side {
        return Err(HilbertError::CoordOutOfRange { order, x, y, side });
    }
    let (mut x, mut y) = (x, y);
    let mut d = 0u64;
    let mut s = side >> 1;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += (s as u64) * (s as u64) * ((3 * rx) ^ ry) as u64;
        // Reduce to quadrant-local coordinates before rotating.
        x &= s - 1;
        y &= s - 1;
        rotate_quadrant(s, &mut x, &mut y, rx, ry);
        s >>= 1;
    }
    Ok(d)
}

/// A square grid of byte classes produced by curve layout. Cells past the
/// chunk's data length hold `Padding`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisImage {
    order: u32,
    side: u32,
    cells: Vec<ByteClass>,
    data_len: usize,
}

impl VisImage {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    /// Number of non-padding cells.
    pub fn data_len(&self) -> usize {
        self.data_len
    }

    /// Cell at column `x`, row `y`.
    pub fn cell(&self, x: u32, y: u32) -> ByteClass {
        assert!(x < self.side && y < self.side);
        self.cells[(y as usize) * (self.side as usize) + x as usize]
    }

    /// Row-major cell grid.
    pub fn cells(&self) -> &[ByteClass] {
        &self.cells
    }

    /// Per-class cell counts in class index order (padding at index 5).
    pub fn class_counts(&self) -> [u64; 6] {
        let mut counts = [0u64; 6];
        for &c in &self.cells {
            counts[c.index()] += 1;
        }
        counts
    }
}

/// Lay the chunk's bytes along the order-`k` Hilbert curve: the i-th byte's
/// class lands at `d2xy(order, i)`; remaining cells are padding.
pub fn layout(chunk: &PayloadChunk, order: u32) -> Result<VisImage, HilbertError> {
    let len = chunk.bytes.len();
    let cap = capacity(order);
    if len as u64 > cap {
        return Err(HilbertError::ChunkTooLarge { order, len, capacity: cap });
    }
    let side = side_len(order);
    let mut cells = vec![ByteClass::Padding; cap as usize];
    for (i, &b) in chunk.bytes.iter().enumerate() {
        let (x, y) = d2xy(order, i as u64).expect("index < capacity by construction");
        cells[(y as usize) * (side as usize) + x as usize] = classify_byte(b);
    }
    Ok(VisImage {
        order,
        side,
        cells,
        data_len: len,
    })
}

/// Render the image to PNG bytes, each cell drawn as a `scale`x`scale` block
/// of its class color. Output bytes are fully deterministic.
pub fn emit_png(img: &VisImage, scale: u32) -> Vec<u8> {
    assert!(scale >= 1, "scale must be >= 1");
    let side = img.side as usize;
    let scale = scale as usize;
    let dim = side * scale;
    let mut pixels = vec![0u8; dim * dim * 3];
    for cy in 0..side {
        for cx in 0..side {
            let (r, g, b) = class_color(img.cells[cy * side + cx]);
            for sy in 0..scale {
                let row = cy * scale + sy;
                let base = (row * dim + cx * scale) * 3;
                for sx in 0..scale {
                    let p = base + sx * 3;
                    pixels[p] = r;
                    pixels[p + 1] = g;
                    pixels[p + 2] = b;
                }
            }
        }
    }
    png::encode_rgb8(dim as u32, dim as u32, &pixels)
}
