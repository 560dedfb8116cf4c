//! 8×8 DCT arithmetic, zigzag ordering, quantization and colour conversion.
//!
//! Everything here works on `f64` internally. The naive quadruple-sum DCT
//! ([`fdct8x8_reference`], [`idct8x8_reference`]) is the ground truth; the
//! separable versions used on the hot path must agree with it to 1e-6.

use std::f64::consts::PI;
use std::sync::OnceLock;

use thiserror::Error;

/// 64 values of one 8×8 block, row-major.
///
/// Holds either level-shifted samples or DCT coefficients; the type does not
/// distinguish, the operation does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block8x8(pub [f64; 64]);

impl Block8x8 {
    pub const ZERO: Block8x8 = Block8x8([0.0; 64]);

    pub fn splat(v: f64) -> Self {
        Block8x8([v; 64])
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row * 8 + col]
    }

    pub fn max_abs_diff(&self, other: &Block8x8) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn energy(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl Default for Block8x8 {
    fn default() -> Self {
        Self::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("zigzag index {0} out of range 0..64")]
pub struct ZigzagRangeError(pub usize);

/// Zigzag position → natural (row-major) index.
pub const ZIGZAG_TO_NATURAL: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

/// Natural index → zigzag position.
pub const NATURAL_TO_ZIGZAG: [usize; 64] = invert(&ZIGZAG_TO_NATURAL);

const fn invert(perm: &[usize; 64]) -> [usize; 64] {
    let mut out = [0usize; 64];
    let mut i = 0;
    while i < 64 {
        out[perm[i]] = i;
        i += 1;
    }
    out
}

/// The standard JPEG zigzag traversal as a permutation object.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZigzagOrder;

impl ZigzagOrder {
    /// Zigzag index → (row, col).
    pub fn position(&self, index: usize) -> Result<(usize, usize), ZigzagRangeError> {
        zigzag_index(index)
    }

    /// (row, col) → zigzag index.
    pub fn index_of(&self, row: usize, col: usize) -> Result<usize, ZigzagRangeError> {
        zigzag_inverse(row, col)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> {
        ZIGZAG_TO_NATURAL.iter().map(|&n| (n / 8, n % 8))
    }
}

pub fn zigzag_index(index: usize) -> Result<(usize, usize), ZigzagRangeError> {
    let n = *ZIGZAG_TO_NATURAL.get(index).ok_or(ZigzagRangeError(index))?;
    Ok((n / 8, n % 8))
}

pub fn zigzag_inverse(row: usize, col: usize) -> Result<usize, ZigzagRangeError> {
    if row >= 8 || col >= 8 {
        return Err(ZigzagRangeError(row.max(col) * 8));
    }
    Ok(NATURAL_TO_ZIGZAG[row * 8 + col])
}

/// Reorders 64 values stored in zigzag order into natural order.
pub fn unzigzag<T: Copy + Default>(zz: &[T; 64]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (z, &n) in ZIGZAG_TO_NATURAL.iter().enumerate() {
        out[n] = zz[z];
    }
    out
}

/// Reorders 64 natural-order values into zigzag order.
pub fn zigzag<T: Copy + Default>(natural: &[T; 64]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (z, &n) in ZIGZAG_TO_NATURAL.iter().enumerate() {
        out[z] = natural[n];
    }
    out
}

#[inline]
fn norm(u: usize) -> f64 {
    if u == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// cos_table[u][x] = C(u)/2 · cos((2x+1)uπ/16); one 1-D orthonormal DCT-II row.
fn basis() -> &'static [[f64; 8]; 8] {
    static TABLE: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; 8]; 8];
        for (u, row) in t.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = norm(u) / 2.0 * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        t
    })
}

/// Orthonormal 2-D DCT-II evaluated straight from the defining double sum.
pub fn fdct8x8_reference(spatial: &Block8x8) -> Block8x8 {
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                for y in 0..8 {
                    acc += spatial.get(x, y)
                        * (((2 * x + 1) * u) as f64 * PI / 16.0).cos()
                        * (((2 * y + 1) * v) as f64 * PI / 16.0).cos();
                }
            }
            out[u * 8 + v] = norm(u) * norm(v) / 4.0 * acc;
        }
    }
    Block8x8(out)
}

/// Inverse of [`fdct8x8_reference`], also from the double sum.
pub fn idct8x8_reference(coeffs: &Block8x8) -> Block8x8 {
    let mut out = [0.0; 64];
    for x in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                for v in 0..8 {
                    acc += norm(u)
                        * norm(v)
                        * coeffs.get(u, v)
                        * (((2 * x + 1) * u) as f64 * PI / 16.0).cos()
                        * (((2 * y + 1) * v) as f64 * PI / 16.0).cos();
                }
            }
            out[x * 8 + y] = acc / 4.0;
        }
    }
    Block8x8(out)
}

/// Forward DCT, separable row/column form of the same transform.
#[allow(clippy::needless_range_loop)]
pub fn fdct8x8(spatial: &Block8x8) -> Block8x8 {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows: tmp[x][v] = Σ_y f[x][y] b[v][y]
    for x in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += spatial.0[x * 8 + y] * b[v][y];
            }
            tmp[x * 8 + v] = acc;
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += b[u][x] * tmp[x * 8 + v];
            }
            out[u * 8 + v] = acc;
        }
    }
    Block8x8(out)
}

/// Inverse DCT, separable form.
#[allow(clippy::needless_range_loop)]
pub fn idct8x8(coeffs: &Block8x8) -> Block8x8 {
    let b = basis();
    let mut tmp = [0.0; 64];
    // columns first: tmp[x][v] = Σ_u b[u][x] F[u][v]
    for x in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += b[u][x] * coeffs.0[u * 8 + v];
            }
            tmp[x * 8 + v] = acc;
        }
    }
    let mut out = [0.0; 64];
    for x in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += tmp[x * 8 + v] * b[v][y];
            }
            out[x * 8 + y] = acc;
        }
    }
    Block8x8(out)
}

/// Rounds half away from zero, the single rounding rule used across the crate.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Rounds a reconstructed sample. Values within 1e-9 of a half are treated
/// as exact ties first, so the result does not depend on which inverse DCT
/// produced them.
#[inline]
pub fn round_sample(v: f64) -> f64 {
    let frac = v - v.floor();
    if (frac - 0.5).abs() < 1e-9 {
        round_half_away(v.floor() + 0.5)
    } else {
        round_half_away(v)
    }
}

#[inline]
pub fn clamp_u8(v: f64) -> u8 {
    round_half_away(v).clamp(0.0, 255.0) as u8
}

/// Subtracts 128 from every sample of an 8-bit block.
pub fn level_shift(samples: &[u8; 64]) -> Block8x8 {
    let mut out = [0.0; 64];
    for (o, &s) in out.iter_mut().zip(samples.iter()) {
        *o = f64::from(s) - 128.0;
    }
    Block8x8(out)
}

/// Adds 128 back and clamps to [0, 255] without rounding.
pub fn unshift_clamp(block: &Block8x8) -> [f64; 64] {
    let mut out = [0.0; 64];
    for (o, &v) in out.iter_mut().zip(block.0.iter()) {
        *o = (v + 128.0).clamp(0.0, 255.0);
    }
    out
}

/// Quantizes natural-order coefficients with a natural-order table.
pub fn quantize(coeffs: &Block8x8, table: &[u16; 64]) -> [i16; 64] {
    let mut out = [0i16; 64];
    for ((o, &c), &q) in out.iter_mut().zip(coeffs.0.iter()).zip(table.iter()) {
        *o = round_half_away(c / f64::from(q)).clamp(-32768.0, 32767.0) as i16;
    }
    out
}

/// Quantized × table, both natural order. Exact in `f64`.
pub fn dequantize(quantized: &[i16; 64], table: &[u16; 64]) -> Block8x8 {
    let mut out = [0.0; 64];
    for ((o, &c), &q) in out.iter_mut().zip(quantized.iter()).zip(table.iter()) {
        *o = f64::from(c) * f64::from(q);
    }
    Block8x8(out)
}

/// BT.601 full-range YCbCr → RGB on real-valued samples, rounded and clamped.
pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (u8, u8, u8) {
    let cb = cb - 128.0;
    let cr = cr - 128.0;
    let r = y + 1.402 * cr;
    let g = y - 0.344136 * cb - 0.714136 * cr;
    let b = y + 1.772 * cb;
    (clamp_u8(r), clamp_u8(g), clamp_u8(b))
}

/// BT.601 full-range RGB → YCbCr, rounded and clamped.
pub fn rgb_to_ycbcr(r: u8, g: u8, b: u8) -> (u8, u8, u8) {
    let (y, cb, cr) = rgb_to_ycbcr_f64(r, g, b);
    (clamp_u8(y), clamp_u8(cb), clamp_u8(cr))
}

/// Unrounded forward conversion, used by the encoder.
pub fn rgb_to_ycbcr_f64(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
    let cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    (y, cb, cr)
}
