//! Entropy-coded segment bit I/O with byte stuffing.

use super::CodecError;

/// MSB-first reader over an entropy-coded segment.
///
/// `0xFF 0x00` is unstuffed on the fly. Any other marker stops the reader:
/// subsequent reads see zero bits, and consuming them is an error.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
    // zero bits appended after the data ran out or a marker was reached
    padding: u32,
    marker: Option<u8>,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
            padding: 0,
            marker: None,
        }
    }

    fn fill(&mut self) {
        while self.nbits <= 56 {
            let byte = if self.marker.is_some() || self.pos >= self.data.len() {
                self.padding += 8;
                0
            } else {
                let b = self.data[self.pos];
                if b == 0xFF {
                    // skip fill bytes
                    let mut next = self.pos + 1;
                    while next < self.data.len() && self.data[next] == 0xFF {
                        next += 1;
                    }
                    match self.data.get(next) {
                        Some(0x00) => {
                            self.pos = next + 1;
                            0xFF
                        }
                        Some(&m) => {
                            self.pos = next - 1;
                            self.marker = Some(m);
                            self.padding += 8;
                            0
                        }
                        None => {
                            self.pos = self.data.len();
                            self.padding += 8;
                            0
                        }
                    }
                } else {
                    self.pos += 1;
                    b
                }
            };
            self.acc |= u64::from(byte) << (56 - self.nbits);
            self.nbits += 8;
        }
    }

    /// Next `n` (≤ 16) bits without consuming them, zero-padded past the end.
    #[inline]
    pub fn peek(&mut self, n: u32) -> u32 {
        debug_assert!((1..=16).contains(&n));
        if self.nbits < n {
            self.fill();
        }
        (self.acc >> (64 - n)) as u32
    }

    /// True when consuming `n` more bits would read padding.
    pub fn exhausted_at(&mut self, n: u32) -> bool {
        if self.nbits < n {
            self.fill();
        }
        n > self.nbits.saturating_sub(self.padding)
    }

    #[inline]
    pub fn consume(&mut self, n: u32) -> Result<(), CodecError> {
        if self.nbits < n {
            self.fill();
        }
        if n > self.nbits.saturating_sub(self.padding) {
            return Err(CodecError::BitstreamExhausted);
        }
        self.acc <<= n;
        self.nbits -= n;
        Ok(())
    }

    #[inline]
    pub fn bits(&mut self, n: u32) -> Result<u32, CodecError> {
        if n == 0 {
            return Ok(0);
        }
        let v = self.peek(n);
        self.consume(n)?;
        Ok(v)
    }

    /// Reads `size` magnitude bits and sign-extends them (JPEG EXTEND).
    #[inline]
    pub fn receive_extend(&mut self, size: u32) -> Result<i32, CodecError> {
        if size == 0 {
            return Ok(0);
        }
        let v = self.bits(size)? as i32;
        Ok(if v < (1 << (size - 1)) { v - (1 << size) + 1 } else { v })
    }

    /// Marker the reader stopped at, if it has reached one.
    pub fn pending_marker(&mut self) -> Option<u8> {
        if self.marker.is_none() && self.nbits <= self.padding + 7 {
            self.fill();
        }
        self.marker
    }

    /// Real (non-padding) bits still buffered or unread.
    pub fn remaining_real_bits(&mut self) -> usize {
        self.fill();
        let buffered = self.nbits.saturating_sub(self.padding) as usize;
        if self.marker.is_some() {
            buffered
        } else {
            buffered + 8 * (self.data.len() - self.pos)
        }
    }

    /// Discards the partial byte and steps over a pending RSTn marker.
    ///
    /// Returns the restart number found, or `None` if the reader is not
    /// sitting on a restart marker.
    pub fn take_restart(&mut self) -> Option<u8> {
        self.fill();
        let m = self.marker?;
        if !(0xD0..=0xD7).contains(&m) {
            return None;
        }
        // all buffered real bits are byte-alignment padding
        if self.nbits.saturating_sub(self.padding) >= 8 {
            return None;
        }
        self.pos += 2;
        self.acc = 0;
        self.nbits = 0;
        self.padding = 0;
        self.marker = None;
        Some(m - 0xD0)
    }
}

/// MSB-first writer producing stuffed entropy-coded bytes.
#[derive(Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `n` bits of `value`, `n` ≤ 24.
    #[inline]
    pub fn put(&mut self, value: u32, n: u32) {
        debug_assert!(n <= 24);
        if n == 0 {
            return;
        }
        self.acc = (self.acc << n) | (value & ((1 << n) - 1));
        self.nbits += n;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    /// Pads the current byte with one bits.
    pub fn align(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
    }

    /// Aligns, then emits RSTn (n taken mod 8).
    pub fn restart(&mut self, n: u8) {
        self.align();
        self.out.push(0xFF);
        self.out.push(0xD0 + (n & 7));
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.align();
        self.out
    }
}

/// Magnitude category (bit length of |v|).
#[inline]
pub fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

/// Low `category(v)` bits of the JPEG magnitude encoding.
#[inline]
pub fn magnitude_bits(v: i32, size: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v - 1) as u32 & ((1 << size) - 1)
    }
}
