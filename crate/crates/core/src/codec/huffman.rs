//! Canonical Huffman tables as carried in DHT segments.

use super::bits::{BitReader, BitWriter};
use super::CodecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableClass {
    Dc,
    Ac,
}

impl TableClass {
    pub fn name(self) -> &'static str {
        match self {
            TableClass::Dc => "DC",
            TableClass::Ac => "AC",
        }
    }
}

const LOOKUP_BITS: u32 = 9;

#[derive(Clone)]
pub struct HuffmanTable {
    pub class: TableClass,
    pub id: u8,
    /// Number of codes of each length 1..=16.
    pub code_lengths: [u8; 16],
    /// Symbols in code order.
    pub symbols: Vec<u8>,
    // maxcode[l] is the largest code of length l, -1 when there is none.
    maxcode: [i32; 17],
    // valptr[l] - mincode[l]: added to a code of length l gives its symbol index.
    offset: [i32; 17],
    // (length << 8) | symbol for codes no longer than LOOKUP_BITS, 0 for a miss.
    lookup: Box<[u16]>,
    // code and length for each symbol value, length 0 if absent.
    encode: Box<[(u16, u8); 256]>,
}

impl std::fmt::Debug for HuffmanTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HuffmanTable")
            .field("class", &self.class)
            .field("id", &self.id)
            .field("code_lengths", &self.code_lengths)
            .field("symbols", &self.symbols)
            .finish()
    }
}

impl PartialEq for HuffmanTable {
    fn eq(&self, other: &Self) -> bool {
        self.class == other.class
            && self.id == other.id
            && self.code_lengths == other.code_lengths
            && self.symbols == other.symbols
    }
}

/// Builds the canonical code for the given length histogram and symbol list.
///
/// Codes are assigned in increasing length, and in symbol order within a
/// length. A histogram whose Kraft sum exceeds one is rejected.
pub fn build_huffman(
    class: TableClass,
    id: u8,
    code_lengths: &[u8; 16],
    symbols: &[u8],
) -> Result<HuffmanTable, CodecError> {
    let total: usize = code_lengths.iter().map(|&c| usize::from(c)).sum();
    if total != symbols.len() || total > 256 {
        return Err(CodecError::Malformed {
            offset: 0,
            reason: format!(
                "Huffman table lists {} code lengths but {} symbols",
                total,
                symbols.len()
            ),
        });
    }

    let mut maxcode = [-1i32; 17];
    let mut offset = [0i32; 17];
    let mut lookup = vec![0u16; 1 << LOOKUP_BITS].into_boxed_slice();
    let mut encode = Box::new([(0u16, 0u8); 256]);

    let mut code: u32 = 0;
    let mut k = 0usize;
    for len in 1..=16u32 {
        let count = u32::from(code_lengths[len as usize - 1]);
        if count > 0 {
            offset[len as usize] = k as i32 - code as i32;
            for _ in 0..count {
                if code >= (1 << len) {
                    return Err(CodecError::InvalidCodeSpace);
                }
                let sym = symbols[k];
                encode[usize::from(sym)] = (code as u16, len as u8);
                if len <= LOOKUP_BITS {
                    let shift = LOOKUP_BITS - len;
                    let base = (code << shift) as usize;
                    for slot in &mut lookup[base..base + (1 << shift)] {
                        *slot = ((len as u16) << 8) | u16::from(sym);
                    }
                }
                code += 1;
                k += 1;
            }
            maxcode[len as usize] = code as i32 - 1;
        }
        if code > (1 << len) {
            return Err(CodecError::InvalidCodeSpace);
        }
        code <<= 1;
    }

    Ok(HuffmanTable {
        class,
        id,
        code_lengths: *code_lengths,
        symbols: symbols.to_vec(),
        maxcode,
        offset,
        lookup,
        encode,
    })
}

impl HuffmanTable {
    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// All (code, length) pairs in symbol-list order.
    pub fn codes(&self) -> Vec<(u16, u8)> {
        self.symbols.iter().map(|&s| self.encode[usize::from(s)]).collect()
    }

    /// Code assigned to `symbol`, if the table contains it.
    pub fn code_for(&self, symbol: u8) -> Option<(u16, u8)> {
        let (code, len) = self.encode[usize::from(symbol)];
        (len > 0).then_some((code, len))
    }

    pub fn decode(&self, reader: &mut BitReader<'_>) -> Result<u8, CodecError> {
        let peek = reader.peek(16);
        let entry = self.lookup[(peek >> (16 - LOOKUP_BITS)) as usize];
        if entry != 0 {
            reader.consume(u32::from(entry >> 8))?;
            return Ok(entry as u8);
        }
        for len in (LOOKUP_BITS + 1)..=16 {
            let code = (peek >> (16 - len)) as i32;
            if code <= self.maxcode[len as usize] {
                reader.consume(len)?;
                let index = (code + self.offset[len as usize]) as usize;
                return Ok(self.symbols[index]);
            }
        }
        // Either an empty table or bits that match no code.
        if reader.exhausted_at(1) {
            return Err(CodecError::BitstreamExhausted);
        }
        Err(CodecError::InvalidHuffmanCode {
            class: self.class.name(),
            id: self.id,
        })
    }

    pub fn encode(&self, writer: &mut BitWriter, symbol: u8) -> Result<(), CodecError> {
        let (code, len) = self.code_for(symbol).ok_or(CodecError::SymbolNotInTable {
            class: self.class.name(),
            id: self.id,
            symbol,
        })?;
        writer.put(u32::from(code), u32::from(len));
        Ok(())
    }
}

/// Annex K.3 example tables (luminance DC/AC, chrominance DC/AC).
pub mod annex_k {
    pub const DC_LUMA_LENGTHS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
    pub const DC_LUMA_SYMBOLS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

    pub const DC_CHROMA_LENGTHS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    pub const DC_CHROMA_SYMBOLS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

    pub const AC_LUMA_LENGTHS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
    pub const AC_LUMA_SYMBOLS: [u8; 162] = [
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71,
        0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72,
        0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37,
        0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
        0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83,
        0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3,
        0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
        0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
        0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa,
    ];

    pub const AC_CHROMA_LENGTHS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
    pub const AC_CHROMA_SYMBOLS: [u8; 162] = [
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22,
        0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1,
        0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36,
        0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
        0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a,
        0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a,
        0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba,
        0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
        0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa,
    ];
}
