//! Baseline JPEG: marker parsing, entropy decoding to quantized and
//! dequantized DCT planes, a matching baseline encoder, and a full RGB decode.
//!
//! The decode path that matters here stops at dequantization
//! ([`partial_decode`]). [`full_decode`] continues through inverse DCT,
//! upsampling and colour conversion and exists for conformance checks and as
//! the timing baseline.

mod bits;
mod encoder;
mod huffman;
mod markers;
mod scan;
pub mod tensor_file;

use thiserror::Error;

pub use bits::{BitReader, BitWriter};
pub use encoder::{
    compress_gray, compress_rgb, encode_baseline, EncodeParams, Subsampling, ANNEX_K_CHROMA_QUANT, ANNEX_K_LUMA_QUANT,
};
pub use huffman::{annex_k, build_huffman, HuffmanTable, TableClass};
pub use markers::{parse_markers, SegmentInfo};
pub use scan::decode_scan;

use crate::transform::{idct8x8, round_sample, unshift_clamp, ycbcr_to_rgb, Block8x8, ZIGZAG_TO_NATURAL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unsupported {
    Progressive,
    Lossless,
    Hierarchical,
    ExtendedSequential,
    ArithmeticCoding,
    Precision(u8),
    Sampling(String),
    ComponentCount(usize),
    MultipleScans,
    PartialScan,
}

impl std::fmt::Display for Unsupported {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Unsupported::Progressive => write!(f, "progressive (SOF2)"),
            Unsupported::Lossless => write!(f, "lossless (SOF3)"),
            Unsupported::Hierarchical => write!(f, "hierarchical (SOF5-SOF7)"),
            Unsupported::ExtendedSequential => write!(f, "extended sequential (SOF1)"),
            Unsupported::ArithmeticCoding => write!(f, "arithmetic coding (SOF9-SOF15)"),
            Unsupported::Precision(p) => write!(f, "{p}-bit precision"),
            Unsupported::Sampling(s) => write!(f, "unsupported sampling {s}"),
            Unsupported::ComponentCount(n) => write!(f, "{n} components"),
            Unsupported::MultipleScans => write!(f, "multiple scans"),
            Unsupported::PartialScan => write!(f, "scan does not cover every component"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("not a JPEG file (missing SOI)")]
    MissingSoi,
    #[error("missing frame header")]
    MissingFrameHeader,
    #[error("missing scan header")]
    MissingScanHeader,
    #[error("truncated {segment} segment at offset {offset}")]
    Truncated { segment: &'static str, offset: usize },
    #[error("malformed data at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(Unsupported),
    #[error("duplicate {kind} table {id} with different contents")]
    DuplicateTable { kind: &'static str, id: u8 },
    #[error("{kind} table {id} referenced but never defined")]
    UndefinedTable { kind: &'static str, id: u8 },
    #[error("quantization table {id} has a zero entry")]
    ZeroQuantEntry { id: u8 },
    #[error("invalid code space")]
    InvalidCodeSpace,
    #[error("invalid {class} Huffman code in table {id}")]
    InvalidHuffmanCode { class: &'static str, id: u8 },
    #[error("symbol {symbol:#04x} not present in {class} table {id}")]
    SymbolNotInTable { class: &'static str, id: u8, symbol: u8 },
    #[error("entropy-coded data exhausted mid-block")]
    BitstreamExhausted,
    #[error("entropy-coded data exhausted mid-block in MCU {mcu}")]
    ExhaustedAt { mcu: usize },
    #[error("invalid run/size symbol {symbol:#04x} in MCU {mcu}")]
    InvalidSymbol { symbol: u8, mcu: usize },
    #[error("restart marker at wrong MCU index {mcu} (expected RST{expected}, found {found})")]
    RestartMismatch { mcu: usize, expected: u8, found: String },
    #[error("coefficient {value} out of range at MCU {mcu}")]
    CoefficientRange { value: i32, mcu: usize },
    #[error("cannot encode coefficient {value}: exceeds category {max_category}")]
    CoefficientTooLarge { value: i32, max_category: u32 },
    #[error("plane mismatch: {0}")]
    PlaneMismatch(String),
    #[error("tensor file: {0}")]
    TensorFile(String),
}

impl CodecError {
    pub fn is_unsupported(&self) -> bool {
        matches!(self, CodecError::Unsupported(_))
    }
}

/// A quantization table as stored in DQT: zigzag order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable {
    pub id: u8,
    pub zigzag: [u16; 64],
}

impl QuantTable {
    pub fn from_natural(id: u8, natural: &[u16; 64]) -> Self {
        QuantTable {
            id,
            zigzag: crate::transform::zigzag(natural),
        }
    }

    pub fn natural(&self) -> [u16; 64] {
        crate::transform::unzigzag(&self.zigzag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameComponent {
    pub id: u8,
    pub h: u8,
    pub v: u8,
    pub quant_table: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameHeader {
    pub precision: u8,
    pub width: u16,
    pub height: u16,
    pub components: Vec<FrameComponent>,
}

impl FrameHeader {
    pub fn max_h(&self) -> u8 {
        self.components.iter().map(|c| c.h).max().unwrap_or(1)
    }

    pub fn max_v(&self) -> u8 {
        self.components.iter().map(|c| c.v).max().unwrap_or(1)
    }

    /// Pixel extent of a component: ceil(W·h / h_max) × ceil(H·v / v_max).
    pub fn component_size(&self, index: usize) -> (usize, usize) {
        let c = &self.components[index];
        let w = (usize::from(self.width) * usize::from(c.h)).div_ceil(usize::from(self.max_h()));
        let h = (usize::from(self.height) * usize::from(c.v)).div_ceil(usize::from(self.max_v()));
        (w, h)
    }

    /// Block grid of a component, padding blocks included.
    pub fn component_blocks(&self, index: usize) -> (usize, usize) {
        let (w, h) = self.component_size(index);
        (w.div_ceil(8), h.div_ceil(8))
    }

    pub fn layout(&self) -> Layout {
        if self.components.len() == 1 {
            Layout::Gray
        } else if self.components.iter().all(|c| c.h == 1 && c.v == 1) {
            Layout::Yuv444
        } else {
            Layout::Yuv420
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Gray,
    Yuv444,
    Yuv420,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Gray => "grayscale",
            Layout::Yuv444 => "4:4:4",
            Layout::Yuv420 => "4:2:0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanComponent {
    pub id: u8,
    pub dc_table: u8,
    pub ac_table: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanHeader {
    pub components: Vec<ScanComponent>,
    pub spectral_start: u8,
    pub spectral_end: u8,
    pub approx: u8,
}

/// Parsed view of a baseline JPEG. Borrows the scan payload from the input.
#[derive(Debug, Clone)]
pub struct JpegStructure<'a> {
    pub quant_tables: [Option<QuantTable>; 4],
    pub dc_tables: [Option<HuffmanTable>; 4],
    pub ac_tables: [Option<HuffmanTable>; 4],
    pub frame: FrameHeader,
    pub scan: ScanHeader,
    pub restart_interval: u16,
    /// Raw (still byte-stuffed) entropy-coded data of the scan.
    pub entropy_data: &'a [u8],
    pub entropy_offset: usize,
    /// Every marker segment seen, in file order.
    pub segments: Vec<SegmentInfo>,
}

impl JpegStructure<'_> {
    pub fn quant_table_for(&self, component_id: u8) -> Option<&QuantTable> {
        let c = self.frame.components.iter().find(|c| c.id == component_id)?;
        self.quant_tables[usize::from(c.quant_table)].as_ref()
    }
}

/// Quantized coefficients of one component, natural order within each block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedPlane {
    pub component_id: u8,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    pub blocks: Vec<[i16; 64]>,
}

impl QuantizedPlane {
    pub fn zeros(component_id: u8, blocks_wide: usize, blocks_high: usize) -> Self {
        QuantizedPlane {
            component_id,
            blocks_wide,
            blocks_high,
            blocks: vec![[0; 64]; blocks_wide * blocks_high],
        }
    }

    pub fn block(&self, bx: usize, by: usize) -> &[i16; 64] {
        &self.blocks[by * self.blocks_wide + bx]
    }
}

/// Dequantized DCT coefficients of one component.
///
/// Block (bx, by) covers pixels [8·bx, 8·bx+8) × [8·by, 8·by+8) of the
/// padded component; coefficients are natural order and integer-valued.
#[derive(Debug, Clone, PartialEq)]
pub struct DctPlane {
    pub component_id: u8,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    pub blocks: Vec<[f32; 64]>,
}

impl DctPlane {
    pub fn block(&self, bx: usize, by: usize) -> &[f32; 64] {
        &self.blocks[by * self.blocks_wide + bx]
    }

    /// Total coefficient count (blocks × 64).
    pub fn len(&self) -> usize {
        self.blocks.len() * 64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// out[k] = quantized[k] · table[k], with the table taken from zigzag to
/// natural order here and nowhere else.
pub fn dequantize_plane(plane: &QuantizedPlane, table: &QuantTable) -> DctPlane {
    let mut natural = [0u16; 64];
    for (z, &n) in ZIGZAG_TO_NATURAL.iter().enumerate() {
        natural[n] = table.zigzag[z];
    }
    let blocks = plane
        .blocks
        .iter()
        .map(|b| {
            let mut out = [0f32; 64];
            for k in 0..64 {
                out[k] = f32::from(b[k]) * f32::from(natural[k]);
            }
            out
        })
        .collect();
    DctPlane {
        component_id: plane.component_id,
        blocks_wide: plane.blocks_wide,
        blocks_high: plane.blocks_high,
        blocks,
    }
}

/// The coefficient planes of one image, luma first.
#[derive(Debug, Clone, PartialEq)]
pub struct DctImage {
    pub width: usize,
    pub height: usize,
    pub layout: Layout,
    pub y: DctPlane,
    pub cb: Option<DctPlane>,
    pub cr: Option<DctPlane>,
}

impl DctImage {
    pub fn planes(&self) -> Vec<&DctPlane> {
        std::iter::once(&self.y)
            .chain(self.cb.as_ref())
            .chain(self.cr.as_ref())
            .collect()
    }
}

/// Parse → entropy decode → dequantize. No inverse DCT, no upsampling,
/// no colour conversion.
pub fn partial_decode(bytes: &[u8]) -> Result<DctImage, CodecError> {
    let structure = parse_markers(bytes)?;
    dct_image_from(&structure)
}

fn dct_image_from(structure: &JpegStructure<'_>) -> Result<DctImage, CodecError> {
    let planes = decode_scan(structure)?;
    let mut deq = Vec::with_capacity(planes.len());
    for plane in &planes {
        let table = structure
            .quant_table_for(plane.component_id)
            .ok_or(CodecError::UndefinedTable {
                kind: "quantization",
                id: plane.component_id,
            })?;
        deq.push(dequantize_plane(plane, table));
    }
    let mut it = deq.into_iter();
    let y = it.next().ok_or(CodecError::MissingScanHeader)?;
    Ok(DctImage {
        width: usize::from(structure.frame.width),
        height: usize::from(structure.frame.height),
        layout: structure.frame.layout(),
        y,
        cb: it.next(),
        cr: it.next(),
    })
}

/// Interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Spatial samples of a plane after inverse DCT, level shift and clamping.
struct SamplePlane {
    width: usize,
    data: Vec<f32>,
}

fn reconstruct(plane: &DctPlane) -> SamplePlane {
    let width = plane.blocks_wide * 8;
    let mut data = vec![0f32; width * plane.blocks_high * 8];
    for by in 0..plane.blocks_high {
        for bx in 0..plane.blocks_wide {
            let mut coeffs = Block8x8::ZERO;
            for (c, &v) in coeffs.0.iter_mut().zip(plane.block(bx, by).iter()) {
                *c = f64::from(v);
            }
            let samples = unshift_clamp(&idct8x8(&coeffs));
            for r in 0..8 {
                let row = (by * 8 + r) * width + bx * 8;
                for c in 0..8 {
                    data[row + c] = round_sample(samples[r * 8 + c]) as f32;
                }
            }
        }
    }
    SamplePlane { width, data }
}

/// Complete decode to RGB: inverse DCT, +128, clamp, nearest-neighbour chroma
/// upsampling, BT.601 conversion, crop to the declared size.
pub fn full_decode(bytes: &[u8]) -> Result<RgbImage, CodecError> {
    let structure = parse_markers(bytes)?;
    let dct = dct_image_from(&structure)?;
    let frame = &structure.frame;
    let (w, h) = (dct.width, dct.height);
    let mut out = RgbImage::new(w, h);
    let y = reconstruct(&dct.y);
    match (&dct.cb, &dct.cr) {
        (Some(cb), Some(cr)) => {
            let cb = reconstruct(cb);
            let cr = reconstruct(cr);
            let (hmax, vmax) = (usize::from(frame.max_h()), usize::from(frame.max_v()));
            let (ch, cv) = (usize::from(frame.components[1].h), usize::from(frame.components[1].v));
            for py in 0..h {
                let cy = py * cv / vmax;
                for px in 0..w {
                    let cx = px * ch / hmax;
                    let yv = y.data[py * y.width + px];
                    let cbv = cb.data[cy * cb.width + cx];
                    let crv = cr.data[cy * cr.width + cx];
                    let (r, g, b) = ycbcr_to_rgb(yv.into(), cbv.into(), crv.into());
                    let i = (py * w + px) * 3;
                    out.data[i..i + 3].copy_from_slice(&[r, g, b]);
                }
            }
        }
        _ => {
            for py in 0..h {
                for px in 0..w {
                    let (r, g, b) = ycbcr_to_rgb(y.data[py * y.width + px].into(), 128.0, 128.0);
                    let i = (py * w + px) * 3;
                    out.data[i..i + 3].copy_from_slice(&[r, g, b]);
                }
            }
        }
    }
    Ok(out)
}
