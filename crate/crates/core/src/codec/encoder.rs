//! Minimal baseline encoder. Its job is to produce bitstreams whose exact
//! quantized content is known, so the decoder can be checked bit for bit.

use super::bits::{category, magnitude_bits, BitWriter};
use super::huffman::{annex_k, build_huffman, HuffmanTable, TableClass};
use super::{CodecError, FrameComponent, FrameHeader, QuantTable, QuantizedPlane, RgbImage};
use crate::transform::{fdct8x8, quantize, rgb_to_ycbcr_f64, Block8x8};

/// Annex K luminance quantization table, natural order.
pub const ANNEX_K_LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance quantization table, natural order.
pub const ANNEX_K_CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsampling {
    S444,
    S420,
}

/// Frame-level parameters for [`encode_baseline`].
#[derive(Debug, Clone)]
pub struct EncodeParams {
    pub width: u16,
    pub height: u16,
    pub components: Vec<FrameComponent>,
    pub quant_tables: Vec<QuantTable>,
    pub restart_interval: u16,
}

impl EncodeParams {
    /// One component, Annex K luminance table.
    pub fn gray(width: u16, height: u16) -> Self {
        EncodeParams {
            width,
            height,
            components: vec![FrameComponent {
                id: 1,
                h: 1,
                v: 1,
                quant_table: 0,
            }],
            quant_tables: vec![QuantTable::from_natural(0, &ANNEX_K_LUMA_QUANT)],
            restart_interval: 0,
        }
    }

    /// Y, Cb, Cr with Annex K tables.
    pub fn ycbcr(width: u16, height: u16, subsampling: Subsampling) -> Self {
        let f = match subsampling {
            Subsampling::S444 => 1,
            Subsampling::S420 => 2,
        };
        EncodeParams {
            width,
            height,
            components: vec![
                FrameComponent {
                    id: 1,
                    h: f,
                    v: f,
                    quant_table: 0,
                },
                FrameComponent {
                    id: 2,
                    h: 1,
                    v: 1,
                    quant_table: 1,
                },
                FrameComponent {
                    id: 3,
                    h: 1,
                    v: 1,
                    quant_table: 1,
                },
            ],
            quant_tables: vec![
                QuantTable::from_natural(0, &ANNEX_K_LUMA_QUANT),
                QuantTable::from_natural(1, &ANNEX_K_CHROMA_QUANT),
            ],
            restart_interval: 0,
        }
    }

    pub fn with_restart_interval(mut self, interval: u16) -> Self {
        self.restart_interval = interval;
        self
    }

    pub fn frame(&self) -> FrameHeader {
        FrameHeader {
            precision: 8,
            width: self.width,
            height: self.height,
            components: self.components.clone(),
        }
    }
}

struct Tables {
    dc: [HuffmanTable; 2],
    ac: [HuffmanTable; 2],
}

fn annex_k_tables() -> Tables {
    use annex_k::*;
    let b = |c, id, l: &[u8; 16], s: &[u8]| build_huffman(c, id, l, s).expect("Annex K tables are valid");
    Tables {
        dc: [
            b(TableClass::Dc, 0, &DC_LUMA_LENGTHS, &DC_LUMA_SYMBOLS),
            b(TableClass::Dc, 1, &DC_CHROMA_LENGTHS, &DC_CHROMA_SYMBOLS),
        ],
        ac: [
            b(TableClass::Ac, 0, &AC_LUMA_LENGTHS, &AC_LUMA_SYMBOLS),
            b(TableClass::Ac, 1, &AC_CHROMA_LENGTHS, &AC_CHROMA_SYMBOLS),
        ],
    }
}

fn push_segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((body.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(body);
}

fn encode_block(
    w: &mut BitWriter,
    block: &[i16; 64],
    pred: &mut i32,
    dc: &HuffmanTable,
    ac: &HuffmanTable,
) -> Result<(), CodecError> {
    let diff = i32::from(block[0]) - *pred;
    let size = category(diff);
    if size > 11 {
        return Err(CodecError::CoefficientTooLarge {
            value: diff,
            max_category: 11,
        });
    }
    dc.encode(w, size as u8)?;
    w.put(magnitude_bits(diff, size), size);
    *pred = i32::from(block[0]);

    let mut run = 0u32;
    for &n in &crate::transform::ZIGZAG_TO_NATURAL[1..] {
        let v = i32::from(block[n]);
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            ac.encode(w, 0xF0)?;
            run -= 16;
        }
        let size = category(v);
        if size > 10 {
            return Err(CodecError::CoefficientTooLarge {
                value: v,
                max_category: 10,
            });
        }
        ac.encode(w, ((run << 4) | size) as u8)?;
        w.put(magnitude_bits(v, size), size);
        run = 0;
    }
    if run > 0 {
        ac.encode(w, 0x00)?;
    }
    Ok(())
}

/// Writes SOI, DQT, SOF0, DHT, optional DRI, SOS, the entropy-coded scan and
/// EOI, using the Annex K Huffman tables (luma tables for the first
/// component, chroma tables for the rest).
///
/// Blocks that pad a partial MCU beyond the plane are coded as flat blocks
/// repeating the previous DC, so they cost two symbols each.
pub fn encode_baseline(planes: &[QuantizedPlane], params: &EncodeParams) -> Result<Vec<u8>, CodecError> {
    let frame = params.frame();
    let n = frame.components.len();
    if n != 1 && n != 3 {
        return Err(CodecError::PlaneMismatch(format!("{n} components")));
    }
    if planes.len() != n {
        return Err(CodecError::PlaneMismatch(format!(
            "{} planes for {} components",
            planes.len(),
            n
        )));
    }
    for (i, (p, c)) in planes.iter().zip(&frame.components).enumerate() {
        let expect = frame.component_blocks(i);
        if p.component_id != c.id || (p.blocks_wide, p.blocks_high) != expect {
            return Err(CodecError::PlaneMismatch(format!(
                "component {} expects {}x{} blocks, plane {} has {}x{}",
                c.id, expect.0, expect.1, p.component_id, p.blocks_wide, p.blocks_high
            )));
        }
        if p.blocks.len() != p.blocks_wide * p.blocks_high {
            return Err(CodecError::PlaneMismatch("block count".into()));
        }
        if !params.quant_tables.iter().any(|q| q.id == c.quant_table) {
            return Err(CodecError::UndefinedTable {
                kind: "quantization",
                id: c.quant_table,
            });
        }
    }
    let tables = annex_k_tables();

    let mut out = vec![0xFF, 0xD8];
    for q in &params.quant_tables {
        let mut body = vec![q.id];
        if q.zigzag.iter().all(|&v| v <= 255) {
            body.extend(q.zigzag.iter().map(|&v| v as u8));
        } else {
            body[0] |= 0x10;
            body.extend(q.zigzag.iter().flat_map(|v| v.to_be_bytes()));
        }
        push_segment(&mut out, 0xDB, &body);
    }

    let mut sof = vec![8];
    sof.extend_from_slice(&params.height.to_be_bytes());
    sof.extend_from_slice(&params.width.to_be_bytes());
    sof.push(n as u8);
    for c in &frame.components {
        sof.extend_from_slice(&[c.id, (c.h << 4) | c.v, c.quant_table]);
    }
    push_segment(&mut out, 0xC0, &sof);

    let used = if n == 1 { 1 } else { 2 };
    let mut dht = Vec::new();
    for t in tables.dc.iter().take(used).chain(tables.ac.iter().take(used)) {
        let class = if t.class == TableClass::Dc { 0 } else { 1 };
        dht.push((class << 4) | t.id);
        dht.extend_from_slice(&t.code_lengths);
        dht.extend_from_slice(&t.symbols);
    }
    push_segment(&mut out, 0xC4, &dht);

    if params.restart_interval > 0 {
        push_segment(&mut out, 0xDD, &params.restart_interval.to_be_bytes());
    }

    let mut sos = vec![n as u8];
    for (i, c) in frame.components.iter().enumerate() {
        let t = if i == 0 { 0 } else { 1 };
        sos.extend_from_slice(&[c.id, (t << 4) | t]);
    }
    sos.extend_from_slice(&[0, 63, 0]);
    push_segment(&mut out, 0xDA, &sos);

    let interleaved = n > 1;
    let (mcus_x, mcus_y) = if interleaved {
        (
            usize::from(params.width).div_ceil(8 * usize::from(frame.max_h())),
            usize::from(params.height).div_ceil(8 * usize::from(frame.max_v())),
        )
    } else {
        (planes[0].blocks_wide, planes[0].blocks_high)
    };
    let restart = usize::from(params.restart_interval);
    let mut w = BitWriter::new();
    let mut preds = vec![0i32; n];
    let mut pad = [0i16; 64];
    let mut rst = 0u8;
    for mcu in 0..mcus_x * mcus_y {
        if restart > 0 && mcu > 0 && mcu % restart == 0 {
            w.restart(rst);
            rst = rst.wrapping_add(1) & 7;
            preds.iter_mut().for_each(|p| *p = 0);
        }
        let (mx, my) = (mcu % mcus_x, mcu / mcus_x);
        for (i, (plane, c)) in planes.iter().zip(&frame.components).enumerate() {
            let (h, v) = if interleaved {
                (usize::from(c.h), usize::from(c.v))
            } else {
                (1, 1)
            };
            let t = usize::from(i > 0);
            for dy in 0..v {
                for dx in 0..h {
                    let (bx, by) = (mx * h + dx, my * v + dy);
                    let block = if bx < plane.blocks_wide && by < plane.blocks_high {
                        plane.block(bx, by)
                    } else {
                        pad[0] = preds[i] as i16;
                        &pad
                    };
                    encode_block(&mut w, block, &mut preds[i], &tables.dc[t], &tables.ac[t])?;
                }
            }
        }
    }
    out.extend_from_slice(&w.finish());
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}

/// Samples of one component padded by edge replication to whole blocks.
fn component_blocks(
    samples: &[f64],
    width: usize,
    height: usize,
    blocks_wide: usize,
    blocks_high: usize,
    table: &[u16; 64],
) -> Vec<[i16; 64]> {
    let mut blocks = Vec::with_capacity(blocks_wide * blocks_high);
    for by in 0..blocks_high {
        for bx in 0..blocks_wide {
            let mut b = Block8x8::ZERO;
            for r in 0..8 {
                let y = (by * 8 + r).min(height - 1);
                for c in 0..8 {
                    let x = (bx * 8 + c).min(width - 1);
                    b.0[r * 8 + c] = samples[y * width + x] - 128.0;
                }
            }
            blocks.push(quantize(&fdct8x8(&b), table));
        }
    }
    blocks
}

/// Colour-converts, optionally subsamples (2×2 box average), transforms and
/// quantizes an RGB image with the Annex K tables, then encodes it.
pub fn compress_rgb(image: &RgbImage, subsampling: Subsampling, restart_interval: u16) -> Result<Vec<u8>, CodecError> {
    let (w, h) = (image.width, image.height);
    let params = EncodeParams::ycbcr(
        u16::try_from(w).map_err(|_| CodecError::PlaneMismatch("width".into()))?,
        u16::try_from(h).map_err(|_| CodecError::PlaneMismatch("height".into()))?,
        subsampling,
    )
    .with_restart_interval(restart_interval);
    let frame = params.frame();
    let mut y = vec![0.0; w * h];
    let mut cb = vec![0.0; w * h];
    let mut cr = vec![0.0; w * h];
    for i in 0..w * h {
        let (a, b, c) = rgb_to_ycbcr_f64(image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2]);
        y[i] = a;
        cb[i] = b;
        cr[i] = c;
    }
    let mut planes = Vec::with_capacity(3);
    for (i, samples) in [y, cb, cr].into_iter().enumerate() {
        let (cw, ch) = frame.component_size(i);
        let (bw, bh) = frame.component_blocks(i);
        let samples = if (cw, ch) == (w, h) {
            samples
        } else {
            let mut down = vec![0.0; cw * ch];
            for yy in 0..ch {
                for xx in 0..cw {
                    let mut acc = 0.0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let sy = (2 * yy + dy).min(h - 1);
                        let sx = (2 * xx + dx).min(w - 1);
                        acc += samples[sy * w + sx];
                    }
                    down[yy * cw + xx] = acc / 4.0;
                }
            }
            down
        };
        let table = params.quant_tables[usize::from(i > 0)].natural();
        planes.push(QuantizedPlane {
            component_id: frame.components[i].id,
            blocks_wide: bw,
            blocks_high: bh,
            blocks: component_blocks(&samples, cw, ch, bw, bh, &table),
        });
    }
    encode_baseline(&planes, &params)
}

/// Single-component counterpart of [`compress_rgb`].
pub fn compress_gray(
    samples: &[u8],
    width: usize,
    height: usize,
    restart_interval: u16,
) -> Result<Vec<u8>, CodecError> {
    let params = EncodeParams::gray(
        u16::try_from(width).map_err(|_| CodecError::PlaneMismatch("width".into()))?,
        u16::try_from(height).map_err(|_| CodecError::PlaneMismatch("height".into()))?,
    )
    .with_restart_interval(restart_interval);
    let (bw, bh) = params.frame().component_blocks(0);
    let f: Vec<f64> = samples.iter().map(|&s| f64::from(s)).collect();
    let blocks = component_blocks(&f, width, height, bw, bh, &ANNEX_K_LUMA_QUANT);
    let plane = QuantizedPlane {
        component_id: 1,
        blocks_wide: bw,
        blocks_high: bh,
        blocks,
    };
    encode_baseline(&[plane], &params)
}
