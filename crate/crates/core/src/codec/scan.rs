//! Huffman decoding of a baseline scan into quantized coefficient planes.

use super::bits::BitReader;
use super::huffman::HuffmanTable;
use super::{CodecError, JpegStructure, QuantizedPlane};
use crate::transform::ZIGZAG_TO_NATURAL;

struct ComponentState<'t> {
    h: usize,
    v: usize,
    dc: &'t HuffmanTable,
    ac: &'t HuffmanTable,
    pred: i32,
}

/// Decodes the scan of `structure` into one plane per frame component.
///
/// Coefficients come out in natural order. DC prediction restarts at zero at
/// the beginning of the scan and after every restart marker. Blocks that only
/// exist to complete a partial MCU are decoded and dropped, so every plane has
/// exactly ceil(component_size / 8) blocks per axis.
pub fn decode_scan(structure: &JpegStructure<'_>) -> Result<Vec<QuantizedPlane>, CodecError> {
    let frame = &structure.frame;
    let mut planes = Vec::with_capacity(frame.components.len());
    let mut states = Vec::with_capacity(frame.components.len());
    for (i, (fc, sc)) in frame.components.iter().zip(&structure.scan.components).enumerate() {
        let (bw, bh) = frame.component_blocks(i);
        planes.push(QuantizedPlane::zeros(fc.id, bw, bh));
        states.push(ComponentState {
            h: usize::from(fc.h),
            v: usize::from(fc.v),
            dc: structure.dc_tables[usize::from(sc.dc_table)]
                .as_ref()
                .ok_or(CodecError::UndefinedTable {
                    kind: "DC Huffman",
                    id: sc.dc_table,
                })?,
            ac: structure.ac_tables[usize::from(sc.ac_table)]
                .as_ref()
                .ok_or(CodecError::UndefinedTable {
                    kind: "AC Huffman",
                    id: sc.ac_table,
                })?,
            pred: 0,
        });
    }

    let interleaved = planes.len() > 1;
    let (mcus_x, mcus_y) = if interleaved {
        let mw = 8 * usize::from(frame.max_h());
        let mh = 8 * usize::from(frame.max_v());
        (
            usize::from(frame.width).div_ceil(mw),
            usize::from(frame.height).div_ceil(mh),
        )
    } else {
        (planes[0].blocks_wide, planes[0].blocks_high)
    };

    let restart = usize::from(structure.restart_interval);
    let mut reader = BitReader::new(structure.entropy_data);
    let mut next_rst = 0u8;
    let mut block = [0i16; 64];

    for mcu in 0..mcus_x * mcus_y {
        if restart > 0 && mcu > 0 && mcu % restart == 0 {
            match reader.take_restart() {
                Some(n) if n == next_rst => {}
                other => {
                    return Err(CodecError::RestartMismatch {
                        mcu,
                        expected: next_rst,
                        found: match other {
                            Some(n) => format!("RST{n}"),
                            None => "no marker".into(),
                        },
                    })
                }
            }
            next_rst = (next_rst + 1) & 7;
            for s in states.iter_mut() {
                s.pred = 0;
            }
        } else if mcu > 0 {
            if let Some(m @ 0xD0..=0xD7) = reader.pending_marker() {
                if reader.remaining_real_bits() < 8 {
                    return Err(CodecError::RestartMismatch {
                        mcu,
                        expected: next_rst,
                        found: format!("RST{} before the interval ended", m - 0xD0),
                    });
                }
            }
        }

        let (mx, my) = (mcu % mcus_x, mcu / mcus_x);
        for (plane, state) in planes.iter_mut().zip(states.iter_mut()) {
            let (h, v) = if interleaved { (state.h, state.v) } else { (1, 1) };
            for dy in 0..v {
                for dx in 0..h {
                    decode_block(&mut reader, state, &mut block, mcu)?;
                    let bx = mx * h + dx;
                    let by = my * v + dy;
                    if bx < plane.blocks_wide && by < plane.blocks_high {
                        plane.blocks[by * plane.blocks_wide + bx] = block;
                    }
                }
            }
        }
    }
    Ok(planes)
}

fn decode_block(
    reader: &mut BitReader<'_>,
    state: &mut ComponentState<'_>,
    out: &mut [i16; 64],
    mcu: usize,
) -> Result<(), CodecError> {
    let exhausted = |e: CodecError| match e {
        CodecError::BitstreamExhausted => CodecError::ExhaustedAt { mcu },
        other => other,
    };
    *out = [0; 64];

    let size = state.dc.decode(reader).map_err(exhausted)?;
    if size > 11 {
        return Err(CodecError::InvalidSymbol { symbol: size, mcu });
    }
    let diff = reader.receive_extend(u32::from(size)).map_err(exhausted)?;
    state.pred += diff;
    if !(-32768..=32767).contains(&state.pred) {
        return Err(CodecError::CoefficientRange { value: state.pred, mcu });
    }
    out[0] = state.pred as i16;

    let mut k = 1usize;
    while k < 64 {
        let rs = state.ac.decode(reader).map_err(exhausted)?;
        let run = usize::from(rs >> 4);
        let size = rs & 0x0F;
        if size == 0 {
            match run {
                0 => break,
                15 => {
                    k += 16;
                    if k > 64 {
                        return Err(CodecError::InvalidSymbol { symbol: rs, mcu });
                    }
                    continue;
                }
                _ => return Err(CodecError::InvalidSymbol { symbol: rs, mcu }),
            }
        }
        if size > 10 {
            return Err(CodecError::InvalidSymbol { symbol: rs, mcu });
        }
        k += run;
        if k > 63 {
            return Err(CodecError::InvalidSymbol { symbol: rs, mcu });
        }
        let value = reader.receive_extend(u32::from(size)).map_err(exhausted)?;
        out[ZIGZAG_TO_NATURAL[k]] = value as i16;
        k += 1;
    }
    Ok(())
}
