//! Marker-segment parsing up to and including the (single) scan.

use super::huffman::{build_huffman, HuffmanTable, TableClass};
use super::{
    CodecError, FrameComponent, FrameHeader, JpegStructure, QuantTable, ScanComponent, ScanHeader, Unsupported,
};

const SOI: u8 = 0xD8;
const EOI: u8 = 0xD9;
const SOF0: u8 = 0xC0;
const DHT: u8 = 0xC4;
const DQT: u8 = 0xDB;
const DRI: u8 = 0xDD;
const SOS: u8 = 0xDA;
const DAC: u8 = 0xCC;

/// One marker as seen in the file: `offset` points at its 0xFF byte,
/// `length` is the segment length field (0 for stand-alone markers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentInfo {
    pub marker: u8,
    pub offset: usize,
    pub length: usize,
}

impl SegmentInfo {
    pub fn name(&self) -> String {
        marker_name(self.marker)
    }
}

pub fn marker_name(m: u8) -> String {
    match m {
        SOI => "SOI".into(),
        EOI => "EOI".into(),
        DHT => "DHT".into(),
        DQT => "DQT".into(),
        DRI => "DRI".into(),
        SOS => "SOS".into(),
        DAC => "DAC".into(),
        0xFE => "COM".into(),
        0xC0..=0xCF => format!("SOF{}", m - 0xC0),
        0xD0..=0xD7 => format!("RST{}", m - 0xD0),
        0xE0..=0xEF => format!("APP{}", m - 0xE0),
        _ => format!("0x{m:02X}"),
    }
}

fn sof_unsupported(m: u8) -> Unsupported {
    match m {
        0xC1 => Unsupported::ExtendedSequential,
        0xC2 => Unsupported::Progressive,
        0xC3 => Unsupported::Lossless,
        0xC5..=0xC7 => Unsupported::Hierarchical,
        _ => Unsupported::ArithmeticCoding,
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn segment(&mut self, name: &'static str) -> Result<(&'a [u8], usize), CodecError> {
        let start = self.pos;
        if self.pos + 2 > self.data.len() {
            return Err(CodecError::Truncated {
                segment: name,
                offset: start,
            });
        }
        let len = usize::from(u16::from_be_bytes([self.data[self.pos], self.data[self.pos + 1]]));
        if len < 2 || self.pos + len > self.data.len() {
            return Err(CodecError::Truncated {
                segment: name,
                offset: start,
            });
        }
        let body = &self.data[self.pos + 2..self.pos + len];
        self.pos += len;
        Ok((body, len))
    }
}

/// Parses everything up to the end of the first scan's entropy-coded data.
///
/// Byte stuffing in the scan payload is left in place. APPn and COM segments
/// are skipped but listed in `segments`.
pub fn parse_markers(bytes: &[u8]) -> Result<JpegStructure<'_>, CodecError> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err(CodecError::MissingSoi);
    }
    let mut cur = Cursor { data: bytes, pos: 2 };
    let mut segments = vec![SegmentInfo {
        marker: SOI,
        offset: 0,
        length: 0,
    }];
    let mut quant: [Option<QuantTable>; 4] = Default::default();
    let mut dc: [Option<HuffmanTable>; 4] = Default::default();
    let mut ac: [Option<HuffmanTable>; 4] = Default::default();
    let mut frame: Option<FrameHeader> = None;
    let mut restart_interval = 0u16;

    loop {
        // find the next marker, tolerating fill bytes
        if cur.pos >= bytes.len() {
            return Err(if frame.is_none() {
                CodecError::MissingFrameHeader
            } else {
                CodecError::MissingScanHeader
            });
        }
        if bytes[cur.pos] != 0xFF {
            return Err(CodecError::Malformed {
                offset: cur.pos,
                reason: format!("expected marker, found byte {:#04x}", bytes[cur.pos]),
            });
        }
        let offset = cur.pos;
        while cur.pos < bytes.len() && bytes[cur.pos] == 0xFF {
            cur.pos += 1;
        }
        let Some(&marker) = bytes.get(cur.pos) else {
            return Err(CodecError::Truncated {
                segment: "marker",
                offset,
            });
        };
        cur.pos += 1;

        match marker {
            EOI => {
                segments.push(SegmentInfo {
                    marker,
                    offset,
                    length: 0,
                });
                return Err(if frame.is_none() {
                    CodecError::MissingFrameHeader
                } else {
                    CodecError::MissingScanHeader
                });
            }
            0xD0..=0xD7 | 0x01 => {
                segments.push(SegmentInfo {
                    marker,
                    offset,
                    length: 0,
                });
            }
            DQT => {
                let (body, length) = cur.segment("DQT")?;
                segments.push(SegmentInfo { marker, offset, length });
                parse_dqt(body, offset, &mut quant)?;
            }
            DHT => {
                let (body, length) = cur.segment("DHT")?;
                segments.push(SegmentInfo { marker, offset, length });
                parse_dht(body, offset, &mut dc, &mut ac)?;
            }
            DRI => {
                let (body, length) = cur.segment("DRI")?;
                segments.push(SegmentInfo { marker, offset, length });
                if body.len() != 2 {
                    return Err(CodecError::Malformed {
                        offset,
                        reason: "DRI length must be 4".into(),
                    });
                }
                restart_interval = u16::from_be_bytes([body[0], body[1]]);
            }
            SOF0 => {
                let (body, length) = cur.segment("SOF0")?;
                segments.push(SegmentInfo { marker, offset, length });
                if frame.is_some() {
                    return Err(CodecError::Malformed {
                        offset,
                        reason: "second frame header".into(),
                    });
                }
                frame = Some(parse_sof(body, offset)?);
            }
            0xC1..=0xCF if marker != DHT && marker != DAC && marker != 0xC8 => {
                return Err(CodecError::Unsupported(sof_unsupported(marker)));
            }
            DAC => return Err(CodecError::Unsupported(Unsupported::ArithmeticCoding)),
            SOS => {
                let (body, length) = cur.segment("SOS")?;
                segments.push(SegmentInfo { marker, offset, length });
                let frame = frame.ok_or(CodecError::MissingFrameHeader)?;
                let scan = parse_sos(body, offset, &frame)?;
                check_tables(&frame, &scan, &quant, &dc, &ac)?;
                let start = cur.pos;
                let end = find_scan_end(bytes, start);
                if has_second_scan(bytes, end) {
                    return Err(CodecError::Unsupported(Unsupported::MultipleScans));
                }
                let mut tail = end;
                while tail < bytes.len() && bytes[tail] == 0xFF {
                    tail += 1;
                }
                if bytes.get(tail) == Some(&EOI) {
                    segments.push(SegmentInfo {
                        marker: EOI,
                        offset: end,
                        length: 0,
                    });
                }
                return Ok(JpegStructure {
                    quant_tables: quant,
                    dc_tables: dc,
                    ac_tables: ac,
                    frame,
                    scan,
                    restart_interval,
                    entropy_data: &bytes[start..end],
                    entropy_offset: start,
                    segments,
                });
            }
            _ => {
                // APPn, COM and anything else carrying a length: skip
                let (_, length) = cur.segment("APP/COM")?;
                segments.push(SegmentInfo { marker, offset, length });
            }
        }
    }
}

/// Offset of the first marker after `start` that is neither stuffing nor RSTn.
fn find_scan_end(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i + 1 < bytes.len() {
        if bytes[i] == 0xFF {
            let next = bytes[i + 1];
            if next == 0x00 || (0xD0..=0xD7).contains(&next) || next == 0xFF {
                i += if next == 0xFF { 1 } else { 2 };
                continue;
            }
            return i;
        }
        i += 1;
    }
    bytes.len()
}

/// Walks marker segments after the first scan looking for another SOS.
fn has_second_scan(bytes: &[u8], mut pos: usize) -> bool {
    while pos + 1 < bytes.len() {
        if bytes[pos] != 0xFF {
            return false;
        }
        let m = bytes[pos + 1];
        match m {
            0xFF => pos += 1,
            EOI => return false,
            SOS => return true,
            0xD0..=0xD7 | 0x01 => pos += 2,
            _ => {
                if pos + 4 > bytes.len() {
                    return false;
                }
                let len = usize::from(u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]));
                pos += 2 + len;
            }
        }
    }
    false
}

fn parse_dqt(body: &[u8], offset: usize, quant: &mut [Option<QuantTable>; 4]) -> Result<(), CodecError> {
    let mut i = 0;
    while i < body.len() {
        let pq = body[i] >> 4;
        let tq = body[i] & 0x0F;
        i += 1;
        if tq > 3 || pq > 1 {
            return Err(CodecError::Malformed {
                offset,
                reason: format!("bad DQT precision/id byte {:#04x}", body[i - 1]),
            });
        }
        let width = if pq == 0 { 1 } else { 2 };
        if i + 64 * width > body.len() {
            return Err(CodecError::Truncated { segment: "DQT", offset });
        }
        let mut zigzag = [0u16; 64];
        for (k, v) in zigzag.iter_mut().enumerate() {
            *v = if pq == 0 {
                u16::from(body[i + k])
            } else {
                u16::from_be_bytes([body[i + 2 * k], body[i + 2 * k + 1]])
            };
        }
        i += 64 * width;
        if zigzag.contains(&0) {
            return Err(CodecError::ZeroQuantEntry { id: tq });
        }
        let table = QuantTable { id: tq, zigzag };
        let slot = &mut quant[usize::from(tq)];
        if let Some(existing) = slot {
            if *existing != table {
                return Err(CodecError::DuplicateTable {
                    kind: "quantization",
                    id: tq,
                });
            }
        }
        *slot = Some(table);
    }
    Ok(())
}

fn parse_dht(
    body: &[u8],
    offset: usize,
    dc: &mut [Option<HuffmanTable>; 4],
    ac: &mut [Option<HuffmanTable>; 4],
) -> Result<(), CodecError> {
    let mut i = 0;
    while i < body.len() {
        if i + 17 > body.len() {
            return Err(CodecError::Truncated { segment: "DHT", offset });
        }
        let tc = body[i] >> 4;
        let th = body[i] & 0x0F;
        if tc > 1 || th > 3 {
            return Err(CodecError::Malformed {
                offset,
                reason: format!("bad DHT class/id byte {:#04x}", body[i]),
            });
        }
        let mut lengths = [0u8; 16];
        lengths.copy_from_slice(&body[i + 1..i + 17]);
        let n: usize = lengths.iter().map(|&l| usize::from(l)).sum();
        i += 17;
        if i + n > body.len() {
            return Err(CodecError::Truncated { segment: "DHT", offset });
        }
        let class = if tc == 0 { TableClass::Dc } else { TableClass::Ac };
        let table = build_huffman(class, th, &lengths, &body[i..i + n])?;
        i += n;
        let slot = if tc == 0 {
            &mut dc[usize::from(th)]
        } else {
            &mut ac[usize::from(th)]
        };
        if let Some(existing) = slot {
            if *existing != table {
                return Err(CodecError::DuplicateTable {
                    kind: if tc == 0 { "DC Huffman" } else { "AC Huffman" },
                    id: th,
                });
            }
        }
        *slot = Some(table);
    }
    Ok(())
}

fn parse_sof(body: &[u8], offset: usize) -> Result<FrameHeader, CodecError> {
    if body.len() < 6 {
        return Err(CodecError::Truncated {
            segment: "SOF0",
            offset,
        });
    }
    let precision = body[0];
    if precision != 8 {
        return Err(CodecError::Unsupported(Unsupported::Precision(precision)));
    }
    let height = u16::from_be_bytes([body[1], body[2]]);
    let width = u16::from_be_bytes([body[3], body[4]]);
    let n = usize::from(body[5]);
    if body.len() < 6 + 3 * n {
        return Err(CodecError::Truncated {
            segment: "SOF0",
            offset,
        });
    }
    if width == 0 || height == 0 {
        return Err(CodecError::Malformed {
            offset,
            reason: "zero image dimension".into(),
        });
    }
    if n != 1 && n != 3 {
        return Err(CodecError::Unsupported(Unsupported::ComponentCount(n)));
    }
    let components: Vec<FrameComponent> = body[6..6 + 3 * n]
        .chunks_exact(3)
        .map(|c| FrameComponent {
            id: c[0],
            h: c[1] >> 4,
            v: c[1] & 0x0F,
            quant_table: c[2],
        })
        .collect();
    for c in &components {
        if !(1..=2).contains(&c.h) || !(1..=2).contains(&c.v) {
            return Err(CodecError::Unsupported(Unsupported::Sampling(format!(
                "factor {}x{} on component {}",
                c.h, c.v, c.id
            ))));
        }
        if c.quant_table > 3 {
            return Err(CodecError::Malformed {
                offset,
                reason: format!("quantization table id {} out of range", c.quant_table),
            });
        }
    }
    if n == 3 {
        let factors: Vec<(u8, u8)> = components.iter().map(|c| (c.h, c.v)).collect();
        let ok = factors == [(1, 1), (1, 1), (1, 1)] || factors == [(2, 2), (1, 1), (1, 1)];
        if !ok {
            let s = factors
                .iter()
                .map(|(h, v)| format!("{h}x{v}"))
                .collect::<Vec<_>>()
                .join(",");
            return Err(CodecError::Unsupported(Unsupported::Sampling(s)));
        }
    }
    let mut frame = FrameHeader {
        precision,
        width,
        height,
        components,
    };
    if n == 1 {
        // a lone component is always coded non-interleaved at full size
        frame.components[0].h = 1;
        frame.components[0].v = 1;
    }
    Ok(frame)
}

fn parse_sos(body: &[u8], offset: usize, frame: &FrameHeader) -> Result<ScanHeader, CodecError> {
    if body.is_empty() {
        return Err(CodecError::Truncated { segment: "SOS", offset });
    }
    let n = usize::from(body[0]);
    if body.len() < 1 + 2 * n + 3 {
        return Err(CodecError::Truncated { segment: "SOS", offset });
    }
    let components: Vec<ScanComponent> = body[1..1 + 2 * n]
        .chunks_exact(2)
        .map(|c| ScanComponent {
            id: c[0],
            dc_table: c[1] >> 4,
            ac_table: c[1] & 0x0F,
        })
        .collect();
    let tail = &body[1 + 2 * n..];
    let scan = ScanHeader {
        components,
        spectral_start: tail[0],
        spectral_end: tail[1],
        approx: tail[2],
    };
    if scan.spectral_start != 0 || scan.spectral_end != 63 || scan.approx != 0 {
        return Err(CodecError::Malformed {
            offset,
            reason: "baseline scan must cover spectral range 0..63 with no approximation".into(),
        });
    }
    if n != frame.components.len() {
        return Err(CodecError::Unsupported(Unsupported::PartialScan));
    }
    for (sc, fc) in scan.components.iter().zip(&frame.components) {
        if sc.id != fc.id {
            return Err(CodecError::Malformed {
                offset,
                reason: format!("scan component {} does not follow frame order", sc.id),
            });
        }
        if sc.dc_table > 3 || sc.ac_table > 3 {
            return Err(CodecError::Malformed {
                offset,
                reason: "Huffman table id out of range".into(),
            });
        }
    }
    Ok(scan)
}

fn check_tables(
    frame: &FrameHeader,
    scan: &ScanHeader,
    quant: &[Option<QuantTable>; 4],
    dc: &[Option<HuffmanTable>; 4],
    ac: &[Option<HuffmanTable>; 4],
) -> Result<(), CodecError> {
    for c in &frame.components {
        if quant[usize::from(c.quant_table)].is_none() {
            return Err(CodecError::UndefinedTable {
                kind: "quantization",
                id: c.quant_table,
            });
        }
    }
    for c in &scan.components {
        if dc[usize::from(c.dc_table)].is_none() {
            return Err(CodecError::UndefinedTable {
                kind: "DC Huffman",
                id: c.dc_table,
            });
        }
        if ac[usize::from(c.ac_table)].is_none() {
            return Err(CodecError::UndefinedTable {
                kind: "AC Huffman",
                id: c.ac_table,
            });
        }
    }
    Ok(())
}
