//! "DCTT" coefficient tensor files.
//!
//! Layout: magic `DCTT`, version u8 = 1, component count u8, then per
//! component: id u8, blocks_wide u16 LE, blocks_high u16 LE, followed by
//! blocks_wide × blocks_high × 64 little-endian f32 values (block-row-major,
//! natural frequency order within a block).

use super::{CodecError, DctPlane};

pub const MAGIC: &[u8; 4] = b"DCTT";
pub const VERSION: u8 = 1;

pub fn write_tensor_file(planes: &[&DctPlane]) -> Result<Vec<u8>, CodecError> {
    let count = u8::try_from(planes.len()).map_err(|_| CodecError::TensorFile("too many components".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(count);
    for p in planes {
        let bw = u16::try_from(p.blocks_wide).map_err(|_| CodecError::TensorFile("plane too wide".into()))?;
        let bh = u16::try_from(p.blocks_high).map_err(|_| CodecError::TensorFile("plane too tall".into()))?;
        out.push(p.component_id);
        out.extend_from_slice(&bw.to_le_bytes());
        out.extend_from_slice(&bh.to_le_bytes());
        out.reserve(p.blocks.len() * 256);
        for block in &p.blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_tensor_file(bytes: &[u8]) -> Result<Vec<DctPlane>, CodecError> {
    let err = |m: &str| CodecError::TensorFile(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(err(&format!("unsupported version {}", bytes[4])));
    }
    let count = usize::from(bytes[5]);
    let mut pos = 6;
    let mut planes = Vec::with_capacity(count);
    for _ in 0..count {
        let head = bytes.get(pos..pos + 5).ok_or_else(|| err("truncated header"))?;
        let id = head[0];
        let bw = usize::from(u16::from_le_bytes([head[1], head[2]]));
        let bh = usize::from(u16::from_le_bytes([head[3], head[4]]));
        pos += 5;
        let n = bw * bh;
        let body = bytes
            .get(pos..pos + n * 256)
            .ok_or_else(|| err("truncated coefficients"))?;
        let blocks = body
            .chunks_exact(256)
            .map(|chunk| {
                let mut b = [0f32; 64];
                for (v, c) in b.iter_mut().zip(chunk.chunks_exact(4)) {
                    *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                }
                b
            })
            .collect();
        pos += n * 256;
        planes.push(DctPlane {
            component_id: id,
            blocks_wide: bw,
            blocks_high: bh,
            blocks,
        });
    }
    if pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let p = DctPlane {
            component_id: 7,
            blocks_wide: 2,
            blocks_high: 1,
            blocks: vec![[1.5; 64]; 2],
        };
        let bytes = write_tensor_file(&[&p]).unwrap();
        assert_eq!(&bytes[..11], b"DCTT\x01\x01\x07\x02\x00\x01\x00");
        assert_eq!(bytes.len(), 11 + 2 * 64 * 4);
        assert_eq!(&bytes[11..15], &1.5f32.to_le_bytes());
        assert_eq!(read_tensor_file(&bytes).unwrap(), vec![p]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_tensor_file(b"DCTX\x01\x00").is_err());
        assert!(read_tensor_file(b"DCTT\x02\x00").is_err());
        assert!(read_tensor_file(b"DCTT\x01\x01\x01\x01\x00\x01\x00").is_err());
    }
}
