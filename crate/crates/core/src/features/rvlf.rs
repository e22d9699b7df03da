//! `RVLF` feature blob: magic `b"RVLF"`, version u16, rows u32, cols u32,
//! then `rows * cols` little-endian f32 values in row-major order.

use std::io::{Read, Write};

use super::{FeatureError, FeatureMatrix};

pub const RVLF_MAGIC: &[u8; 4] = b"RVLF";
pub const RVLF_VERSION: u16 = 1;
pub const RVLF_HEADER_LEN: usize = 14;

pub fn write_rvlf<W: Write>(m: &FeatureMatrix, mut w: W) -> Result<usize, FeatureError> {
    let mut buf = Vec::with_capacity(RVLF_HEADER_LEN + 4 * m.values.len());
    buf.extend_from_slice(RVLF_MAGIC);
    buf.extend_from_slice(&RVLF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_rvlf<R: Read>(mut r: R) -> Result<FeatureMatrix, FeatureError> {
    let mut header = [0u8; RVLF_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..4] != RVLF_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != RVLF_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let mut data = vec![0u8; rows * cols * 4];
    r.read_exact(&mut data)?;
    let values = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix::new(rows, cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]);
        let mut buf = Vec::new();
        let n = write_rvlf(&m, &mut buf).unwrap();
        assert_eq!(n, 14 + 24);
        assert_eq!(&buf[..4], b"RVLF");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[2, 0, 0, 0]);
        assert_eq!(&buf[10..14], &[3, 0, 0, 0]);
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
        assert_eq!(read_rvlf(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"RVLX\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00";
        assert!(matches!(read_rvlf(&buf[..]), Err(FeatureError::Format(_))));
    }
}
