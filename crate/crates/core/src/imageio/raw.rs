//! Raw slice format: 16-byte header `{ b"RSLC", u32 height, u32 width, u32 reserved }`
//! followed by row-major float32 samples; everything little-endian.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::image::Image;

pub const RAW_SLICE_MAGIC: &[u8; 4] = b"RSLC";
const HEADER: usize = 16;

pub fn write_raw_slice(img: &Image, path: &Path) -> Result<()> {
    let mut buf = vec![0u8; HEADER + 4 * img.len()];
    buf[..4].copy_from_slice(RAW_SLICE_MAGIC);
    LittleEndian::write_u32(&mut buf[4..8], img.height() as u32);
    LittleEndian::write_u32(&mut buf[8..12], img.width() as u32);
    for (chunk, &v) in buf[HEADER..].chunks_exact_mut(4).zip(img.data()) {
        LittleEndian::write_f32(chunk, v as f32);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_raw_slice(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: 0,
            expected: HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != RAW_SLICE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let h = LittleEndian::read_u32(&bytes[4..8]) as usize;
    let w = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let expected = 4 * h * w;
    if bytes.len() - HEADER < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: HEADER as u64,
            expected: expected as u64,
            found: (bytes.len() - HEADER) as u64,
        });
    }
    let data = bytes[HEADER..HEADER + expected]
        .chunks_exact(4)
        .map(|c| LittleEndian::read_f32(c) as f64)
        .collect();
    Image::new(h, w, data).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.rslc");
        let img = Image::from_fn(3, 5, |r, c| r as f64 * 0.25 + c as f64);
        write_raw_slice(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 15);
        assert_eq!(&bytes[..4], b"RSLC");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &5u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[0; 4]);
        assert_eq!(&bytes[16 + 4..16 + 8], &1.0f32.to_le_bytes());
        assert_eq!(read_raw_slice(&path).unwrap(), img);

        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(read_raw_slice(&path), Err(Error::Truncated { .. })));
    }
}
