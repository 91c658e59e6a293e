//! Portable graymap export (binary P5). Export is always 16-bit: header
//! `P5\n<w> <h>\n65535\n` then big-endian samples `round(clamp(v, 0, 1) * 65535)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const MAXVAL: f64 = 65535.0;

pub fn export_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    buf.reserve(2 * img.len());
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * MAXVAL).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads 8- or 16-bit P5 files, scaling samples to `[0, 1]` by maxval.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    // Three whitespace-separated header fields (width, height, maxval),
    // '#' comments allowed, then exactly one whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("bad header field"))?;
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(fail("maxval out of range"));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: pos as u64,
            expected: need as u64,
            found: body.len() as u64,
        });
    }
    let scale = 1.0 / maxval as f64;
    let data = if bps == 1 {
        body[..need].iter().map(|&b| b as f64 * scale).collect()
    } else {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Image::new(h, w, data)
}
