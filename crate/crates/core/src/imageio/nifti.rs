//! Minimal uncompressed NIfTI-1 (single-file `n+1` and paired `ni1`) I/O.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, NativeEndian};

use super::Volume;
use crate::error::{Error, Result};

pub const NIFTI_HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const NIFTI_VOX_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

struct Header<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Header<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = &self.bytes[off..off + 2];
        if self.big_endian {
            BigEndian::read_i16(b)
        } else {
            LittleEndian::read_i16(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b = &self.bytes[off..off + 4];
        if self.big_endian {
            BigEndian::read_f32(b)
        } else {
            LittleEndian::read_f32(b)
        }
    }
}

fn bytes_per_voxel(datatype: i16) -> Option<usize> {
    match datatype {
        DT_UINT8 => Some(1),
        DT_INT16 => Some(2),
        DT_INT32 | DT_FLOAT32 => Some(4),
        DT_FLOAT64 => Some(8),
        _ => None,
    }
}

fn decode<B: ByteOrder>(raw: &[u8], datatype: i16) -> Vec<f64> {
    match datatype {
        DT_UINT8 => raw.iter().map(|&b| b as f64).collect(),
        DT_INT16 => raw.chunks_exact(2).map(|c| B::read_i16(c) as f64).collect(),
        DT_INT32 => raw.chunks_exact(4).map(|c| B::read_i32(c) as f64).collect(),
        DT_FLOAT32 => raw.chunks_exact(4).map(|c| B::read_f32(c) as f64).collect(),
        DT_FLOAT64 => raw.chunks_exact(8).map(|c| B::read_f64(c)).collect(),
        _ => unreachable!("datatype checked by caller"),
    }
}

fn img_path(hdr: &Path) -> PathBuf {
    hdr.with_extension("img")
}

pub fn read_nifti1(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = || path.to_path_buf();
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::Truncated {
            path: p(),
            offset: 0,
            expected: NIFTI_HEADER_SIZE as u64,
            found: bytes.len() as u64,
        });
    }
    let big_endian = match (LittleEndian::read_i32(&bytes[..4]), BigEndian::read_i32(&bytes[..4])) {
        (348, _) => false,
        (_, 348) => true,
        (v, _) => {
            return Err(Error::Format {
                path: p(),
                message: format!("sizeof_hdr at byte offset 0 is {v}, expected 348 in either byte order"),
            })
        }
    };
    let hdr = Header {
        bytes: &bytes[..NIFTI_HEADER_SIZE],
        big_endian,
    };

    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => {
            return Err(Error::BadMagic {
                path: p(),
                offset: OFF_MAGIC as u64,
                found: String::from_utf8_lossy(magic).trim_end_matches('\0').to_string(),
            })
        }
    };

    let ndim = hdr.i16(OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Unsupported {
            path: p(),
            offset: OFF_DIM as u64,
            what: format!("dim[0] = {ndim}"),
        });
    }
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = hdr.i16(OFF_DIM + 2 * (i + 1));
        if v < 1 {
            return Err(Error::Unsupported {
                path: p(),
                offset: (OFF_DIM + 2 * (i + 1)) as u64,
                what: format!("dim[{}] = {v}", i + 1),
            });
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(Error::Unsupported {
            path: p(),
            offset: (OFF_DIM + 8) as u64,
            what: format!("non-singleton dimensions beyond 3: {:?}", &dims[3..ndim.max(3) as usize]),
        });
    }

    let datatype = hdr.i16(OFF_DATATYPE);
    let bpv = bytes_per_voxel(datatype).ok_or_else(|| Error::Unsupported {
        path: p(),
        offset: OFF_DATATYPE as u64,
        what: format!("datatype {datatype}"),
    })?;
    let bitpix = hdr.i16(OFF_BITPIX);
    if bitpix as usize != 8 * bpv {
        return Err(Error::Format {
            path: p(),
            message: format!("bitpix {bitpix} at byte offset {OFF_BITPIX} inconsistent with datatype {datatype}"),
        });
    }

    let spacing_at = |i: usize| {
        let v = hdr.f32(OFF_PIXDIM + 4 * i).abs();
        if v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    };
    let spacing = (spacing_at(1), spacing_at(2), spacing_at(3));

    let vox_offset = hdr.f32(OFF_VOX_OFFSET);
    if vox_offset.is_nan() || vox_offset < 0.0 || vox_offset.fract() != 0.0 {
        return Err(Error::Format {
            path: p(),
            message: format!("vox_offset {vox_offset} at byte offset {OFF_VOX_OFFSET} is not a valid offset"),
        });
    }
    let mut offset = vox_offset as usize;
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let need = nx * ny * nz * bpv;

    let sidecar;
    let (data_bytes, data_path) = if single_file {
        offset = offset.max(NIFTI_VOX_OFFSET);
        (&bytes[..], p())
    } else {
        let img = img_path(path);
        sidecar = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        (&sidecar[..], img)
    };
    let available = data_bytes.len().saturating_sub(offset);
    if available < need {
        return Err(Error::Truncated {
            path: data_path,
            offset: offset as u64,
            expected: need as u64,
            found: available as u64,
        });
    }
    let raw = &data_bytes[offset..offset + need];
    let values = if big_endian {
        decode::<BigEndian>(raw, datatype)
    } else {
        decode::<LittleEndian>(raw, datatype)
    };

    let slope = hdr.f32(OFF_SCL_SLOPE);
    let inter = hdr.f32(OFF_SCL_INTER);
    let (slope, inter) = if slope != 0.0 && slope.is_finite() {
        (slope, if inter.is_finite() { inter } else { 0.0 })
    } else {
        (1.0, 0.0)
    };
    let data = values
        .into_iter()
        .map(|v| (v * slope as f64 + inter as f64) as f32)
        .collect();

    let vol = Volume {
        dims: (nx, ny, nz),
        spacing,
        scl_slope: slope,
        scl_inter: inter,
        data,
        datatype,
    };
    vol.validate()?;
    Ok(vol)
}

fn encode<B: ByteOrder>(v: &Volume) -> Vec<u8> {
    let mut buf = vec![0u8; NIFTI_VOX_OFFSET + 4 * v.data.len()];
    B::write_i32(&mut buf[0..4], NIFTI_HEADER_SIZE as i32);
    buf[38] = b'r';
    let (nx, ny, nz) = v.dims;
    let dims = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        B::write_i16(&mut buf[OFF_DIM + 2 * i..], *d);
    }
    B::write_i16(&mut buf[OFF_DATATYPE..], DT_FLOAT32);
    B::write_i16(&mut buf[OFF_BITPIX..], 32);
    let pixdim = [1.0f32, v.spacing.0, v.spacing.1, v.spacing.2, 0.0, 0.0, 0.0, 0.0];
    for (i, d) in pixdim.iter().enumerate() {
        B::write_f32(&mut buf[OFF_PIXDIM + 4 * i..], *d);
    }
    B::write_f32(&mut buf[OFF_VOX_OFFSET..], NIFTI_VOX_OFFSET as f32);
    B::write_f32(&mut buf[OFF_SCL_SLOPE..], 1.0);
    B::write_f32(&mut buf[OFF_SCL_INTER..], 0.0);
    buf[OFF_XYZT_UNITS] = 2; // NIFTI_UNITS_MM
    buf[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    for (chunk, &x) in buf[NIFTI_VOX_OFFSET..].chunks_exact_mut(4).zip(&v.data) {
        B::write_f32(chunk, x);
    }
    buf
}

/// Float32, native byte order, magic `n+1`, `vox_offset = 352`.
pub fn write_nifti1(v: &Volume, path: &Path) -> Result<()> {
    write_with_order::<NativeEndian>(v, path)
}

pub(crate) fn write_with_order<B: ByteOrder>(v: &Volume, path: &Path) -> Result<()> {
    v.validate()?;
    let (nx, ny, nz) = v.dims;
    if [nx, ny, nz].iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::invalid(format!("dims {:?} exceed the NIfTI-1 limit of 32767", v.dims)));
    }
    fs::write(path, encode::<B>(v)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_volume() -> Volume {
        let dims = (5, 4, 3);
        let data = (0..60).map(|i| (i as f32 * 0.37).sin() * 100.0).collect();
        Volume::new(dims, (0.9, 1.1, 2.5), data).unwrap()
    }

    #[test]
    fn roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let v = sample_volume();
        write_nifti1(&v, &path).unwrap();
        let back = read_nifti1(&path).unwrap();
        assert_eq!(back.dims, v.dims);
        assert_eq!(back.spacing, v.spacing);
        assert_eq!(back.data, v.data);
        assert_eq!(back.datatype, DT_FLOAT32);
    }

    #[test]
    fn tiny_volume_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.nii");
        let v = Volume::new((1, 1, 1), (1.0, 1.0, 1.0), vec![0.0]).unwrap();
        write_nifti1(&v, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 352 + 4);
    }

    #[test]
    fn both_byte_orders() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample_volume();
        let be = dir.path().join("be.nii");
        let le = dir.path().join("le.nii");
        write_with_order::<BigEndian>(&v, &be).unwrap();
        write_with_order::<LittleEndian>(&v, &le).unwrap();
        assert_eq!(&fs::read(&be).unwrap()[..4], &[0, 0, 1, 92]);
        assert_eq!(&fs::read(&le).unwrap()[..4], &[92, 1, 0, 0]);
        assert_eq!(read_nifti1(&be).unwrap().data, v.data);
        assert_eq!(read_nifti1(&le).unwrap().data, v.data);
    }

    #[test]
    fn rejects_bad_magic_and_datatype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let mut bytes = encode::<LittleEndian>(&sample_volume());
        bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"abc\0");
        fs::write(&path, &bytes).unwrap();
        let err = read_nifti1(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        assert!(matches!(err, Error::BadMagic { offset: 344, .. }));

        let mut bytes = encode::<LittleEndian>(&sample_volume());
        LittleEndian::write_i16(&mut bytes[OFF_DATATYPE..], 512);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_nifti1(&path), Err(Error::Unsupported { offset: 70, .. })));

        let bytes = encode::<LittleEndian>(&sample_volume());
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_nifti1(&path), Err(Error::Truncated { offset: 352, .. })));

        let mut bytes = encode::<LittleEndian>(&sample_volume());
        bytes[0] = 0;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_nifti1(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn integer_data_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.nii");
        let mut bytes = vec![0u8; NIFTI_VOX_OFFSET + 2 * 4];
        LittleEndian::write_i32(&mut bytes[..4], 348);
        for (i, d) in [3i16, 2, 2, 1, 1, 1, 1, 1].iter().enumerate() {
            LittleEndian::write_i16(&mut bytes[OFF_DIM + 2 * i..], *d);
        }
        LittleEndian::write_i16(&mut bytes[OFF_DATATYPE..], DT_INT16);
        LittleEndian::write_i16(&mut bytes[OFF_BITPIX..], 16);
        LittleEndian::write_f32(&mut bytes[OFF_VOX_OFFSET..], 352.0);
        LittleEndian::write_f32(&mut bytes[OFF_SCL_SLOPE..], 0.5);
        LittleEndian::write_f32(&mut bytes[OFF_SCL_INTER..], 10.0);
        bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
        for (i, v) in [-4i16, 0, 6, 300].iter().enumerate() {
            LittleEndian::write_i16(&mut bytes[NIFTI_VOX_OFFSET + 2 * i..], *v);
        }
        fs::write(&path, &bytes).unwrap();
        let v = read_nifti1(&path).unwrap();
        assert_eq!(v.dims, (2, 2, 1));
        assert_eq!(v.data, vec![8.0, 10.0, 13.0, 160.0]);
        assert_eq!(v.spacing, (1.0, 1.0, 1.0));
    }

    #[test]
    fn paired_header_and_image() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("pair.hdr");
        let v = sample_volume();
        let full = encode::<LittleEndian>(&v);
        let mut header = full[..NIFTI_HEADER_SIZE].to_vec();
        header[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"ni1\0");
        LittleEndian::write_f32(&mut header[OFF_VOX_OFFSET..], 0.0);
        fs::write(&hdr, &header).unwrap();
        fs::write(dir.path().join("pair.img"), &full[NIFTI_VOX_OFFSET..]).unwrap();
        assert_eq!(read_nifti1(&hdr).unwrap().data, v.data);
    }
}
