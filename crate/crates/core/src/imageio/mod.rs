//! Volume and slice I/O plus the intensity normalization contract.

mod nifti;
mod pgm;
mod raw;

pub use nifti::{read_nifti1, write_nifti1, NIFTI_HEADER_SIZE, NIFTI_VOX_OFFSET};
pub use pgm::{export_pgm, read_pgm};
pub use raw::{read_raw_slice, write_raw_slice, RAW_SLICE_MAGIC};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, Spacing};

/// 3D scalar volume, x fastest (`index = x + nx * (y + ny * z)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: (usize, usize, usize),
    /// Voxel size in mm along x, y, z.
    pub spacing: (f32, f32, f32),
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub data: Vec<f32>,
    /// NIfTI datatype code of the source file (16 for volumes built in memory).
    pub datatype: i16,
}

impl Volume {
    pub fn new(dims: (usize, usize, usize), spacing: (f32, f32, f32), data: Vec<f32>) -> Result<Self> {
        let v = Volume {
            dims,
            spacing,
            scl_slope: 1.0,
            scl_inter: 0.0,
            data,
            datatype: 16,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!("volume dims must be positive, got {:?}", self.dims)));
        }
        if self.data.len() != nx * ny * nz {
            return Err(Error::invalid(format!(
                "volume data length {} does not match dims {:?}",
                self.data.len(),
                self.dims
            )));
        }
        let (sx, sy, sz) = self.spacing;
        if !(sx > 0.0 && sy > 0.0 && sz > 0.0) {
            return Err(Error::invalid(format!("voxel spacing must be positive, got {:?}", self.spacing)));
        }
        Ok(())
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        let (nx, ny, _) = self.dims;
        self.data[x + nx * (y + ny * z)]
    }
}

/// Divide by the volume maximum so intensities land in `[0, 1]`.
///
/// Negative intensities are clamped to zero.
pub fn normalize(v: &Volume) -> Result<Volume> {
    let max = v.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max.is_nan() || max <= 0.0 || !max.is_finite() {
        return Err(Error::invalid("cannot normalize a volume without positive intensities"));
    }
    let data = v.data.iter().map(|&x| (x / max).max(0.0)).collect();
    Ok(Volume { data, ..v.clone() })
}

/// 2D slices orthogonal to `axis` (0 = x, 1 = y, 2 = z).
///
/// For `axis = 2` each slice has `ny` rows and `nx` columns; for `axis = 1`,
/// `nz` rows and `nx` columns; for `axis = 0`, `nz` rows and `ny` columns.
pub fn slice_iter(v: &Volume, axis: usize) -> Result<impl Iterator<Item = Image> + '_> {
    let (nx, ny, nz) = v.dims;
    let (sx, sy, sz) = (v.spacing.0 as f64, v.spacing.1 as f64, v.spacing.2 as f64);
    let (count, rows, cols, spacing) = match axis {
        0 => (nx, nz, ny, Spacing { dy: sz, dx: sy }),
        1 => (ny, nz, nx, Spacing { dy: sz, dx: sx }),
        2 => (nz, ny, nx, Spacing { dy: sy, dx: sx }),
        other => return Err(Error::invalid(format!("slice axis {other} out of range 0..3"))),
    };
    Ok((0..count).map(move |s| {
        Image::from_fn(rows, cols, |r, c| {
            let (x, y, z) = match axis {
                0 => (s, c, r),
                1 => (c, s, r),
                _ => (c, r, s),
            };
            v.get(x, y, z) as f64
        })
        .with_spacing(spacing)
    }))
}

/// Read a single slice from `.rslc` or `.pgm`.
pub fn read_slice(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rslc") => read_raw_slice(path),
        Some("pgm") => read_pgm(path),
        _ => Err(Error::invalid(format!("{}: expected a .rslc or .pgm slice", path.display()))),
    }
}

/// Sorted `.rslc` / `.pgm` files in `dir`.
pub fn list_slices(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("rslc" | "pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume() -> Volume {
        let dims = (4, 3, 2);
        let data = (0..24).map(|i| i as f32).collect();
        Volume::new(dims, (1.0, 2.0, 3.0), data).unwrap()
    }

    #[test]
    fn normalize_contract() {
        let v = Volume::new((2, 2, 1), (1.0, 1.0, 1.0), vec![3.0; 4]).unwrap();
        assert!(normalize(&v).unwrap().data.iter().all(|&x| x == 1.0));

        let v = ramp_volume();
        let n = normalize(&v).unwrap();
        assert_eq!(n.data.iter().copied().fold(f32::MIN, f32::max), 1.0);
        assert_eq!(n.data[0], 0.0);
        assert_eq!(normalize(&n).unwrap(), n);

        let zero = Volume::new((1, 1, 1), (1.0, 1.0, 1.0), vec![0.0]).unwrap();
        assert!(normalize(&zero).is_err());
    }

    #[test]
    fn slicing() {
        let v = ramp_volume();
        let z: Vec<Image> = slice_iter(&v, 2).unwrap().collect();
        assert_eq!(z.len(), 2);
        assert_eq!(z[1].shape(), (3, 4));
        assert_eq!(z[1].get(2, 3), v.get(3, 2, 1) as f64);
        assert_eq!(z[0].spacing, Spacing { dy: 2.0, dx: 1.0 });
        let x: Vec<Image> = slice_iter(&v, 0).unwrap().collect();
        assert_eq!(x.len(), 4);
        assert_eq!(x[3].shape(), (2, 3));
        assert_eq!(x[3].get(1, 2), v.get(3, 2, 1) as f64);
        let y: Vec<Image> = slice_iter(&v, 1).unwrap().collect();
        assert_eq!(y[2].get(1, 0), v.get(0, 2, 1) as f64);
        assert!(slice_iter(&v, 3).is_err());
    }

    #[test]
    fn volume_validation() {
        assert!(Volume::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0; 7]).is_err());
        assert!(Volume::new((2, 2, 2), (1.0, 0.0, 1.0), vec![0.0; 8]).is_err());
        assert!(Volume::new((0, 2, 2), (1.0, 1.0, 1.0), vec![]).is_err());
    }
}
