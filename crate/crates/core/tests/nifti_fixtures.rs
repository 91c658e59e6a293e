//! Files produced by nibabel, one per byte order.

use std::path::PathBuf;

use resmoco_core::imageio::read_nifti1;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn little_endian_int16_with_scaling() {
    let v = read_nifti1(&fixture("le_int16_scaled.nii")).unwrap();
    assert_eq!(v.dims, (4, 3, 2));
    assert_eq!(v.spacing, (0.5, 0.75, 2.0));
    assert_eq!(v.datatype, 4);
    let expected: Vec<f32> = (0..24).map(|i| -3.5 + 0.75 * i as f32).collect();
    assert_eq!(v.data, expected);
    assert_eq!(v.get(1, 0, 0), -2.75);
    assert_eq!(v.get(0, 1, 0), -0.5);
    assert_eq!(v.get(0, 0, 1), 5.5);
}

#[test]
fn big_endian_float32() {
    let v = read_nifti1(&fixture("be_float32.nii")).unwrap();
    assert_eq!(v.dims, (3, 2, 2));
    assert_eq!(v.spacing, (1.25, 1.25, 3.0));
    assert_eq!(v.datatype, 16);
    let expected: Vec<f32> = (0..12).map(|i| (i as f64 * 0.1 - 0.3) as f32).collect();
    assert_eq!(v.data, expected);
}

#[test]
fn header_image_pair() {
    let v = read_nifti1(&fixture("le_uint8_pair.hdr")).unwrap();
    assert_eq!(v.dims, (2, 2, 2));
    assert_eq!(v.datatype, 2);
    assert_eq!(v.data, vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0]);
}
