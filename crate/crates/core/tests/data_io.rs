use std::path::PathBuf;

use proptest::prelude::*;
use union_robust::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use union_robust::data::{load_idx, parse_idx_images, parse_idx_labels, parse_idx_pair, synth_blobs, synth_rings};
use union_robust::models::build;
use union_robust::{Error, ModelSpec};

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for v in [count, rows, cols] {
        out.extend(v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[test]
fn idx_images_are_scaled_to_the_unit_interval() {
    let t = parse_idx_images(&idx_images(2, 1, 3, &[0, 255, 51, 102, 153, 204])).unwrap();
    assert_eq!(t.shape(), &[2, 1, 1, 3]);
    assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
}

#[test]
fn idx_headers_are_checked() {
    let mut bad_magic = idx_images(1, 1, 1, &[0]);
    bad_magic[3] = 1;
    assert!(matches!(parse_idx_images(&bad_magic), Err(Error::Format(_))));
    assert!(matches!(parse_idx_labels(&idx_images(1, 1, 1, &[0])), Err(Error::Format(_))));
    assert!(parse_idx_images(&idx_images(2, 2, 2, &[0; 7])).is_err());
    assert!(parse_idx_images(&idx_images(2, 2, 2, &[0; 9])).is_err());
    assert!(parse_idx_images(&idx_images(0, 2, 2, &[])).is_err());
    assert!(parse_idx_images(&[0, 0, 8, 3, 0]).is_err());
    assert!(parse_idx_labels(&[0, 0, 8]).is_err());
    assert_eq!(parse_idx_labels(&idx_labels(&[7, 0, 3])).unwrap(), vec![7, 0, 3]);
    assert!(parse_idx_labels(&idx_labels(&[1, 2])[..9]).is_err());
}

#[test]
fn image_and_label_counts_must_agree() {
    let images = idx_images(2, 1, 1, &[0, 255]);
    let err = parse_idx_pair(&images, &idx_labels(&[1, 2, 3]), "t").unwrap_err();
    assert!(err.to_string().contains("count mismatch"), "{err}");
    let data = parse_idx_pair(&images, &idx_labels(&[1, 2]), "t").unwrap();
    assert_eq!(data.labels, vec![1, 2]);
    assert_eq!(data.example_shape(), [1, 1, 1]);
}

#[test]
fn idx_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&img, idx_images(3, 2, 2, &[9; 12])).unwrap();
    std::fs::write(&lab, idx_labels(&[0, 1, 2])).unwrap();
    let data = load_idx(&img, &lab, "train").unwrap();
    assert_eq!(data.len(), 3);
    assert_eq!(data.split, "train");
    assert!(matches!(load_idx(&dir.path().join("missing"), &lab, "x"), Err(Error::Io(_))));
}

proptest! {
    #[test]
    fn idx_parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
    }

    #[test]
    fn idx_round_trips_every_byte(pixels in prop::collection::vec(any::<u8>(), 1..50)) {
        let t = parse_idx_images(&idx_images(1, 1, pixels.len() as u32, &pixels)).unwrap();
        for (v, p) in t.data().iter().zip(&pixels) {
            prop_assert_eq!((v * 255.0).round() as u8, *p);
        }
    }
}

fn sample_checkpoint() -> Vec<u8> {
    let spec = ModelSpec {
        input_shape: [1, 8, 8],
        classes: 4,
        ..ModelSpec::cnn([2, 3], 5)
    };
    encode(&build(&spec, 3).unwrap(), &spec)
}

#[test]
fn checkpoints_round_trip_byte_for_byte() {
    for spec in [ModelSpec::mlp([1, 1, 2], vec![4, 3], 2), ModelSpec::mnist_cnn_scaled()] {
        let params = build(&spec, 7).unwrap();
        let bytes = encode(&params, &spec);
        let (p2, s2) = decode(&bytes).unwrap();
        assert_eq!(p2, params);
        assert_eq!(s2, spec);
        assert_eq!(encode(&p2, &s2), bytes);
    }
    let dir = tempfile::tempdir().unwrap();
    let path: PathBuf = dir.path().join("model.ckpt");
    let spec = ModelSpec::mlp([1, 1, 2], vec![4], 2);
    let params = build(&spec, 1).unwrap();
    save_checkpoint(&params, &spec, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), (params, spec));
}

#[test]
fn checkpoint_headers_are_validated_first() {
    let bytes = sample_checkpoint();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(decode(&bad).unwrap_err().to_string().contains("version"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode(&long).unwrap_err().to_string().contains("trailing"));
}

#[test]
fn every_truncation_is_an_error() {
    let bytes = sample_checkpoint();
    for cut in 0..bytes.len() {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
}

#[test]
fn single_byte_corruption_never_panics() {
    let bytes = sample_checkpoint();
    for i in 0..bytes.len() {
        for flip in [0x01u8, 0x80, 0xff] {
            let mut b = bytes.clone();
            b[i] ^= flip;
            // Flips inside float payloads still decode; whatever decodes must
            // be consistent with its own descriptor.
            if let Ok((params, spec)) = decode(&b) {
                assert_eq!(params.total_len(), spec.parameter_count(), "flip at byte {i}");
            }
        }
    }
}

proptest! {
    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes);
        let mut framed = b"URBC\x01\x00\x00\x00".to_vec();
        framed.extend(&bytes);
        let _ = decode(&framed);
    }
}

#[test]
fn synthetic_data_is_valid_and_seeded() {
    let a = synth_blobs(100, 3, 0.05, 0.1, 1).unwrap();
    assert_eq!(a, synth_blobs(100, 3, 0.05, 0.1, 1).unwrap());
    assert_ne!(a, synth_blobs(100, 3, 0.05, 0.1, 2).unwrap());
    assert_eq!(a.label_histogram(), vec![34, 33, 33]);
    assert!(synth_blobs(10, 3, 0.5, 0.1, 1).is_err());
    assert!(synth_blobs(2, 3, 0.05, 0.1, 1).is_err());
    let rings = synth_rings(50, 3).unwrap();
    assert_eq!(rings.example_shape(), [1, 1, 2]);
    for i in 0..50 {
        let (x, y) = rings.example(i).unwrap();
        let r = ((x.data()[0] - 0.5).powi(2) + (x.data()[1] - 0.5).powi(2)).sqrt();
        let target = if y == 0 { 0.15 } else { 0.35 };
        assert!((r - target).abs() <= 0.03 + 1e-12);
    }
}

/// Runs only when `MNIST_DIR` points at the four standard IDX files.
#[test]
fn mnist_test_split_has_the_published_shape() {
    let Some(dir) = std::env::var_os("MNIST_DIR").map(PathBuf::from) else {
        eprintln!("MNIST_DIR not set; skipping the MNIST file check");
        return;
    };
    let data = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        "test",
    )
    .unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.example_shape(), [1, 28, 28]);
    assert_eq!(
        data.label_histogram(),
        vec![980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]
    );
}
