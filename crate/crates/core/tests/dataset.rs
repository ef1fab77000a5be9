use std::time::Instant;

use saf_lab::io::{read_dataset, read_meta, write_dataset, Tensor, SAFT_MAGIC};
use saf_lab::scene_sim::{gen_sequence, SimConfig};

#[test]
fn dataset_round_trip_is_exact() {
    let cfg = SimConfig {
        n_frames: 12,
        overlap_probability: 0.5,
        ..SimConfig::default()
    };
    let seqs: Vec<_> = (0..3)
        .map(|s| gen_sequence(&cfg, 40 + s).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &seqs).unwrap();
    assert_eq!(read_meta(dir.path()).unwrap().sequences.len(), 3);
    assert_eq!(read_dataset(dir.path()).unwrap(), seqs);
}

#[test]
fn thousand_frames_round_trip_quickly() {
    let cfg = SimConfig {
        n_frames: 1000,
        ..SimConfig::default()
    };
    let seq = gen_sequence(&cfg, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    write_dataset(dir.path(), std::slice::from_ref(&seq)).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(back[0], seq);
    assert!(secs < 5.0, "round trip took {secs:.2} s");
}

#[test]
fn unknown_dataset_header_is_rejected() {
    let seq = gen_sequence(
        &SimConfig {
            n_frames: 2,
            ..SimConfig::default()
        },
        1,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[seq]).unwrap();
    let meta = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta)
        .unwrap()
        .replace("saf-lab.dataset", "other.dataset");
    std::fs::write(&meta, text).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("meta.json"), "{err}");
}

#[test]
fn corrupt_tensor_magic_is_rejected() {
    let t = Tensor::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.saft");
    t.write(&path).unwrap();
    assert_eq!(Tensor::<f32>::read(&path).unwrap(), t);
    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], SAFT_MAGIC);
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(Tensor::<f32>::read(&path).is_err());
    // wrong element type is rejected as well
    bytes[0] = b'S';
    std::fs::write(&path, &bytes).unwrap();
    assert!(Tensor::<u8>::read(&path).is_err());
}
