use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zprune::ztf::{decode_archive, encode_archive, read_archive, read_archive_finite, write_archive, TensorMap};
use zprune_core::Matrix;

mod support;
use support::{bitwise_equal, random_tensors};

#[test]
fn hundred_random_archives_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x2F1);
    for i in 0..100 {
        let map = random_tensors(&mut rng);
        let path = dir.path().join(format!("{i}.ztf"));
        write_archive(&map, &path).unwrap();
        assert!(bitwise_equal(&map, &read_archive(&path).unwrap()), "archive {i}");
    }
}

#[test]
fn layout_is_bit_exact() {
    let mut map = TensorMap::new();
    map.insert("b".into(), Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap());
    map.insert("a".into(), Matrix::new(1, 1, vec![-0.0]).unwrap());
    let bytes = encode_archive(&map).unwrap();
    let header = r#"{"a":{"dtype":"f32","shape":[1,1],"offset":0,"len":4},"b":{"dtype":"f32","shape":[2,2],"offset":4,"len":16}}"#;
    assert_eq!(&bytes[..4], b"ZTF1");
    assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), header.len() as u64);
    assert_eq!(&bytes[12..12 + header.len()], header.as_bytes());
    let payload = &bytes[12 + header.len()..];
    assert_eq!(payload.len(), 20);
    assert_eq!(&payload[..4], &(-0.0f32).to_le_bytes());
    assert_eq!(&payload[4..8], &1.0f32.to_le_bytes());
    assert_eq!(&payload[16..20], &4.0f32.to_le_bytes());
}

#[test]
fn finite_read_rejects_nan() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nan.ztf");
    let mut map = TensorMap::new();
    map.insert("w".into(), Matrix::new(1, 2, vec![1.0, f32::NAN]).unwrap());
    write_archive(&map, &path).unwrap();
    assert!(read_archive(&path).is_ok());
    assert_eq!(read_archive_finite(&path).unwrap_err().kind(), "NonFinite");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn insertion_order_does_not_change_bytes(seed in any::<u64>()) {
        let map = random_tensors(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut reversed = TensorMap::new();
        for (k, v) in map.iter().rev() {
            reversed.insert(k.clone(), v.clone());
        }
        prop_assert_eq!(encode_archive(&map).unwrap(), encode_archive(&reversed).unwrap());
    }

    #[test]
    fn in_memory_round_trip(seed in any::<u64>()) {
        let map = random_tensors(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode_archive(&map).unwrap();
        prop_assert!(bitwise_equal(&map, &decode_archive(&bytes).unwrap()));
    }

    #[test]
    fn truncation_is_a_format_error(seed in any::<u64>(), cut in 1usize..64) {
        let map = random_tensors(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode_archive(&map).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        let err = decode_archive(&bytes[..keep]).unwrap_err();
        prop_assert_eq!(err.kind(), "FormatError");
    }
}
