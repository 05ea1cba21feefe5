#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use zprune::ztf::TensorMap;
use zprune_core::Matrix;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Random archive contents, including arbitrary bit patterns (NaN payloads,
/// infinities, negative zero, subnormals) and non-ASCII names.
pub fn random_tensors(rng: &mut impl Rng) -> TensorMap {
    let entries = rng.random_range(1..=6);
    let mut map = TensorMap::new();
    while map.len() < entries {
        let name_len = rng.random_range(1..=12);
        let name: String = (0..name_len)
            .map(|_| ['a', 'b', 'z', '/', '_', '0', '9', 'é', 'λ', '.'][rng.random_range(0..10)])
            .collect();
        let (r, c) = (rng.random_range(1..=9), rng.random_range(1..=9));
        let data: Vec<f32> = (0..r * c).map(|_| f32::from_bits(rng.next_u32())).collect();
        map.insert(name, Matrix::new(r, c, data).unwrap());
    }
    map
}

pub fn bitwise_equal(a: &TensorMap, b: &TensorMap) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
}
