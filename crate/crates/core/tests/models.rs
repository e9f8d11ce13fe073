use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use homi::inference::{
    homi_net16, homi_net70, load_model, Executor, ModelError, QuantizedModel, Tensor3, Topology,
    MANIFEST_FILE,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Directory name, topology and seed used by the `make_fixtures` example.
fn table() -> Vec<(&'static str, Topology, u64, usize)> {
    vec![
        ("homi-net16-n2", homi_net16(2), 16, 16_203),
        ("homi-net16-n8", homi_net16(8), 168, 17_067),
        ("homi-net70-n2", homi_net70(2), 70, 70_475),
    ]
}

#[test]
fn fixtures_match_regeneration() {
    for (name, topology, seed, params) in table() {
        let loaded = load_model(fixtures().join(name)).unwrap();
        assert_eq!(loaded, QuantizedModel::random(&topology, seed), "{name}");
        assert_eq!(loaded.param_count(), params);
        assert_eq!(loaded.class_count(), 11);
        let via_manifest = load_model(fixtures().join(name).join(MANIFEST_FILE)).unwrap();
        assert_eq!(via_manifest, loaded);
    }
}

#[test]
fn fixture_predictions_agree_across_executors() {
    let model = load_model(fixtures().join("homi-net16-n2")).unwrap();
    let mut logits = std::collections::BTreeSet::new();
    for k in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let density = rng.gen_range(0.01..0.6);
        let data = (0..2 * 128 * 128)
            .map(|_| if rng.gen_bool(density) { rng.gen() } else { 0 })
            .collect();
        let input = Tensor3::from_vec(2, 128, 128, data);
        let a = Executor::default().infer(&model, &input).unwrap();
        let b = Executor::dense().infer(&model, &input).unwrap();
        assert_eq!(a, b);
        logits.insert(a.logits);
    }
    assert_eq!(logits.len(), 24, "logits should depend on the input");
}

#[test]
fn tampered_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("homi-net16-n2");
    for entry in std::fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    let blob = dir.path().join("03_dwsep.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    match load_model(dir.path()) {
        Err(ModelError::ChecksumMismatch { layer, .. }) => assert_eq!(layer, 3),
        other => panic!("expected checksum mismatch, got {other:?}"),
    }
    assert!(matches!(load_model(dir.path().join("missing")), Err(ModelError::Io(_))));
}
