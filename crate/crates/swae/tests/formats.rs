mod support;

use proptest::prelude::*;
use swae::checkpoint::{
    decode_checkpoint, decode_classifier, encode_checkpoint, encode_classifier, SavedRun, CHECKPOINT_VERSION,
};
use swae::config::RunConfig;
use swae::dataset_io::{decode_dataset, encode_dataset, load_dataset, save_dataset};
use swae::Error;
use swae_core::data::{gen_gauss_ring, gen_glyphs, Split};
use swae_core::metrics::ToyClassifier;
use swae_core::train::NoHooks;
use swae_core::{SwaeModel, Trainer};

fn trained_run() -> SavedRun {
    let cfg = RunConfig::parse(&support::ring_config(std::path::Path::new("unused"), ""), "test").unwrap();
    let tc = cfg.train_config();
    let model = SwaeModel::new(&cfg.architecture(), &cfg.priors(), &tc.adam(), tc.seed).unwrap();
    let mut t = Trainer::new(model, swae_core::TrainConfig { max_steps: Some(5), ..tc }).unwrap();
    t.run(&cfg.dataset(Split::Train).unwrap(), &cfg.dataset(Split::Val).unwrap(), &mut NoHooks)
        .unwrap();
    SavedRun { checkpoint: t.checkpoint(), meta: cfg.to_meta() }
}

fn with_crc(mut bytes: Vec<u8>) -> Vec<u8> {
    let n = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..n]);
    bytes[n..].copy_from_slice(&crc.to_le_bytes());
    bytes
}

#[test]
fn checkpoint_round_trips_exactly() {
    let run = trained_run();
    assert_eq!(run.checkpoint.state.step, 5);
    let bytes = encode_checkpoint(&run);
    assert_eq!(&bytes[..4], b"SWAE");
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, run);
    assert_eq!(encode_checkpoint(&back), bytes);
    assert_eq!(RunConfig::from_meta(&back.meta).unwrap().train.seed, 5);
}

#[test]
fn resumed_checkpoint_continues_identically() {
    let run = trained_run();
    let cfg = RunConfig::from_meta(&run.meta).unwrap();
    let (tr, va) = (cfg.dataset(Split::Train).unwrap(), cfg.dataset(Split::Val).unwrap());
    let go = |ckpt: swae_core::Checkpoint| {
        let mut t = Trainer::from_checkpoint(ckpt).unwrap();
        t.config.max_steps = Some(9);
        t.run(&tr, &va, &mut NoHooks).unwrap();
        t.checkpoint()
    };
    let direct = go(run.checkpoint.clone());
    let via_file = go(decode_checkpoint(&encode_checkpoint(&run)).unwrap().checkpoint);
    assert_eq!(direct, via_file);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&trained_run());
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..10]), Err(Error::Truncated { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic { .. })));
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&with_crc(version)),
        Err(Error::Version { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));
    let text = String::from_utf8_lossy(&bytes);
    let manifest_key = text.find("model.heads = 2").unwrap();
    let mut edited = bytes.clone();
    edited[manifest_key + 14] = b'7';
    assert!(decode_checkpoint(&with_crc(edited)).is_err());
}

#[test]
fn classifier_round_trips() {
    let clf = ToyClassifier::new(64, 10, &[12, 6], 3).unwrap();
    let bytes = encode_classifier(&clf);
    assert_eq!(&bytes[..4], b"SWCL");
    assert_eq!(decode_classifier(&bytes).unwrap(), clf);
    assert!(matches!(decode_classifier(&encode_checkpoint(&trained_run())), Err(Error::BadMagic { .. })));
}

#[test]
fn datasets_round_trip() {
    let glyphs = gen_glyphs(20, 1).unwrap();
    let bytes = encode_dataset(&glyphs);
    assert!(bytes.starts_with(b"swae-data v1 20 64 1 1 3\n"));
    assert_eq!(decode_dataset(&bytes, Split::Train).unwrap(), glyphs);

    let ring = gen_gauss_ring(7, 8, 2.0, 0.1, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ring.bin");
    save_dataset(&ring, &path).unwrap();
    assert_eq!(load_dataset(&path, Split::Train).unwrap(), ring);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let raw = std::fs::read(&path).unwrap();
    assert!(raw.starts_with(b"swae-data v1 7 2 1 0\n"));
    assert!(matches!(decode_dataset(&raw[..raw.len() - 3], Split::Train), Err(Error::Truncated { .. })));
    assert!(decode_dataset(b"swae-data v2 1 1 0 0\n", Split::Train).is_err());
    assert!(decode_dataset(b"nonsense\n", Split::Train).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn damaged_bytes_never_decode(cut in 0usize..4000, pos in 0usize..100_000, bit in 0u8..8) {
        let bytes = encode_checkpoint(&trained_run());
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_checkpoint(&bytes[..cut]).is_err());
        let mut flipped = bytes.clone();
        flipped[pos % bytes.len()] ^= 1 << bit;
        prop_assert!(decode_checkpoint(&flipped).is_err());
    }
}
