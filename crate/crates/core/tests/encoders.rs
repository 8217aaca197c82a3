use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rvqa_core::checksum::sha256_hex;
use rvqa_core::encoders::features::{decode_features, encode_features};
use rvqa_core::encoders::*;
use rvqa_core::CoreError;
use rvqa_nn::{ParameterStore, RngState};

fn encoder(seed: u64, zero: bool) -> (QuestionEncoder, ParameterStore) {
    let enc = QuestionEncoder::new("q", 10, 5, 6);
    let mut store = ParameterStore::new();
    enc.register(&mut store, &mut RngState::new(seed).rng()).unwrap();
    if zero {
        for (_, p) in store.iter_mut() {
            p.value.fill(0.0);
        }
    }
    (enc, store)
}

fn seq(tokens: &[usize]) -> TokenSequence {
    TokenSequence::new(tokens.to_vec(), "q", 10).unwrap()
}

#[test]
fn zero_weights_encode_to_zero() {
    let (enc, store) = encoder(1, true);
    let h = enc.encode_array(&store, &seq(&[3])).unwrap();
    assert_eq!(h.shape(), &[6]);
    assert!(h.values().iter().all(|v| *v == 0.0));
}

#[test]
fn encoding_is_pure_and_order_sensitive() {
    let (enc, store) = encoder(2, false);
    let a = enc.encode_array(&store, &seq(&[1, 4, 7, 2])).unwrap();
    let _ = enc.encode_array(&store, &seq(&[9, 9])).unwrap();
    let b = enc.encode_array(&store, &seq(&[1, 4, 7, 2])).unwrap();
    assert_eq!(a, b);
    let c = enc.encode_array(&store, &seq(&[2, 7, 4, 1])).unwrap();
    let diff: f64 = a.values().iter().zip(c.values()).map(|(x, y)| (x - y).powi(2)).sum();
    assert!(diff.sqrt() > 0.0);
}

#[test]
fn empty_or_out_of_range_sequences_are_rejected() {
    assert!(matches!(TokenSequence::new(vec![], "", 10), Err(CoreError::Input(_))));
    assert!(TokenSequence::new(vec![10], "x", 10).is_err());
}

#[test]
fn tokenizer_and_vocabulary_file() {
    assert_eq!(tokenize("What's on the TABLE?"), vec!["whats", "on", "the", "table"]);
    let vocab = QuestionVocab::build(["what is on the table", "what is red"], 100);
    let text = vocab.to_text();
    assert_eq!(text.lines().next(), Some(UNK_TOKEN));
    assert_eq!(QuestionVocab::parse(&text).unwrap(), vocab);
    let s = vocab.encode("What is purple?").unwrap();
    assert_eq!(s.tokens()[2], 0);
    assert_eq!(vocab.token(s.tokens()[0]), Some("what"));
}

#[test]
fn synthetic_features_are_keyed_by_id() {
    let shape = FeatureShape::new(64, 4, 4).unwrap();
    let a = synthetic_features("img0001", shape);
    let a2 = synthetic_features("img0001", shape);
    let b = synthetic_features("img0002", shape);
    assert!(a.values().iter().zip(a2.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let differ = a.values().iter().zip(b.values()).filter(|(x, y)| x != y).count();
    assert!(differ as f64 >= 0.99 * shape.len() as f64, "{differ}");
    assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(FeatureShape::new(2048, 14, 14).unwrap().len(), 401_408);
    assert_eq!(FeatureShape::RESNET.len(), 401_408);
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic_features.sha256")
}

#[test]
fn synthetic_byte_stream_matches_golden_checksums() {
    let shape = FeatureShape::new(64, 4, 4).unwrap();
    let lines: Vec<String> = ["img0000", "COCO_val2014_000000000042", "2375429"]
        .iter()
        .map(|id| format!("{id} {}", sha256_hex(&encode_features(&synthetic_features(id, shape)))))
        .collect();
    let actual = lines.join("\n") + "\n";
    if std::env::var_os("RVQA_BLESS").is_some() {
        std::fs::write(golden_path(), &actual).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden checksum file");
    assert_eq!(actual, golden);
}

fn random_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let shape = FeatureShape::new(c, h, w).unwrap();
    let mut rng = RngState::new(seed).rng();
    FeatureMap::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn mean_pool_examples() {
    let shape = FeatureShape::new(3, 2, 5).unwrap();
    let constant = FeatureMap::new(shape, vec![3.0; shape.len()]).unwrap();
    assert!(mean_pool(&constant).values().iter().all(|v| (v - 3.0).abs() < 1e-15));

    let single = random_map(1, 7, 1, 1);
    assert_eq!(mean_pool(&single).values(), single.values());

    let m = random_map(2, 8, 2, 2);
    let pooled = mean_pool(&m);
    for c in 0..8 {
        let sum = m.get(c, 0, 0) + m.get(c, 0, 1) + m.get(c, 1, 0) + m.get(c, 1, 1);
        assert!((pooled.values()[c] - sum / 4.0).abs() < 1e-12);
    }
}

#[test]
fn mean_pool_commutes_with_channel_permutation() {
    let m = random_map(3, 6, 3, 2);
    let mut perm: Vec<usize> = (0..6).collect();
    perm.shuffle(&mut RngState::new(4).rng());
    let hw = 6;
    let permuted: Vec<f64> = perm.iter().flat_map(|&c| m.values()[c * hw..(c + 1) * hw].to_vec()).collect();
    let pm = FeatureMap::new(m.shape(), permuted).unwrap();
    let (a, b) = (mean_pool(&m), mean_pool(&pm));
    for (j, &c) in perm.iter().enumerate() {
        assert_eq!(b.values()[j], a.values()[c]);
    }
}

#[test]
fn feature_files_round_trip_and_reject_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let shape = FeatureShape::new(5, 2, 3).unwrap();
    let map = synthetic_features("x", shape);
    let path = dir.path().join("x.rvqf");
    store_features(&map, &path).unwrap();
    let loaded = load_features(&path).unwrap();
    assert_eq!(loaded, map);

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"RVQF");
    assert_eq!(bytes.len(), 18 + 30 * 4);
    let format_err = |b: &[u8]| matches!(decode_features(b, "t"), Err(CoreError::Format { .. }));
    assert!(format_err(&bytes[..bytes.len() - 2]));
    assert!(format_err(&bytes[..10]));
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert!(format_err(&bad));
    let mut grown = bytes.clone();
    grown[6] = 6;
    assert!(format_err(&grown));

    let provider = FeatureDirectory::new(dir.path(), shape);
    assert_eq!(provider.features("x").unwrap(), map);
    assert!(provider.features("missing").unwrap_err().is_config());
    let wrong = FeatureDirectory::new(dir.path(), FeatureShape::new(5, 3, 2).unwrap());
    assert!(wrong.features("x").unwrap_err().is_config());
}
