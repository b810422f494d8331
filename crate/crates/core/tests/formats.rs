mod common;

use std::path::PathBuf;

use common::fixtures;
use mlcvae::conditioning::LabelCombo;
use mlcvae::data::{encode_idx_images, encode_idx_labels, parse_idx, read_idx_images, read_idx_labels, IdxData};
use mlcvae::eval::{encode_ppm_grid, evaluate_unseen, read_ppm, write_ppm_grid, AttributeClassifier, ClassifierConfig, EvalReport, FeatureMode};
use mlcvae::model::{MlcVaeModel, ModeTag, TrainConfig};
use mlcvae::par::Exec;
use proptest::prelude::*;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn idx_fixtures_round_trip() {
    let bytes = std::fs::read(golden("images.idx")).unwrap();
    let set = read_idx_images(&golden("images.idx")).unwrap();
    assert_eq!((set.count, set.height, set.width), (3, 2, 3));
    assert_eq!(set.image(0), &[0, 17, 255, 128, 64, 1]);
    assert_eq!(set.image(2), &[200, 0, 0, 0, 0, 201]);
    assert_eq!(encode_idx_images(&set), bytes);

    let bytes = std::fs::read(golden("labels.idx")).unwrap();
    let labels = read_idx_labels(&golden("labels.idx")).unwrap();
    assert_eq!(labels, vec![7, 0, 9]);
    assert_eq!(encode_idx_labels(&labels), bytes);
}

#[test]
fn idx_kind_mismatch_is_an_error() {
    assert!(read_idx_labels(&golden("images.idx")).is_err());
    assert!(read_idx_images(&golden("labels.idx")).is_err());
}

proptest! {
    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(parse_idx(&encode_idx_labels(&labels)).unwrap(), IdxData::Labels(labels));
    }

    #[test]
    fn ppm_round_trip_reproduces_bytes(bytes in prop::collection::vec(any::<u8>(), 12..=12), rows in 1usize..3, cols in 1usize..3) {
        let img: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        let images: Vec<&[f64]> = vec![&img; rows * cols];
        let ppm = encode_ppm_grid(&images, 2, 2, rows, cols).unwrap();
        let (w, h, rgb) = read_ppm(&ppm).unwrap();
        prop_assert_eq!((w, h), (2 * cols, 2 * rows));
        // top-left cell
        for y in 0..2 {
            for x in 0..2 {
                let at = (y * w + x) * 3;
                prop_assert_eq!(&rgb[at..at + 3], &bytes[(y * 2 + x) * 3..(y * 2 + x) * 3 + 3]);
            }
        }
    }
}

#[test]
fn ppm_golden_files_are_byte_identical() {
    let white = vec![1.0; 12];
    let got = encode_ppm_grid(&[&white], 2, 2, 1, 1).unwrap();
    assert_eq!(got, std::fs::read(golden("white_2x2.ppm")).unwrap());

    let imgs: Vec<Vec<f64>> = (0..5)
        .map(|k| (0..18).map(|i| ((k * 7 + i) % 11) as f64 / 10.0).collect())
        .collect();
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.ppm");
    write_ppm_grid(&refs, 2, 3, 2, 3, &path).unwrap();
    assert_eq!(std::fs::read(path).unwrap(), std::fs::read(golden("grid_2x3.ppm")).unwrap());
}

#[test]
fn checkpoint_files_round_trip_bit_identically() {
    let ds = fixtures::synthetic(64, 3);
    let dir = tempfile::tempdir().unwrap();
    for (name, cfg) in fixtures::all_modes() {
        let mut m = fixtures::model(cfg, 2);
        let tc = TrainConfig { lr: 1e-3, epochs: 1, batch_size: 16, seed: 1 };
        m.train(&ds, &tc, Exec::Parallel, |_| {}).unwrap();
        let path = dir.path().join(format!("{name}.ckpt"));
        m.save(&path).unwrap();
        let back = MlcVaeModel::load(&path).unwrap();
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap(), "{name}");
        let c = LabelCombo::new(vec![1, 2]);
        let a = m.sample_combo(&c, 3, 7).unwrap();
        let b = back.sample_combo(&c, 3, 7).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
}

#[test]
fn missing_checkpoint_names_the_path() {
    let err = MlcVaeModel::load(std::path::Path::new("/nonexistent/model.ckpt")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/model.ckpt"), "{err}");
}

fn report(seed: u64) -> String {
    let ds = fixtures::synthetic(200, 4);
    let cc = ClassifierConfig { hidden: 16, epochs: 2, batch_size: 32, lr: 1e-3, seed };
    let clfs: Vec<_> = ["shape", "color"]
        .iter()
        .map(|a| AttributeClassifier::train(&ds, a, FeatureMode::for_attribute(a), &cc).unwrap())
        .collect();
    let mut m = fixtures::model(fixtures::config(ModeTag::Mlc, false), seed);
    m.train(&ds, &TrainConfig { lr: 1e-3, epochs: 1, batch_size: 32, seed }, Exec::Parallel, |_| {}).unwrap();
    let unseen = [LabelCombo::new(vec![0, 1]), LabelCombo::new(vec![3, 2])];
    let r = evaluate_unseen(&m, ds.spec(), &clfs, &unseen, 20, seed, Exec::Parallel).unwrap();
    r.to_toml().unwrap()
}

#[test]
fn equal_seeds_give_byte_identical_reports() {
    let a = report(5);
    assert_eq!(a, report(5));
    let parsed = EvalReport::from_toml(&a).unwrap();
    assert_eq!(parsed.to_toml().unwrap(), a);
}
