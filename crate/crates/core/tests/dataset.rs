use ndarray::Array2;
use pivotgcn::dataset::{
    concat_views, load_features, load_labels, normalize_rows, save_features, save_labels, synth_generate,
    FeatureSet, SynthSpec,
};
use proptest::prelude::*;

const FMAT_HEADER: u64 = 4 + 4 + 8 + 4;

#[test]
fn million_row_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.fmat");
    let (n, d) = (1_000_000usize, 2usize);
    let features = Array2::from_shape_fn((n, d), |(i, j)| (i * d + j) as f32);
    save_features(&FeatureSet::new(features, None).unwrap(), &path).unwrap();
    let bytes = std::fs::metadata(&path).unwrap().len();
    assert_eq!(bytes, (n * d * 4) as u64 + FMAT_HEADER);
    let loaded = load_features(&path).unwrap();
    assert_eq!(loaded.len(), 1_000_000);
    assert_eq!(loaded.dim(), d);
    assert_eq!(loaded.row(999_999).to_vec(), vec![1_999_998.0, 1_999_999.0]);
}

#[test]
fn small_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.fmat");
    let fs = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], None).unwrap();
    save_features(&fs, &path).unwrap();
    let back = load_features(&path).unwrap();
    assert_eq!(back.features(), fs.features());
}

#[test]
fn declared_rows_beyond_payload_fail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.fmat");
    let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32, 1.0]).collect();
    save_features(&FeatureSet::from_rows(&rows, None).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    let err = load_features(&path).unwrap_err().to_string();
    assert!(err.contains("payload"), "{err}");
}

#[test]
fn concat_then_normalize_gives_unit_rows() {
    let a = FeatureSet::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0], vec![4.0, 0.0]], Some(vec![0, 1, 1])).unwrap();
    let b = FeatureSet::from_rows(
        &[vec![1.0, 1.0, 1.0], vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 5.0]],
        Some(vec![0, 1, 1]),
    )
    .unwrap();
    let c = normalize_rows(concat_views(&a, &b).unwrap()).unwrap();
    assert_eq!(c.dim(), 5);
    for row in c.features().rows() {
        let norm: f64 = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn two_identity_synth_counts() {
    let spec = SynthSpec {
        num_identities: 2,
        samples_per_identity: (5, 5),
        dim: 2,
        ..SynthSpec::default()
    };
    let fs = synth_generate(&spec).unwrap();
    assert_eq!(fs.len(), 10);
    let labels = fs.labels().unwrap();
    for id in 0..2 {
        assert_eq!(labels.iter().filter(|&&l| l == id).count(), 5);
    }
    assert!(labels.iter().all(|&l| l == 0 || l == 1));
    let again = synth_generate(&spec).unwrap();
    assert_eq!(fs.features(), again.features());
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (1usize..6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-100.0f32..100.0, d), 1..20))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_and_labels_survive_disk(rows in rows_strategy(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<i64> = (0..rows.len()).map(|i| ((seed >> (i % 64)) & 3) as i64 - 1).collect();
        let fs = FeatureSet::from_rows(&rows, None).unwrap();
        save_features(&fs, dir.path().join("f")).unwrap();
        save_labels(&labels, dir.path().join("l")).unwrap();
        let back = load_features(dir.path().join("f")).unwrap();
        prop_assert_eq!(back.features(), fs.features());
        prop_assert_eq!(load_labels(dir.path().join("l")).unwrap(), labels);
    }

    #[test]
    fn normalization_is_unit_and_idempotent(rows in rows_strategy()) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|&v| v.abs() > 1e-3)));
        let once = normalize_rows(FeatureSet::from_rows(&rows, None).unwrap()).unwrap();
        for row in once.features().rows() {
            let norm: f64 = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
        let twice = normalize_rows(FeatureSet::new(once.features().clone(), None).unwrap()).unwrap();
        for (a, b) in once.features().iter().zip(twice.features()) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }
}
