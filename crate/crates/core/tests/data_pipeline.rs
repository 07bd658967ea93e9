use std::fs;

use fedoui_core::data::{
    load_cifar10, subset, synthetic_blobs, CIFAR_RECORD, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
use fedoui_core::nn::{self, ModelSpec};
use fedoui_core::rng::{purpose_stream, Purpose};
use fedoui_core::Error;

fn records(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        out.push(l);
        out.extend((0..CIFAR_RECORD - 1).map(|j| ((i * 31 + j * 7) % 256) as u8));
    }
    out
}

#[test]
fn loads_the_archive_layout_from_a_nested_folder() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("cifar-10-batches-bin");
    fs::create_dir(&dir).unwrap();
    for (i, f) in CIFAR_TRAIN_FILES.iter().enumerate() {
        fs::write(dir.join(f), records(&[i as u8, 9 - i as u8])).unwrap();
    }
    fs::write(dir.join(CIFAR_TEST_FILE), records(&[7])).unwrap();
    let (train, test) = load_cifar10(root.path()).unwrap();
    assert_eq!(train.len(), 10);
    assert_eq!(test.len(), 1);
    assert_eq!(train.labels, vec![0, 9, 1, 8, 2, 7, 3, 6, 4, 5]);
    assert_eq!(train.class_histogram(), vec![1; 10]);
    assert_eq!(test.sample_shape(), &[3, 32, 32]);
    assert!(train.images.is_finite());
}

#[test]
fn missing_batch_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(CIFAR_TRAIN_FILES[0]), records(&[1])).unwrap();
    match load_cifar10(dir.path()) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with(CIFAR_TRAIN_FILES[1])),
        other => panic!("expected I/O error, got {other:?}"),
    }
}

#[test]
fn subsets_are_reproducible_draws() {
    let ds = synthetic_blobs(3, 20, 4, 1, 0.5, &mut purpose_stream(1, Purpose::Synthetic)).unwrap();
    let a = subset(&ds, 25, &mut purpose_stream(9, Purpose::Subset)).unwrap();
    let b = subset(&ds, 25, &mut purpose_stream(9, Purpose::Subset)).unwrap();
    assert_eq!(a, b);
    let full = subset(&ds, ds.len(), &mut purpose_stream(9, Purpose::Subset)).unwrap();
    let mut hist = full.class_histogram();
    hist.sort();
    assert_eq!(hist, vec![20, 20, 20]);
    assert!(subset(&ds, 0, &mut purpose_stream(9, Purpose::Subset)).unwrap().is_empty());
    assert!(subset(&ds, ds.len() + 1, &mut purpose_stream(9, Purpose::Subset)).is_err());
}

#[test]
fn tight_blobs_are_linearly_separable() {
    let side = 4;
    let ds = synthetic_blobs(2, 200, side, 1, 0.05, &mut purpose_stream(3, Purpose::Synthetic)).unwrap();
    assert_eq!(ds.class_histogram(), vec![200, 200]);
    let features = side * side;
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|i| i % 4 < 2);
    let flat = |idx: &[usize]| {
        let (x, y) = ds.batch(idx);
        (x.reshape(vec![idx.len(), features]).unwrap(), y)
    };
    let (x, y) = flat(&train_idx);
    let spec = ModelSpec::linear(features, 2);
    let mut params = spec.zero_params();
    let mut velocity = params.zeros_like();
    for _ in 0..100 {
        let (_, cache) = nn::forward(&spec, &params, &x).unwrap();
        let g = nn::backward(&spec, &params, &cache, &y).unwrap();
        nn::sgd_momentum_step(&mut params, &g, &mut velocity, 0.1, 0.0).unwrap();
    }
    let (xt, yt) = flat(&test_idx);
    let (logits, _) = nn::infer(&spec, &params, &xt).unwrap();
    let correct = nn::argmax_rows(&logits).iter().zip(&yt).filter(|(p, t)| p == t).count();
    let acc = correct as f64 / yt.len() as f64;
    assert!(acc > 0.95, "probe accuracy {acc}");
}
