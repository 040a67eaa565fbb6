use std::collections::HashSet;
use std::io::Write;

use proptest::prelude::*;
use scol_learn::data::*;
use scol_learn::{LabeledDataset, LearnError, Tensor};

fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for x in [0x0000_0803u32, n, rows, cols] {
        v.extend(x.to_be_bytes());
    }
    v.extend_from_slice(body);
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend(0x0000_0801u32.to_be_bytes());
    v.extend((labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

#[test]
fn idx_images_scale_to_unit_interval() {
    let x = parse_idx_images(&idx_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
    assert_eq!(x.dim(), (2, 2));
    assert_eq!(x[[0, 1]], 1.0);
    assert_eq!(x[[1, 0]], 0.2);
    assert_eq!(parse_idx_labels(&idx_labels(&[7, 3])).unwrap(), vec![7, 3]);
}

#[test]
fn empty_idx_is_an_empty_dataset() {
    assert_eq!(parse_idx_images(&idx_images(0, 28, 28, &[])).unwrap().dim(), (0, 784));
    assert!(parse_idx_labels(&idx_labels(&[])).unwrap().is_empty());
}

#[test]
fn malformed_idx_is_a_format_error() {
    let mut bad = idx_images(1, 1, 2, &[1, 2]);
    bad[3] = 0x01;
    assert!(matches!(parse_idx_images(&bad), Err(LearnError::Format(_))));
    assert!(matches!(parse_idx_images(&idx_images(2, 1, 2, &[1, 2])), Err(LearnError::Format(_))));
    assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(LearnError::Format(_))));
}

#[test]
fn mnist_files_load_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, bytes: &[u8]| std::fs::write(dir.path().join(name), bytes).unwrap();
    write("train-images-idx3-ubyte", &idx_images(3, 28, 28, &[9; 3 * 784]));
    write("train-labels-idx1-ubyte", &idx_labels(&[1, 2, 3]));
    write("t10k-images-idx3-ubyte", &idx_images(1, 28, 28, &[0; 784]));
    write("t10k-labels-idx1-ubyte", &idx_labels(&[4]));
    let (train, test) = load_mnist_dir(dir.path()).unwrap();
    assert_eq!((train.len(), train.features(), test.len()), (3, 784, 1));
    write("t10k-labels-idx1-ubyte", &idx_labels(&[4, 5]));
    assert!(load_mnist_dir(dir.path()).is_err());
}

#[test]
fn synthetic_data_is_seeded() {
    let a = gen_synthetic(300, 784, 10, 4).unwrap();
    assert_eq!(a, gen_synthetic(300, 784, 10, 4).unwrap());
    assert_ne!(a, gen_synthetic(300, 784, 10, 5).unwrap());
    assert_eq!(a.features(), 784);
    assert!(a.x.iter().all(|v| v.is_finite()));
    assert!(a.y.iter().all(|&l| l < 10));
}

fn row_keys(d: &LabeledDataset) -> Vec<Vec<u64>> {
    d.x.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn splits_are_disjoint_sized_and_skewed() {
    let spec = SplitSpec::synthetic().scaled(0.05);
    let s = synthetic_splits(&spec, &SyntheticParams::default(), 3).unwrap();
    assert_eq!([s.global.len(), s.party1.len(), s.party2.len(), s.test.len()], [1000; 4]);
    let mut seen = HashSet::new();
    for d in [&s.global, &s.party1, &s.party2, &s.test] {
        for k in row_keys(d) {
            assert!(seen.insert(k), "row in two partitions");
        }
    }
    let (c1, c2) = (s.party1.label_counts(), s.party2.label_counts());
    assert!(c1[0] > c2[0]);
    assert!(c2[8] > c1[8]);
    // 3:1 weights over 1000 rows: favoured labels get 3000/16 = 187.5.
    assert!(c1[0].abs_diff(188) <= 1 && c1[9].abs_diff(62) <= 1, "{c1:?}");
    assert_eq!(s, synthetic_splits(&spec, &SyntheticParams::default(), 3).unwrap());
}

#[test]
fn mnist_shaped_split_has_table_sizes() {
    // A stand-in training file with the MNIST label histogram's scale.
    let n = 60_000;
    let y: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let train = LabeledDataset::new(Tensor::zeros((n, 1)), y, 10).unwrap();
    let test = LabeledDataset::empty(1, 10);
    let s = mnist_splits(&train, test, &SplitSpec::mnist(), 1).unwrap();
    assert_eq!([s.global.len(), s.party1.len(), s.party2.len()], [12_600, 23_700, 23_700]);
}

#[test]
fn infeasible_split_is_an_allocation_error() {
    let d = gen_synthetic(100, 4, 10, 1).unwrap();
    let spec = SplitSpec::skewed([50, 50, 50, 0], 3.0);
    assert!(matches!(split(&d, &spec, 1), Err(LearnError::Allocation(_))));
}

#[test]
fn share_subset_is_stratified() {
    let d = gen_synthetic(20_000, 8, 10, 2).unwrap();
    let sub = select_share_subset(&d, 0.3, 9).unwrap();
    assert_eq!(sub.len(), 6000);
    let (full, part) = (d.label_counts(), sub.label_counts());
    for l in 0..10 {
        let (p, q) = (full[l] as f64 / d.len() as f64, part[l] as f64 / sub.len() as f64);
        assert!((p - q).abs() <= 0.02, "label {l}: {p} vs {q}");
    }
    assert!(select_share_subset(&d, 0.0, 9).unwrap().is_empty());
    assert_eq!(select_share_subset(&d, 1.0, 9).unwrap(), d);
    assert!(matches!(select_share_subset(&d, 1.5, 9), Err(LearnError::Config(_))));
}

#[test]
fn fraud_partitions_have_fixed_counts() {
    let s = gen_fraud(1).unwrap();
    let counts: Vec<Vec<usize>> = [&s.global, &s.party1, &s.party2, &s.test].iter().map(|d| d.label_counts()).collect();
    assert_eq!(counts, vec![vec![1000, 100], vec![1000, 50], vec![1000, 242], vec![1000, 100]]);
    assert_eq!(counts.iter().map(|c| c[1]).sum::<usize>(), 492);
    assert_eq!(s.test.features(), 29);
    assert_eq!(gen_fraud(2).unwrap().party2.label_counts(), vec![1000, 242]);
}

#[test]
fn delimited_text_loads_with_or_without_header() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "a,b,class\n0.5,1.5,0\n-1,2,1\n3,4,1").unwrap();
    let d = load_delimited(f.path()).unwrap();
    assert_eq!((d.len(), d.features(), d.classes), (3, 2, 2));
    assert_eq!(d.x[[1, 0]], -1.0);
    let mut g = tempfile::NamedTempFile::new().unwrap();
    writeln!(g, "1,2,0\n1,2").unwrap();
    assert!(matches!(load_delimited(g.path()), Err(LearnError::Format(_))));
}

#[test]
fn holdout_is_fresh_and_party_shaped() {
    let spec = SplitSpec::synthetic().scaled(0.02);
    let (s, holdout) = synthetic_splits_with_holdout(&spec, &SyntheticParams::default(), 6).unwrap();
    assert_eq!(holdout.len(), s.party2.len());
    assert_eq!(holdout.label_counts(), s.party2.label_counts());
    let seen: HashSet<_> = row_keys(&s.party2).into_iter().chain(row_keys(&s.test)).collect();
    assert!(row_keys(&holdout).iter().all(|k| !seen.contains(k)));
}

proptest! {
    #[test]
    fn largest_remainder_hands_out_everything(total in 0usize..10_000, w in proptest::collection::vec(0.1f64..10.0, 1..12)) {
        let c = largest_remainder(total, &w);
        prop_assert_eq!(c.iter().sum::<usize>(), total);
        let sum: f64 = w.iter().sum();
        for (ci, wi) in c.iter().zip(&w) {
            prop_assert!((*ci as f64 - wi / sum * total as f64).abs() < 1.0 + 1e-9);
        }
    }
}
