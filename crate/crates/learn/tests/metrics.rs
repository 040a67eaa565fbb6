use scol_learn::{evaluate, LearnError};

#[test]
fn six_sample_case_by_hand() {
    // actual:    0 0 1 1 2 2
    // predicted: 0 1 1 1 2 0
    let e = evaluate(&[0, 1, 1, 1, 2, 0], &[0, 0, 1, 1, 2, 2], 3).unwrap();
    assert_eq!(e.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
    assert!((e.accuracy - 400.0 / 6.0).abs() < 1e-9);
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    // Label 0: tp 1, fp 1, fn 1, tn 3.
    let l0 = e.label(0);
    close(l0.accuracy, 400.0 / 6.0);
    close(l0.precision, 50.0);
    close(l0.recall, 50.0);
    close(l0.f1, 50.0);
    // Label 1: tp 2, fp 1, fn 0, tn 3.
    let l1 = e.label(1);
    close(l1.accuracy, 500.0 / 6.0);
    close(l1.precision, 200.0 / 3.0);
    close(l1.recall, 100.0);
    close(l1.f1, 80.0);
    // Label 2: tp 1, fp 0, fn 1, tn 4.
    let l2 = e.label(2);
    close(l2.precision, 100.0);
    close(l2.recall, 50.0);
    close(l2.f1, 200.0 / 3.0);
    close(e.mean_f1(&[1, 2]), (80.0 + 200.0 / 3.0) / 2.0);
}

#[test]
fn never_predicted_label_scores_zero() {
    let e = evaluate(&[0, 0], &[0, 1], 2).unwrap();
    assert_eq!(e.label(1).precision, 0.0);
    assert_eq!(e.label(1).f1, 0.0);
}

#[test]
fn mismatched_lengths_and_labels_are_errors() {
    assert!(matches!(evaluate(&[0], &[0, 1], 2), Err(LearnError::Input(_))));
    assert!(matches!(evaluate(&[2], &[0], 2), Err(LearnError::Input(_))));
}
