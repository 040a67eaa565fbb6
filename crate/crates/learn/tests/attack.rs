use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scol_learn::attack::*;
use scol_learn::data::{synthetic_splits, SplitSpec, SyntheticParams};
use scol_learn::protocol::{run_scenario, Method, ScenarioConfig, TrainedModel};
use scol_learn::{LabeledDataset, ModelConfig, Splits};

fn splits(per_party: usize, seed: u64) -> Splits {
    let spec = SplitSpec::synthetic().scaled(per_party as f64 / 20_000.0);
    synthetic_splits(&spec, &SyntheticParams::default(), seed).unwrap()
}

fn target(method: Method, s: &Splits) -> TrainedModel {
    let mut c = ScenarioConfig::new(method, ModelConfig::fcn(784, 10), 3);
    c.train.epochs = 1;
    run_scenario(&c, s).unwrap().parties.swap_remove(0).model
}

fn gaussian(rows: usize, cols: usize, shift: f32, rng: &mut ChaCha8Rng) -> AttackFeatures {
    let block = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f32, _>(StandardNormal) + shift);
    AttackFeatures {
        components: vec![Component::Output],
        blocks: vec![block],
    }
}

fn quick() -> AttackTrainConfig {
    AttackTrainConfig {
        epochs: 10,
        ..AttackTrainConfig::default()
    }
}

#[test]
fn ctfe_layout_covers_every_weight() {
    let s = splits(100, 1);
    let m = target(Method::Ctfe, &s);
    let cfg = ModelConfig::fcn(784, 10);
    let layout = AttackerAccess::new(Method::Ctfe, &cfg).layout(&m).unwrap();
    let total: usize = layout.iter().map(|c| c.1).sum();
    // 10 outputs + loss + 10 label + 59,008 weights + 3·64 activations.
    assert_eq!(total, 59_221);
    assert_eq!(layout[0], (Component::Output, 10));
    assert_eq!(layout[1], (Component::Loss, 1));
}

#[test]
fn sfe_sees_a_strict_subset_of_ctfe() {
    let s = splits(100, 2);
    let cfg = ModelConfig::fcn(784, 10);
    let m = target(Method::Ctfe, &s);
    let ctfe = AttackerAccess::new(Method::Ctfe, &cfg).layout(&m).unwrap();
    let sfe = AttackerAccess::new(Method::Sfe, &cfg).layout(&m).unwrap();
    assert!(sfe.len() < ctfe.len());
    assert!(sfe.iter().all(|c| ctfe.contains(c)));
    assert!(!sfe.iter().any(|c| matches!(c.0, Component::Gradient(l) if l < cfg.fe_layers)));
}

#[test]
fn ltfe_sees_only_its_own_block_of_the_classifier() {
    let s = splits(100, 3);
    let cfg = ModelConfig::fcn(784, 10);
    let m = target(Method::Ltfe, &s);
    let layout = AttackerAccess::new(Method::Ltfe, &cfg).layout(&m).unwrap();
    assert_eq!(
        layout,
        [
            (Component::Output, 10),
            (Component::Loss, 1),
            (Component::Label, 10),
            (Component::Gradient(3), 10 * 64)
        ]
    );
    assert!(AttackerAccess::new(Method::Ctfe, &cfg).layout(&m).is_err());
    assert!(AttackerAccess::new(Method::Nc, &cfg).layout(&m).is_err());
}

#[test]
fn ltfe_features_ignore_the_foreign_extractor() {
    let s = splits(100, 4);
    let cfg = ModelConfig::fcn(784, 10);
    let m = target(Method::Ltfe, &s);
    let TrainedModel::Concat { extractors, classifier } = &m else {
        panic!("LTFE yields concatenation models");
    };
    // Zero the classifier's weights on the foreign block: the outputs, and
    // so every feature, no longer depend on the other extractor.
    let mut h = classifier.clone();
    h.layers_mut()[0].w.slice_mut(ndarray::s![.., 64..]).fill(0.0);
    let mut other = extractors.clone();
    other[1] = scol_learn::Net::init(&cfg, 99).unwrap().split_at(3).unwrap().0;
    let access = AttackerAccess::new(Method::Ltfe, &cfg);
    let d = s.test.subset(&[0, 1, 2]);
    let a = build_features(&TrainedModel::Concat { extractors: extractors.clone(), classifier: h.clone() }, &access, &d, None).unwrap();
    let b = build_features(&TrainedModel::Concat { extractors: other, classifier: h }, &access, &d, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn layouts_are_strict_projections() {
    let s = splits(100, 5);
    let cfg = ModelConfig::fcn(784, 10);
    let layout = |m: Method| AttackerAccess::new(m, &cfg).layout(&target(m, &s)).unwrap();
    let (ctfe, sfe, ltfe) = (layout(Method::Ctfe), layout(Method::Sfe), layout(Method::Ltfe));
    assert!(ltfe.len() < sfe.len() && sfe.len() < ctfe.len());
    assert!(ltfe.iter().all(|c| sfe.contains(c)));
    assert!(sfe.iter().all(|c| ctfe.contains(c)));
}

#[test]
fn identical_samples_give_identical_features() {
    let s = splits(100, 4);
    let m = target(Method::Ctfe, &s);
    let access = AttackerAccess::new(Method::Ctfe, &ModelConfig::fcn(784, 10));
    let d = s.test.subset(&[0, 1, 0, 2, 1]);
    for sketch in [None, Some(&Sketch::default())] {
        let f = build_features(&m, &access, &d, sketch).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(f.row(0), f.row(2));
        assert_eq!(f.row(1), f.row(4));
        assert_ne!(f.row(0), f.row(1));
        assert_eq!(f, build_features(&m, &access, &d, sketch).unwrap());
    }
}

#[test]
fn sketch_bounds_component_widths() {
    let s = splits(100, 5);
    let m = target(Method::Ctfe, &s);
    let access = AttackerAccess::new(Method::Ctfe, &ModelConfig::fcn(784, 10));
    let sk = Sketch::default();
    let f = build_features(&m, &access, &s.test.subset(&[0, 1, 2]), Some(&sk)).unwrap();
    assert!(f.blocks.iter().all(|b| b.ncols() <= sk.max_width));
    let full = build_features(&m, &access, &s.test.subset(&[0]), None).unwrap();
    assert_eq!(full.width(), 59_221);
}

#[test]
fn separable_fixture_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (m, o) = (gaussian(400, 8, 2.0, &mut rng), gaussian(400, 8, -2.0, &mut rng));
    let model = train_attack(&m, &o, &quick(), 1).unwrap();
    let r = evaluate_attack(&model, &m, &o).unwrap();
    let correct = r.member_scores.iter().filter(|&&p| p >= 0.5).count() + r.nonmember_scores.iter().filter(|&&p| p < 0.5).count();
    assert!(correct as f64 / 800.0 >= 0.99, "{correct}/800");
    assert!(r.auc > 0.99);
}

#[test]
fn permuted_labels_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool = gaussian(4000, 8, 0.0, &mut rng);
    let split = |a: usize, b: usize| pool.rows(&(a..b).collect::<Vec<_>>());
    let model = train_attack(&split(0, 500), &split(500, 1000), &quick(), 2).unwrap();
    let r = evaluate_attack(&model, &split(1000, 2500), &split(2500, 4000)).unwrap();
    assert!((r.auc - 0.5).abs() < 0.05, "auc {}", r.auc);
}

#[test]
fn attack_training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, o) = (gaussian(100, 4, 0.5, &mut rng), gaussian(150, 4, -0.5, &mut rng));
    let a = train_attack(&m, &o, &quick(), 9).unwrap().predict(&m).unwrap();
    let b = train_attack(&m, &o, &quick(), 9).unwrap().predict(&m).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_sets_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = gaussian(10, 4, 0.0, &mut rng);
    let empty = m.rows(&[]);
    assert!(train_attack(&m, &empty, &quick(), 1).is_err());
    assert!(AttackReport::from_scores(vec![], vec![0.5]).is_err());
    let other = AttackFeatures {
        components: vec![Component::Loss],
        blocks: m.blocks.clone(),
    };
    assert!(train_attack(&m, &other, &quick(), 1).is_err());
}

#[test]
fn auc_extremes() {
    let perfect = AttackReport::from_scores(vec![0.9, 0.8, 0.7], vec![0.1, 0.2]).unwrap();
    assert_eq!(perfect.auc, 1.0);
    let inverted = AttackReport::from_scores(vec![0.1, 0.2], vec![0.9, 0.8]).unwrap();
    assert_eq!(inverted.auc, 0.0);
    let tied = AttackReport::from_scores(vec![0.5; 7], vec![0.5; 3]).unwrap();
    assert_eq!(tied.auc, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let coin = |rng: &mut ChaCha8Rng| (0..5000).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let r = AttackReport::from_scores(coin(&mut rng), coin(&mut rng)).unwrap();
    assert!((r.auc - 0.5).abs() < 0.02, "auc {}", r.auc);
}

#[test]
fn roc_runs_from_origin_to_corner() {
    let r = AttackReport::from_scores(vec![0.9, 0.4, 0.6], vec![0.5, 0.1]).unwrap();
    let (first, last) = (r.roc[0], *r.roc.last().unwrap());
    assert_eq!((first.tpr, first.fpr), (0.0, 0.0));
    assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
    assert!(r.roc.windows(2).all(|w| w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr));
    // Pairs ranked correctly: 5 of 6.
    assert!((r.auc - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn histogram_accounts_for_every_score() {
    let m = vec![0.0, 0.05, 0.51, 0.99, 1.0, 1.0];
    let o = vec![0.02, 0.3, 0.5];
    let r = AttackReport::from_scores(m.clone(), o.clone()).unwrap();
    assert_eq!(r.histogram.len(), HIST_BINS);
    assert_eq!(r.histogram.iter().map(|b| b.members).sum::<usize>(), m.len());
    assert_eq!(r.histogram.iter().map(|b| b.nonmembers).sum::<usize>(), o.len());
    assert_eq!(r.histogram[HIST_BINS - 1].members, 3);
    // Scores in distinct bins: the binned AUC is exact.
    let spread = AttackReport::from_scores(vec![0.93, 0.61, 0.27], vec![0.12, 0.48]).unwrap();
    assert!((spread.histogram_auc() - spread.auc).abs() < 1e-12);
}

#[test]
fn privacy_experiment_balances_members_and_holdout() {
    let mut cfg = PrivacyConfig::new(Method::Sfe, 150);
    cfg.train.epochs = 1;
    cfg.attack.epochs = 2;
    let r = run_privacy_experiment(&cfg, &[1, 2]).unwrap();
    assert_eq!(r.reports.len(), 2);
    for rep in &r.reports {
        assert_eq!(rep.member_scores.len(), rep.nonmember_scores.len());
        assert!(!rep.member_scores.is_empty());
    }
    assert!(r.std_auc() >= 0.0 && (0.0..=1.0).contains(&r.mean_auc()));
    assert!(run_privacy_experiment(&PrivacyConfig::new(Method::Nc, 150), &[1]).is_err());
}

#[test]
fn features_need_samples() {
    let s = splits(100, 11);
    let m = target(Method::Ctfe, &s);
    let access = AttackerAccess::new(Method::Ctfe, &ModelConfig::fcn(784, 10));
    assert!(build_features(&m, &access, &LabeledDataset::empty(784, 10), None).is_err());
}

#[test]
fn binned_auc_tracks_exact_auc_on_spread_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let members: Vec<f64> = (0..4000).map(|_| rng.random::<f64>().powf(0.7)).collect();
    let nonmembers: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
    let r = AttackReport::from_scores(members, nonmembers).unwrap();
    assert!(r.auc > 0.55);
    assert!((r.histogram_auc() - r.auc).abs() <= 0.02, "{} vs {}", r.histogram_auc(), r.auc);
}
