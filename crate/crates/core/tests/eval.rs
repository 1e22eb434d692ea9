mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{cohort, patients, roster};
use proptest::prelude::*;
use rand::Rng;
use vwd_core::cnn::InputMode;
use vwd_core::cohort::Label;
use vwd_core::eval::*;
use vwd_core::rng::task_rng;
use vwd_core::synth::{BreathParams, Spread, SynthConfig};

fn label_of(patients: &[(String, Label)]) -> BTreeMap<String, Label> {
    patients.iter().cloned().collect()
}

fn class_counts(ids: &[String], labels: &BTreeMap<String, Label>) -> [usize; 2] {
    let mut c = [0; 2];
    for id in ids {
        c[labels[id].class_index()] += 1;
    }
    c
}

#[test]
fn kfold_on_eighty_patients() {
    let ps = patients(40, 40);
    let labels = label_of(&ps);
    let plan = stratified_kfold(&ps, 5, 3).unwrap();
    let folds = &plan.assignments[0];
    assert_eq!(folds.len(), 5);
    let mut seen = BTreeSet::new();
    for f in folds {
        assert_eq!(f.test.len(), 16);
        assert_eq!(class_counts(&f.test, &labels), [8, 8]);
        assert_eq!(f.train.len(), 64);
        let test: BTreeSet<_> = f.test.iter().collect();
        assert!(f.train.iter().all(|id| !test.contains(id)));
        seen.extend(f.test.iter().cloned());
    }
    assert_eq!(seen.len(), 80);
    assert_eq!(stratified_kfold(&ps, 5, 3).unwrap(), plan);
}

#[test]
fn kfold_small_and_unbalanced() {
    let plan = stratified_kfold(&patients(5, 5), 5, 0).unwrap();
    let labels = label_of(&patients(5, 5));
    for f in &plan.assignments[0] {
        assert_eq!(class_counts(&f.test, &labels), [1, 1]);
    }
    assert!(matches!(
        stratified_kfold(&patients(9, 5), 5, 0),
        Err(EvalError::UnbalancedCohort { .. })
    ));
}

#[test]
fn holdout_is_stratified_and_seeded() {
    let ps = patients(40, 40);
    let labels = label_of(&ps);
    let a = holdout_split(&ps, 0.7, 1).unwrap();
    let f = &a.assignments[0][0];
    assert_eq!(class_counts(&f.train, &labels), [28, 28]);
    assert_eq!(class_counts(&f.test, &labels), [12, 12]);
    let b = holdout_split(&ps, 0.7, 2).unwrap();
    assert_ne!(a.assignments, b.assignments);
    assert_eq!(b.assignments[0][0].test.len(), 24);
    assert!(matches!(
        holdout_split(&patients(2, 2), 0.99, 0),
        Err(EvalError::EmptySide { .. })
    ));
}

#[test]
fn bootstrap_test_fraction_matches_inclusion_probability() {
    let ps = patients(40, 40);
    let fractions: Vec<f64> = (0..1000u64)
        .map(|seed| bootstrap_split(&ps, 0.8, seed).unwrap().assignments[0][0].test.len() as f64 / 80.0)
        .collect();
    // Each class draws 32 of 40 with replacement; a patient is never drawn
    // with probability (1 - 1/40)^32.
    let analytic = (1.0f64 - 1.0 / 40.0).powi(32);
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let sd = (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        (mean - analytic).abs() <= 3.0 * sd / n.sqrt(),
        "mean {mean} analytic {analytic}"
    );
}

#[test]
fn bootstrap_with_distinct_draws_leaves_the_rest_for_testing() {
    let ps = patients(5, 5);
    let labels = label_of(&ps);
    let plan = (0..10_000u64)
        .map(|s| bootstrap_split(&ps, 0.8, s).unwrap())
        .find(|p| {
            let train = &p.assignments[0][0].train;
            train.iter().collect::<BTreeSet<_>>().len() == train.len()
        })
        .expect("some seed draws without repeats");
    let f = &plan.assignments[0][0];
    assert_eq!(class_counts(&f.train, &labels), [4, 4]);
    assert_eq!(class_counts(&f.test, &labels), [1, 1]);
    assert!(matches!(
        bootstrap_split(&patients(1, 5), 0.8, 0),
        Err(EvalError::EmptySide { .. })
    ));
}

#[test]
fn random_kfold_redraws_per_trial_and_kfold_does_not() {
    let ps = patients(10, 10);
    let fixed = plan_splits(&ps, SplitScheme::KFold { k: 5 }, 3, 4).unwrap();
    assert!(fixed.assignments.windows(2).all(|w| w[0] == w[1]));
    let random = plan_splits(&ps, SplitScheme::RandomKFold { k: 5 }, 3, 4).unwrap();
    assert_ne!(random.assignments[0], random.assignments[1]);
}

#[test]
fn oversampling_balances_by_duplication() {
    let items: Vec<(usize, Label)> = (0..150)
        .map(|i| (i, if i < 100 { Label::Ards } else { Label::NonArds }))
        .collect();
    let out = oversample_instances(items.clone(), 1).unwrap();
    let count = |l: Label| out.iter().filter(|(_, x)| *x == l).count();
    assert_eq!((count(Label::Ards), count(Label::NonArds)), (100, 100));
    assert_eq!(out[..150], items[..]);

    let balanced: Vec<(usize, Label)> = (0..6).map(|i| (i, Label::from_class_index(i % 2))).collect();
    assert_eq!(oversample_instances(balanced.clone(), 1).unwrap(), balanced);

    let small: Vec<(usize, Label)> = (0..10)
        .map(|i| (i, if i < 7 { Label::NonArds } else { Label::Ards }))
        .collect();
    let out = oversample_instances(small, 2).unwrap();
    let ards: Vec<usize> = out.iter().filter(|(_, l)| *l == Label::Ards).map(|(i, _)| *i).collect();
    assert_eq!(ards.len(), 7);
    for original in 7..10 {
        assert!(ards.contains(&original));
    }
    assert!(ards.iter().all(|i| (7..10).contains(i)));

    let one: Vec<(usize, Label)> = (0..3).map(|i| (i, Label::Ards)).collect();
    assert!(matches!(oversample_instances(one, 0), Err(EvalError::SingleClass)));
}

#[test]
fn patient_scores_use_strict_majority() {
    let s = patient_score(&[true, true, false]).unwrap();
    assert!((s - 2.0 / 3.0).abs() < 1e-15);
    assert!(patient_is_ards(s));
    let s = patient_score(&[true, false]).unwrap();
    assert_eq!(s, 0.5);
    assert!(!patient_is_ards(s));
    assert!(matches!(patient_score(&[]), Err(EvalError::NoWindows)));
}

/// P(pos > neg) + P(pos = neg) / 2 over every pair.
fn pair_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

#[test]
fn auc_examples() {
    assert_eq!(
        roc_auc(&[0.9, 0.8, 0.2, 0.4], &[true, true, false, false]).unwrap(),
        1.0
    );
    assert_eq!(
        roc_auc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(),
        0.5
    );
    assert!(matches!(
        roc_auc(&[0.1, 0.2], &[true, true]),
        Err(EvalError::SingleClass)
    ));
}

#[test]
fn auc_equals_pair_counting_on_random_vectors() {
    let mut rng = task_rng(77, &[]);
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        // Coarse scores so that ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        truth[0] = true;
        truth[1] = false;
        let auc = roc_auc(&scores, &truth).unwrap();
        assert!((auc - pair_auc(&scores, &truth)).abs() < 1e-12);
    }
}

#[test]
fn confusion_examples() {
    let m = confusion_metrics(&[true, true, false, false], &[true, false, true, false]).unwrap();
    for v in [m.accuracy, m.sensitivity, m.specificity, m.ppv, m.npv] {
        assert_eq!(v, 0.5);
    }
    let t = [true, false, true, false, false];
    let m = confusion_metrics(&t, &t).unwrap();
    for v in [m.accuracy, m.sensitivity, m.specificity, m.ppv, m.npv] {
        assert_eq!(v, 1.0);
    }
    let m = confusion_metrics(&[false, false], &[true, false]).unwrap();
    assert!(m.ppv.is_nan());
    let json = serde_json::to_string(&m).unwrap();
    assert!(json.contains("\"ppv\":null"));
}

#[test]
fn confusion_matches_table_recount() {
    let mut rng = task_rng(78, &[]);
    for _ in 0..50 {
        let pred: Vec<bool> = (0..50).map(|_| rng.random_bool(0.5)).collect();
        let mut truth: Vec<bool> = (0..50).map(|_| rng.random_bool(0.5)).collect();
        truth[0] = true;
        truth[1] = false;
        let mut t = [[0.0f64; 2]; 2]; // [truth][pred]
        for (&p, &y) in pred.iter().zip(&truth) {
            t[usize::from(y)][usize::from(p)] += 1.0;
        }
        let (tp, fn_, fp, tn) = (t[1][1], t[1][0], t[0][1], t[0][0]);
        let m = confusion_metrics(&pred, &truth).unwrap();
        assert_eq!(m.accuracy, (tp + tn) / 50.0);
        assert_eq!(m.sensitivity, tp / (tp + fn_));
        assert_eq!(m.specificity, tn / (tn + fp));
        assert_eq!(m.ppv, tp / (tp + fp));
        assert_eq!(m.npv, tn / (tn + fn_));
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_to_monotone_transforms(
        raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 4..40),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let mut truth: Vec<bool> = raw.iter().map(|r| r.1).collect();
        truth[0] = true;
        truth[1] = false;
        let a = roc_auc(&scores, &truth).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(a, roc_auc(&warped, &truth).unwrap());
    }

    #[test]
    fn kfold_folds_are_balanced_and_disjoint(per_class in 1usize..8, k in 2usize..5, seed in 0u64..100) {
        let ps = patients(per_class * k, per_class * k);
        let labels = label_of(&ps);
        let plan = stratified_kfold(&ps, k, seed).unwrap();
        for f in &plan.assignments[0] {
            prop_assert_eq!(class_counts(&f.test, &labels), [per_class, per_class]);
            let test: BTreeSet<_> = f.test.iter().collect();
            prop_assert!(f.train.iter().all(|id| !test.contains(id)));
            prop_assert_eq!(f.train.len() + f.test.len(), ps.len());
        }
    }
}

fn separable_cohort(per_class: usize) -> SynthConfig {
    let base = BreathParams::default();
    SynthConfig {
        n_patients_per_class: per_class,
        duration_s: 200.0,
        seed: 31,
        ards: BreathParams {
            resp_rate: Spread::new(12.0, 0.5, 0.5),
            ..base
        },
        non_ards: BreathParams {
            resp_rate: Spread::new(30.0, 0.5, 0.5),
            peak_insp_flow: Spread::new(80.0, 2.0, 2.0),
            ..base
        },
        ..SynthConfig::default()
    }
}

fn small_rf(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::rf(SplitScheme::KFold { k: 5 }, seed);
    cfg.trials = 2;
    cfg.forest.n_trees = 25;
    cfg
}

#[test]
fn forest_separates_planted_features() {
    let c = cohort(&separable_cohort(5));
    let report = run_experiment(&c, &small_rf(3)).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.final_epoch().auc.mean, 1.0);
    assert_eq!(report.epochs.len(), 1);
}

#[test]
fn untrained_cnn_is_near_chance() {
    let cfg = SynthConfig {
        n_patients_per_class: 4,
        duration_s: 100.0,
        seed: 41,
        ..SynthConfig::default()
    };
    let c = cohort(&cfg);
    let mut e = ExperimentConfig::cnn(InputMode::Raw, SplitScheme::KFold { k: 2 }, 5);
    e.trials = 1;
    e.epochs = 1;
    e.training.learning_rate = 0.0;
    let report = run_experiment(&c, &e).unwrap();
    let auc = report.final_epoch().auc.mean;
    assert!((0.3..=0.7).contains(&auc), "auc {auc}");
    assert_eq!(report.cells.len(), 2);
}

#[test]
fn reports_are_reproducible_and_self_consistent() {
    let c = cohort(&separable_cohort(5));
    let cfg = ExperimentConfig {
        split: SplitScheme::RandomKFold { k: 5 },
        trials: 3,
        ..small_rf(8)
    };
    let a = run_experiment(&c, &cfg).unwrap();
    let b = run_experiment(&c, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let labels = label_of(&roster(&c));
    for (t, folds) in a.plan.assignments.iter().enumerate() {
        for (f, fold) in folds.iter().enumerate() {
            let train: BTreeSet<_> = fold.train.iter().collect();
            assert!(fold.test.iter().all(|id| !train.contains(id)));
            for rec in a.patient_scores.iter().filter(|r| r.trial == t && r.fold == f) {
                assert!(fold.test.contains(&rec.patient_id));
                assert_eq!(labels[&rec.patient_id], rec.label);
            }
        }
    }

    for summary in &a.epochs {
        for name in METRIC_NAMES {
            let agg = summary.metric(name);
            for (t, per_trial) in agg.per_trial.iter().enumerate() {
                let vals: Vec<f64> = a
                    .cells
                    .iter()
                    .filter(|c| c.trial == t && c.epoch == summary.epoch)
                    .map(|c| match name {
                        "auc" => c.auc,
                        "accuracy" => c.accuracy,
                        "sensitivity" => c.sensitivity,
                        "specificity" => c.specificity,
                        "ppv" => c.ppv,
                        _ => c.npv,
                    })
                    .filter(|v| !v.is_nan())
                    .collect();
                let want = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                assert_eq!(*per_trial, want, "{name} trial {t}");
            }
            let defined: Vec<f64> = agg.per_trial.iter().flatten().copied().collect();
            let mean = defined.iter().sum::<f64>() / defined.len() as f64;
            assert!((agg.mean - mean).abs() < 1e-15);
            assert!(agg.ci95 >= 0.0);
            assert!((0.0..=1.0).contains(&agg.mean));
        }
    }
}

#[test]
fn invalid_model_input_pairs_are_rejected() {
    let mut cfg = small_rf(0);
    cfg.input_mode = InputMode::Raw;
    assert!(matches!(cfg.validate(), Err(EvalError::InvalidConfig(_))));
    let mut cnn = ExperimentConfig::cnn(InputMode::Raw, SplitScheme::KFold { k: 5 }, 0);
    cnn.input_mode = InputMode::Features;
    assert!(matches!(cnn.validate(), Err(EvalError::InvalidConfig(_))));
    let fft_two = ExperimentConfig::cnn(InputMode::RawPlusFft, SplitScheme::KFold { k: 5 }, 0);
    assert_eq!(fft_two.network.input_channels, 2);
    assert!(fft_two.validate().is_ok());
}

#[test]
fn identity_cutoff_matches_baseline() {
    let c = cohort(&separable_cohort(5));
    let sweep = ablation_sweep(
        &c,
        &SweepConfig {
            cnn: None,
            rf: Some(small_rf(2)),
            cutoffs_hz: vec![25.0, 0.5],
        },
    )
    .unwrap();
    let base = sweep.entry(ModelKind::Rf, None).unwrap();
    let full = sweep.entry(ModelKind::Rf, Some(25.0)).unwrap();
    assert_eq!(base.summary.auc.mean, full.summary.auc.mean);
    assert_eq!(sweep.rf.len(), 2);
    let bad = SweepConfig {
        cnn: None,
        rf: Some(small_rf(2)),
        cutoffs_hz: vec![30.0],
    };
    assert!(matches!(ablation_sweep(&c, &bad), Err(EvalError::InvalidConfig(_))));
}

#[test]
fn report_with_no_valid_folds_round_trips_through_json() {
    // Too short for a single 20-breath window at 9 breaths/min.
    let c = cohort(&SynthConfig {
        n_patients_per_class: 2,
        duration_s: 60.0,
        ..SynthConfig::high_band(4)
    });
    let mut cfg = small_rf(1);
    cfg.split = SplitScheme::KFold { k: 2 };
    let report = run_experiment(&c, &cfg).unwrap();
    assert!(report.cells.is_empty() && !report.failures.is_empty());
    assert!(report.final_epoch().auc.mean.is_nan());
    assert!(report.roc.tpr_mean.iter().all(|v| v.is_nan()));

    let json = serde_json::to_string(&report).unwrap();
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
    assert!(back.roc.tpr_mean.iter().all(|v| v.is_nan()));
}
