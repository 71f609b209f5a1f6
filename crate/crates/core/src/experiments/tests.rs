use super::*;
use crate::features::{resample_session, EDA_TS_ROWS, KINEMATIC_ROWS, NUMERIC_WIDTH};
use crate::models::{preset, Architecture, KinematicParams};
use crate::nnet::Activation;
use crate::telemetry::{generate_dataset, CsLabel, SyntheticConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

/// Random features whose kinematic rows are shifted by the label.
fn fake_samples(sessions: usize, per: usize, ts: usize, seed: u64) -> Vec<SegmentSample> {
    let mut rng = rng::stream(seed, &[]);
    let mut out = Vec::new();
    for s in 0..sessions {
        let sick = (s % 2) as u8;
        for i in 0..per {
            let shift = if sick == 1 { 0.8 } else { -0.8 };
            out.push(SegmentSample {
                session_id: format!("s{s:03}"),
                participant_id: format!("p{s:03}"),
                segment_index: i,
                kinematic: Array2::from_shape_simple_fn((KINEMATIC_ROWS, ts), || shift + rng.random_range(-1.0..1.0)),
                eda_ts: Array2::from_shape_simple_fn((EDA_TS_ROWS, ts), || rng.random_range(-1.0..1.0)),
                eda_num: Array1::from_shape_simple_fn(NUMERIC_WIDTH, || rng.random_range(0.0..5.0)),
                label: CsLabel {
                    value: sick,
                    ssq_delta: if sick == 1 { 30.0 } else { 5.0 },
                },
            });
        }
    }
    out
}

fn small_kinematic() -> HyperParams {
    HyperParams::Kinematic(KinematicParams {
        lstm_size: 6,
        dense_size: 5,
        acti: Activation::Tanh,
        rate: 0.1,
        lr: 5e-3,
    })
}

fn small_teacher() -> EdaParams {
    EdaParams {
        lstm_size: 4,
        dense_size_1: 3,
        dense_size_2: 4,
        acti: Activation::Tanh,
        rate: 0.1,
        lr: 5e-3,
    }
}

fn quick_cfg(epochs: usize) -> CvConfig {
    CvConfig {
        train: TrainConfig {
            epochs,
            batch_size: 16,
            ..TrainConfig::default()
        },
        teacher: small_teacher(),
        ..CvConfig::default()
    }
}

#[test]
fn kfold_sizes() {
    let spec = FoldSpec {
        k: 5,
        grouping: Grouping::Segment,
        seed: 3,
    };
    let folds = kfold_split(10, &spec).unwrap();
    assert!(folds.iter().all(|f| f.len() == 2));
    let mut sizes: Vec<usize> = kfold_split(11, &spec).unwrap().iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, [2, 2, 2, 2, 3]);
    assert!(matches!(kfold_split(4, &spec), Err(ExperimentError::TooFewItems { n: 4, k: 5 })));
    assert!(kfold_split(10, &FoldSpec { k: 1, ..spec }).is_err());
    assert_eq!(kfold_split(11, &spec).unwrap(), kfold_split(11, &spec).unwrap());
    assert_ne!(kfold_split(50, &spec).unwrap(), kfold_split(50, &FoldSpec { seed: 4, ..spec }).unwrap());
}

proptest! {
    #[test]
    fn folds_partition(n in 5usize..200, k in 2usize..6, seed in any::<u64>()) {
        let folds = kfold_split(n, &FoldSpec { k, grouping: Grouping::Segment, seed }).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (lo, hi) = (folds.iter().map(Vec::len).min().unwrap(), folds.iter().map(Vec::len).max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn session_folds_never_split(sessions in 5usize..20, per in 1usize..9, seed in any::<u64>()) {
        let samples = fake_samples(sessions, per, 2, 1);
        let folds = assign_folds(&samples, &FoldSpec { k: 5, grouping: Grouping::Session, seed }).unwrap();
        let mut seen = std::collections::HashMap::new();
        let mut count = 0;
        for (f, idx) in folds.iter().enumerate() {
            for &i in idx {
                count += 1;
                let prev = seen.insert(samples[i].session_id.clone(), f);
                prop_assert!(prev.is_none() || prev == Some(f));
            }
        }
        prop_assert_eq!(count, samples.len());
        let per_fold: Vec<usize> = folds.iter().map(|f| f.len() / per).collect();
        prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
    }
}

#[test]
fn six_sessions_of_eight() {
    let samples = fake_samples(6, 8, 2, 2);
    let folds = assign_folds(&samples, &FoldSpec::default()).unwrap();
    for idx in &folds {
        let ids: BTreeSet<&str> = idx.iter().map(|&i| samples[i].session_id.as_str()).collect();
        assert_eq!(idx.len(), 8 * ids.len());
    }
    let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, [8, 8, 8, 8, 16]);
}

#[test]
fn metric_fixtures() {
    let m = metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
    assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
    let m = metrics(&[0; 4], &[1; 4]).unwrap();
    assert_eq!((m.accuracy, m.f1), (0.0, 0.0));
    let mut pred = Vec::new();
    let mut lab = Vec::new();
    for (p, y, n) in [(1, 1, 8), (1, 0, 2), (0, 1, 4), (0, 0, 6)] {
        pred.extend(std::iter::repeat_n(p, n));
        lab.extend(std::iter::repeat_n(y, n));
    }
    let m = metrics(&pred, &lab).unwrap();
    assert!((m.accuracy - 0.7).abs() < 1e-15);
    // P = 8/10, R = 8/12.
    let (p, r) = (0.8, 8.0 / 12.0);
    assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    assert!((m.f1 - 16.0 / 22.0).abs() < 1e-15);
    assert!(matches!(metrics(&[1], &[1, 0]), Err(ExperimentError::LengthMismatch(1, 2))));
}

#[test]
fn subsample_is_seeded_and_ordered() {
    let s = fake_samples(3, 8, 2, 3);
    let a = subsample(s.clone(), 10, 7, &[1]).unwrap();
    let b = subsample(s.clone(), 10, 7, &[1]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
    let pos: Vec<usize> = a.iter().map(|x| s.iter().position(|y| y == x).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert!(subsample(s, 25, 7, &[1]).is_err());
}

fn resampled(n: usize, seed: u64) -> Vec<ResampledSession> {
    let cfg = FeatureConfig::default();
    generate_dataset(&SyntheticConfig::default(), n, seed)
        .unwrap()
        .iter()
        .map(|s| resample_session(s, &cfg).unwrap())
        .collect()
}

#[test]
fn sweep_cell_counts() {
    let sessions = resampled(4, 11);
    let cfg = CvConfig::default();
    let cells = time_span_cells(&sessions, &DEFAULT_SPANS, SampleControl::None, &cfg).unwrap();
    let counts: Vec<usize> = cells.iter().map(|(_, d)| d.len()).collect();
    assert_eq!(counts, [24 * 4, 16 * 4, 12 * 4, 8 * 4, 6 * 4]);
    let cells = time_span_cells(&sessions, &DEFAULT_SPANS, SampleControl::Downsample, &cfg).unwrap();
    assert!(cells.iter().all(|(_, d)| d.len() == 6 * 4));
    for (ts, d) in &cells {
        assert!(d.iter().all(|s| s.ts() == *ts));
    }
    assert!(time_span_cells(&sessions, &[0], SampleControl::None, &cfg).is_err());
    assert!(time_span_cells(&sessions, &[241], SampleControl::None, &cfg).is_err());

    let cells = exposure_cells(&sessions, EXPOSURE_TS, &DEFAULT_EXPOSURE_N, &cfg).unwrap();
    for (n, d) in &cells {
        assert_eq!(d.len(), 7 * 4);
        assert!(d.iter().all(|s| s.segment_index >= *n));
    }
    // n = 3 alone leaves 9 per session and subsamples nothing away.
    let cells = exposure_cells(&sessions, EXPOSURE_TS, &[3], &cfg).unwrap();
    assert_eq!(cells[0].1.len(), 9 * 4);
    assert!(exposure_cells(&sessions, EXPOSURE_TS, &[12], &cfg).is_err());
}

#[test]
fn cv_learns_and_repeats() {
    let samples = fake_samples(10, 4, 5, 5);
    let mut cfg = quick_cfg(30);
    cfg.train.batch_size = 8;
    let a = run_cv(&small_kinematic(), &samples, &cfg).unwrap();
    let b = run_cv(&small_kinematic(), &samples, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.folds.len(), 5);
    assert_eq!(a.folds.iter().map(|f| f.n_test).sum::<usize>(), 40);
    assert!(a.mean_accuracy >= 0.9, "{a:?}");
    let acc: Vec<f64> = a.folds.iter().map(|f| f.accuracy).collect();
    let (m, s) = mean_std(&acc);
    assert!((m - a.mean_accuracy).abs() < 1e-12 && (s - a.std_accuracy).abs() < 1e-12);
    let par = run_cv(&small_kinematic(), &samples, &CvConfig { jobs: 3, ..cfg }).unwrap();
    assert_eq!(a, par);
}

#[test]
fn fold_errors_carry_index() {
    let samples = fake_samples(10, 2, 3, 6);
    let mut bad = quick_cfg(1);
    bad.train.batch_size = 0;
    match run_cv(&small_kinematic(), &samples, &bad) {
        Err(ExperimentError::Fold { .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(run_cv(&small_kinematic(), &[], &quick_cfg(1)).is_err());
}

#[test]
fn held_out_poison_does_not_leak() {
    let mut samples = fake_samples(10, 3, 4, 8);
    let mut hp = preset(Architecture::Enhanced);
    if let HyperParams::Enhanced(p) = &mut hp {
        p.lstm_size = 4;
        p.dense_size_2 = 4;
        p.dense_size_3 = 4;
    }
    let cfg = quick_cfg(2);
    let folds = assign_folds(&samples, &cfg.folds).unwrap();
    let train_idx: Vec<usize> = folds[1..].iter().flatten().copied().collect();
    let clean = fit_fold_context(&hp, &samples, &train_idx, &cfg, 0).unwrap();
    for &i in &folds[0] {
        samples[i].kinematic.fill(1e6);
        samples[i].eda_ts.fill(-1e6);
        samples[i].eda_num.fill(42.0);
    }
    let poisoned = fit_fold_context(&hp, &samples, &train_idx, &cfg, 0).unwrap();
    assert_eq!(clean, poisoned);
    assert!(clean.teacher.as_ref().unwrap().len() == train_idx.len());
}

#[test]
fn enhanced_cv_runs() {
    let samples = fake_samples(10, 2, 4, 9);
    let mut hp = preset(Architecture::Enhanced);
    if let HyperParams::Enhanced(p) = &mut hp {
        p.lstm_size = 4;
        p.dense_size_2 = 4;
        p.dense_size_3 = 4;
    }
    let r = run_cv(&hp, &samples, &quick_cfg(2)).unwrap();
    assert_eq!(r.n_samples, 20);
}

#[test]
fn report_csvs() {
    let samples = fake_samples(10, 2, 3, 10);
    let cells = vec![(10usize, samples.clone()), (20, samples)];
    let report = sweep_cells(&[small_kinematic()], "T_s", &cells, &quick_cfg(1)).unwrap();
    let text = report.to_csv_string().unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "model,variable,value,fold,accuracy,f1,n_samples,grouping,seed");
    assert_eq!(lines.count(), 10);
    assert!(text.contains("kinematic,T_s,20,4,"));
    let agg = report.to_aggregate_string().unwrap();
    let rows: Vec<&str> = agg.lines().collect();
    assert_eq!(rows[0], "model,T_s=10,T_s=20");
    assert!(rows[1].starts_with("kinematic,"));
    assert_eq!(rows[1].matches('±').count(), 2);
}

#[test]
fn random_search() {
    let samples = fake_samples(10, 2, 3, 12);
    let cfg = quick_cfg(2);
    let space = SearchSpace {
        lstm_sizes: vec![4, 6],
        dense_sizes: vec![3, 5],
        ..SearchSpace::default()
    };
    let one = tune_random_search(Architecture::Kinematic, &space, 1, 5, &samples, &cfg, None).unwrap();
    assert_eq!(one.trials.len(), 1);
    assert_eq!(one.best, one.trials[0].params);

    let base = small_kinematic();
    let r = tune_random_search(Architecture::Kinematic, &space, 6, 5, &samples, &cfg, Some(base.clone())).unwrap();
    assert_eq!(r.trials[0].params, base);
    assert_eq!(r.trials[0].mean_accuracy, run_cv(&base, &samples, &cfg).unwrap().mean_accuracy);
    let mut scores: Vec<f64> = r.trials.iter().map(|t| t.mean_accuracy).collect();
    scores.sort_by(f64::total_cmp);
    assert!(r.best_score >= scores[scores.len() / 2]);
    assert!(r.trials.iter().all(|t| t.mean_accuracy <= r.best_score));

    let empty = SearchSpace {
        regs: vec![],
        ..SearchSpace::default()
    };
    assert!(tune_random_search(Architecture::Kinematic, &empty, 1, 5, &samples, &cfg, None).is_err());
    assert!(tune_random_search(Architecture::Kinematic, &space, 0, 5, &samples, &cfg, None).is_err());
}

#[test]
fn sampled_params_stay_in_space() {
    let space = SearchSpace::default();
    for t in 0..200u64 {
        let hp = sample_params(Architecture::Enhanced, &space, &mut rng::stream(1, &[t]));
        hp.validate().unwrap();
        let HyperParams::Enhanced(p) = hp else { unreachable!() };
        assert!(space.lstm_sizes.contains(&p.lstm_size));
        assert!((0.1..=0.3).contains(&p.rate_2));
        assert!((1e-4..=5e-3).contains(&p.lr));
        assert!((0.01..=1.0).contains(&p.beta));
    }
}
