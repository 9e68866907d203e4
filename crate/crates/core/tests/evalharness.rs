mod common;

use std::collections::BTreeSet;

use common::*;
use nutrisk::domain::{Label, SubjectId};
use nutrisk::evalharness::*;
use nutrisk::models::{Family, ForestParams, Hyperparams, KnnParams, ModelSpec};
use nutrisk::preprocess::{ResampleMode, ResamplePlan};
use proptest::prelude::{prop_assert, proptest};

fn labelled(normal: usize, risk: usize) -> nutrisk::featureng::FeatureMatrix {
    let mut fm = subject_matrix(&[(1, normal + risk)], 1);
    for (i, l) in fm.labels.iter_mut().enumerate() {
        *l = if i < normal { Label::Normal } else { Label::Risk };
    }
    fm
}

#[test]
fn holdout_is_stratified_and_deterministic() {
    let fm = labelled(67, 33);
    let plan = SplitPlan { seed: 5, ..SplitPlan::default() };
    let splits = holdout_splits(&fm, &plan).unwrap();
    assert_eq!(splits.len(), 10);
    for s in &splits {
        assert_eq!(s.test.len(), 30);
        let risk = s.test.iter().filter(|&&i| fm.labels[i] == Label::Risk).count();
        assert!((risk as i64 - 10).abs() <= 1);
        let all: BTreeSet<usize> = s.train.iter().chain(&s.test).copied().collect();
        assert_eq!(all.len(), 100);
        assert_eq!(s.train.len() + s.test.len(), 100);
    }
    assert_eq!(splits, holdout_splits(&fm, &plan).unwrap());
    let distinct: BTreeSet<&Vec<usize>> = splits.iter().map(|s| &s.test).collect();
    assert_eq!(distinct.len(), 10);
    assert!(holdout_splits(&labelled(20, 1), &plan).is_err());
}

#[test]
fn loso_eligibility() {
    let fm = subject_matrix(&[(1, 27), (2, 30), (3, 10)], 0);
    let folds = loso_splits(&fm, &SplitPlan { kind: SplitKind::Loso, ..SplitPlan::default() }).unwrap();
    assert_eq!(folds.len(), 2);
    for (fm, want) in [(subject_matrix(&LOSO_WEEKS_ALL, 0), 30), (subject_matrix(&LOSO_WEEKS_BODY, 0), 21)] {
        let plan = SplitPlan { kind: SplitKind::Loso, ..SplitPlan::default() };
        let folds = loso_splits(&fm, &plan).unwrap();
        assert_eq!(folds.len(), want);
        for f in &folds {
            let s = f.subject.as_ref().unwrap();
            assert!(f.train.iter().all(|&i| &fm.subjects[i] != s));
            assert!(f.test.iter().all(|&i| &fm.subjects[i] == s));
            assert_eq!(f.train.len() + f.test.len(), fm.n_rows());
        }
    }
    let short = subject_matrix(&[(1, 5), (2, 6)], 0);
    assert!(loso_splits(&short, &SplitPlan { kind: SplitKind::Loso, ..SplitPlan::default() }).is_err());
}

#[test]
fn metric_examples() {
    let y = [0.0, 0.0, 1.0, 1.0, 0.0];
    let m = compute_metrics(&y, &[0.1, 0.2, 0.8, 0.9, 0.3]).unwrap();
    assert_eq!((m.accuracy, m.f1, m.auc), (1.0, Some(1.0), Some(1.0)));
    let m = compute_metrics(&y, &[0.2; 5]).unwrap();
    assert_eq!((m.accuracy, m.auc), (0.6, Some(0.5)));
    assert_eq!(m.f1, Some(0.0));
    let single = compute_metrics(&[1.0, 1.0], &[0.9, 0.2]).unwrap();
    assert_eq!((single.accuracy, single.f1, single.auc), (0.5, None, None));
    assert!(compute_metrics(&[1.0], &[1.2]).is_err());
    assert!(compute_metrics(&[1.0, 0.0], &[0.5]).is_err());
}

#[test]
fn auc_equals_pair_counting() {
    let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let p = [0.7, 0.3, 0.4, 0.4, 0.9, 0.8, 0.1, 0.4];
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            if y[i] == 1.0 && y[j] == 0.0 {
                pairs += 1.0;
                num += if p[i] > p[j] { 1.0 } else if p[i] == p[j] { 0.5 } else { 0.0 };
            }
        }
    }
    assert!((compute_metrics(&y, &p).unwrap().auc.unwrap() - num / pairs).abs() < 1e-15);
}

#[test]
fn search_contracts() {
    let single = SearchSpace { dims: vec![Dim::Int { name: "k".into(), lo: 7, hi: 7 }] };
    let out = search_space(&single, 60, Strategy::SeededRandom, 1, |v| Some(-v[0])).unwrap();
    assert_eq!(out.best, [7.0]);
    assert_eq!(out.trail.len(), 60);

    let line = SearchSpace { dims: vec![Dim::Float { name: "x".into(), lo: 0.0, hi: 10.0, log: false }] };
    // grid oracle for a monotone objective: the top decile is x >= 9
    let grid: Vec<f64> = (0..=100).map(|i| f64::from(i) * 0.1).collect();
    let mut scores: Vec<f64> = grid.iter().map(|&x| x.sqrt()).collect();
    scores.sort_by(f64::total_cmp);
    let cutoff = scores[(scores.len() as f64 * 0.9) as usize];
    for strategy in [Strategy::SeededRandom, Strategy::Smbo] {
        let out = search_space(&line, 60, strategy, 3, |v| Some(v[0].sqrt())).unwrap();
        assert!(out.best_score >= cutoff, "{strategy:?}: {}", out.best_score);
        assert_eq!(out, search_space(&line, 60, strategy, 3, |v| Some(v[0].sqrt())).unwrap());
    }
    assert!(search_space(&line, 0, Strategy::SeededRandom, 3, |_| Some(0.0)).is_err());
    assert!(search_space(&line, 5, Strategy::SeededRandom, 3, |_| None).is_err());

    assert_eq!(scoring_for(ResampleMode::None), Scoring::F1);
    for m in ResampleMode::ALL.into_iter().filter(|&m| m != ResampleMode::None) {
        assert_eq!(scoring_for(m), Scoring::Accuracy);
    }
}

#[test]
fn hyper_search_returns_a_spec_from_the_space() {
    let fm = subject_matrix(&[(1, 60), (2, 60), (3, 60)], 2);
    let x: Vec<Vec<f64>> = fm.rows.clone();
    let y = fm.y();
    let base = ModelSpec::new(Hyperparams::Knn(KnnParams::default()), 9);
    let cfg = HyperSearchConfig { rounds: 6, inner_folds: 3, ..HyperSearchConfig::default() };
    let r = hyper_search(&base, &x, &y, &cfg).unwrap();
    assert_eq!(r.scoring, Scoring::F1);
    let Hyperparams::Knn(p) = &r.spec.params else { panic!() };
    assert!((1..=25).contains(&p.k));
    assert_eq!(r, hyper_search(&base, &x, &y, &cfg).unwrap());
    let balanced = ModelSpec { resample: ResamplePlan { mode: ResampleMode::RandomUndersample, ..ResamplePlan::default() }, ..base };
    assert_eq!(hyper_search(&balanced, &x, &y, &cfg).unwrap().scoring, Scoring::Accuracy);
}

#[test]
fn stratified_folds_partition_rows() {
    let y: Vec<f64> = (0..53).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let folds = stratified_folds(&y, 10, 4);
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..53).collect::<Vec<_>>());
    for f in &folds {
        let risk = f.iter().filter(|&&i| y[i] == 1.0).count();
        assert!((1..=2).contains(&risk));
    }
}

#[test]
fn training_never_sees_test_rows() {
    let fm = subject_matrix(&[(1, 40), (2, 40), (3, 40)], 8);
    let split = &holdout_splits(&fm, &SplitPlan::default()).unwrap()[0];
    let spec = ModelSpec::new(Hyperparams::Forest(ForestParams { n_trees: 10, ..Default::default() }), 1);
    let a = train_on(&fm, &split.train, &spec, None).unwrap();
    let mut poisoned = fm.clone();
    for &i in &split.test {
        poisoned.rows[i] = vec![1e6, -1e6];
        poisoned.labels[i] = Label::Risk;
    }
    let b = train_on(&poisoned, &split.train, &spec, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn evaluation_report_and_failure_scan() {
    let fm = subject_matrix(&[(1, 30), (2, 30), (3, 30), (4, 30), (5, 12)], 3);
    let cfg = EvalConfig {
        family: Family::Forest,
        resample: ResamplePlan::default(),
        split: SplitPlan { kind: SplitKind::Loso, ..SplitPlan::default() },
        search: None,
        seed: 1,
    };
    let r = evaluate(&fm, &cfg).unwrap();
    assert_eq!(r.runs.len(), 4);
    for run in &r.runs {
        assert!((0.0..=1.0).contains(&run.metrics.accuracy));
        assert_eq!(run.n_train, fm.n_rows() - 30);
    }
    assert_eq!(r, evaluate(&fm, &cfg).unwrap());
    assert_eq!(r.failures, failure_case_scan(&r));

    let mut fake = r.clone();
    for run in &mut fake.runs {
        run.metrics.accuracy = 1.0;
    }
    assert!(failure_case_scan(&fake).is_empty());
    fake.runs[2].metrics.accuracy = 0.0;
    let f = failure_case_scan(&fake);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].subject, SubjectId::new("S03"));
    assert_eq!(f[0].n_rows, 30);

    let hold = EvalConfig { split: SplitPlan { repeats: 3, ..SplitPlan::default() }, ..cfg };
    let r = evaluate(&fm, &hold).unwrap();
    assert_eq!(r.aggregates["accuracy"].n, 3);
    assert!(r.failures.is_empty());
}

#[test]
fn aggregates_use_linear_quantiles() {
    let a = aggregate(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((a.median, a.q1, a.q3, a.mean), (2.5, 1.75, 3.25, 2.5));
    assert!(aggregate(&[]).is_none());
}

proptest! {
    #[test]
    fn stratified_counts_stay_within_one(normal in 2usize..400, risk in 2usize..200, seed in 0u64..50) {
        let fm = labelled(normal, risk);
        for s in holdout_splits(&fm, &SplitPlan { seed, repeats: 2, ..SplitPlan::default() }).unwrap() {
            let r = s.test.iter().filter(|&&i| fm.labels[i] == Label::Risk).count() as f64;
            let n = s.test.len() as f64 - r;
            prop_assert!((r - 0.3 * risk as f64).abs() <= 1.0);
            prop_assert!((n - 0.3 * normal as f64).abs() <= 1.0);
        }
    }
}
