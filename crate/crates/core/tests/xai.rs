#![allow(clippy::needless_range_loop)]
mod common;

use std::cell::RefCell;

use common::*;
use nutrisk::models::{fit_model, ForestParams, GbdtParams, Hyperparams, ModelSpec, Split, TreeNode};
use nutrisk::xai::*;
use proptest::prelude::*;

fn stump(feature: usize, threshold: f64, lo: f64, hi: f64) -> Vec<TreeNode> {
    vec![
        TreeNode { split: Some(Split { feature, threshold, left: 1, right: 2 }), value: 0.0, cover: 10.0, n_samples: 10, impurity: 0.0 },
        leaf(lo, 6.0),
        leaf(hi, 4.0),
    ]
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

#[test]
fn tree_shap_equals_brute_force_shapley() {
    for seed in 0..10 {
        let d = 3 + seed as usize % 6;
        let m = random_ensemble(seed, 1 + seed as usize % 5, d, 4);
        for x in random_instances(seed + 100, 50, d) {
            let a = tree_shap(&m, &x).unwrap();
            let b = brute_shapley(&m, &x);
            for (u, v) in a.values.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9, "seed {seed}: {u} vs {v}");
            }
            let total: f64 = a.base + a.values.iter().sum::<f64>();
            assert!((total - m.raw_one(&x)).abs() < 1e-9);
        }
    }
}

#[test]
fn tree_shap_on_fitted_models_is_locally_accurate() {
    let x = random_instances(7, 200, 5);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] + r[1] > 4.0 || r[2] > 3.0))).collect();
    let forest = Hyperparams::Forest(ForestParams { n_trees: 5, max_depth: 6, min_leaf: 3, ..Default::default() });
    let gbdt = Hyperparams::Gbdt(GbdtParams { n_rounds: 5, max_depth: 3, ..Default::default() });
    for params in [forest, gbdt] {
        let m = fit_model(&ModelSpec::new(params, 3), &x, &y, None).unwrap();
        for r in &x[..50] {
            let a = tree_shap(&m, r).unwrap();
            assert!((a.base + a.values.iter().sum::<f64>() - m.raw_one(r)).abs() < 1e-9);
            for (u, v) in a.values.iter().zip(brute_shapley(&m, r)) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn trivial_models() {
    let constant = ensemble_model(vec![vec![leaf(0.3, 5.0)]], 3, false);
    let a = tree_shap(&constant, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(a.values, [0.0; 3]);
    assert_eq!(a.base, 0.3);

    let m = ensemble_model(vec![stump(1, 0.5, 0.2, 0.9)], 3, false);
    let x = [0.0, 1.0, 0.0];
    let a = tree_shap(&m, &x).unwrap();
    assert!((a.values[1] - (0.9 - a.base)).abs() < 1e-12);
    assert_eq!((a.values[0], a.values[2]), (0.0, 0.0));
    let im = shap_interactions(&m, &x).unwrap();
    let nonzero: Vec<(usize, usize)> =
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&(i, j)| im.values[i][j] != 0.0).collect();
    assert_eq!(nonzero, [(1, 1)]);

    let lasso = nutrisk::models::TrainedModel {
        fitted: nutrisk::models::Fitted::Linear { coef: vec![1.0], intercept: 0.0 },
        ..ensemble_model(vec![], 1, false)
    };
    assert!(tree_shap(&lasso, &[0.0]).is_err());
    assert!(impurity_importance_columns(&lasso).is_err());
}

#[test]
fn interactions_match_brute_force_and_sum_to_shap() {
    for seed in 20..30 {
        let d = 3 + seed as usize % 4;
        let m = random_ensemble(seed, 3, d, 3);
        for x in random_instances(seed, 10, d) {
            let im = shap_interactions(&m, &x).unwrap();
            let brute = brute_interactions(&m, &x);
            let phi = tree_shap(&m, &x).unwrap().values;
            for i in 0..d {
                for j in 0..d {
                    assert!((im.values[i][j] - brute[i][j]).abs() < 1e-9);
                    assert!((im.values[i][j] - im.values[j][i]).abs() < 1e-9);
                }
                assert!((im.row_sums()[i] - phi[i]).abs() < 1e-9);
            }
            let fast = shap_main_effects(&m, &x).unwrap();
            for (a, b) in fast.iter().zip(im.main_effects()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn additive_trees_have_no_interactions() {
    let m = ensemble_model(vec![stump(0, 1.5, -1.0, 1.0), stump(1, 2.5, 0.5, -0.5)], 3, true);
    for x in random_instances(3, 20, 3) {
        let im = shap_interactions(&m, &x).unwrap();
        let phi = tree_shap(&m, &x).unwrap().values;
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                assert!(im.values[i][j].abs() < 1e-12);
            }
            assert!((im.values[i][i] - phi[i]).abs() < 1e-12);
        }
    }
    // dependence: main effect equals the full SHAP value for additive models
    let x = random_instances(4, 30, 3);
    let view = ModelView::from_inputs(&m, x.clone(), names(3)).unwrap();
    let dep = dependence_data(&view, "f0", Method::Shap, &LimeConfig::default()).unwrap();
    assert_eq!(dep.points.len(), 30);
    for ((v, s), r) in dep.points.iter().zip(&x) {
        assert_eq!(*v, r[0]);
        assert!((s - tree_shap(&m, r).unwrap().values[0]).abs() < 1e-12);
    }
    assert!(dependence_data(&view, "nope", Method::Shap, &LimeConfig::default()).is_err());
}

#[test]
fn dummy_and_symmetry() {
    // f1 duplicates f0 and is used the same way in a second tree; f2 is never used
    let t0 = stump(0, 1.5, 0.1, 0.8);
    let t1 = stump(1, 1.5, 0.1, 0.8);
    let m = ensemble_model(vec![t0, t1], 3, false);
    let x: Vec<Vec<f64>> = random_instances(9, 60, 3).into_iter().map(|r| vec![r[0], r[0], r[2]]).collect();
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] > 1.5))).collect();
    let view = ModelView::from_inputs(&m, x, names(3)).unwrap();
    let shap = shap_global_ranking(&view).unwrap();
    assert!((shap.score("f0").unwrap() - shap.score("f1").unwrap()).abs() < 1e-9);
    assert_eq!(shap.score("f2"), Some(0.0));
    assert_eq!(shap.features().last().unwrap(), "f2");
    assert_eq!(impurity_importance(&view).unwrap().score("f2"), Some(0.0));
    let mda = permutation_importance(&view, &y, 10, 1).unwrap();
    assert!(mda.per_repeat[2].iter().all(|&s| s == 0.0));
}

#[test]
fn global_shap_is_mean_absolute_value() {
    let m = random_ensemble(5, 4, 4, 4);
    let x = random_instances(55, 40, 4);
    let view = ModelView::from_inputs(&m, x.clone(), names(4)).unwrap();
    let r = shap_global_ranking(&view).unwrap();
    for j in 0..4 {
        let direct = x.iter().map(|row| tree_shap(&m, row).unwrap().values[j].abs()).sum::<f64>() / 40.0;
        assert!((r.score(&format!("f{j}")).unwrap() - direct).abs() < 1e-12);
    }
    let doubled: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
    let r2 = shap_global_ranking(&ModelView::from_inputs(&m, doubled, names(4)).unwrap()).unwrap();
    assert_eq!(r.features(), r2.features());
}

#[test]
fn mdi_matches_hand_gini_arithmetic() {
    // root 10 rows (4 risk) -> left 6 (1 risk) split again into 4 (0) / 2 (1); right 4 (3 risk)
    let g = |p: f64| 2.0 * p * (1.0 - p);
    let node = |split: Option<Split>, cover: f64, risk: f64| TreeNode {
        split,
        value: risk / cover,
        cover,
        n_samples: cover as usize,
        impurity: g(risk / cover),
    };
    let tree = vec![
        node(Some(Split { feature: 0, threshold: 0.5, left: 1, right: 4 }), 10.0, 4.0),
        node(Some(Split { feature: 2, threshold: 0.5, left: 2, right: 3 }), 6.0, 1.0),
        node(None, 4.0, 0.0),
        node(None, 2.0, 1.0),
        node(None, 4.0, 3.0),
    ];
    let m = ensemble_model(vec![tree], 3, false);
    let d0 = 10.0 * g(0.4) - 6.0 * g(1.0 / 6.0) - 4.0 * g(0.75);
    let d2 = 6.0 * g(1.0 / 6.0) - 4.0 * g(0.0) - 2.0 * g(0.5);
    let got = impurity_importance_columns(&m).unwrap();
    assert!((got[0] - d0 / (d0 + d2)).abs() < 1e-12);
    assert!((got[2] - d2 / (d0 + d2)).abs() < 1e-12);
    assert_eq!(got[1], 0.0);

    let s = ensemble_model(vec![stump(1, 0.5, 0.0, 1.0)], 3, false);
    // stump impurities are zero in the helper, so give the root some
    let mut s = s;
    if let nutrisk::models::Fitted::Trees(e) = &mut s.fitted {
        e.trees[0][0].impurity = 0.48;
    }
    assert_eq!(impurity_importance_columns(&s).unwrap(), [0.0, 1.0, 0.0]);
    let pure = ensemble_model(vec![vec![leaf(1.0, 3.0)]], 2, false);
    assert_eq!(impurity_importance_columns(&pure).unwrap(), [0.0, 0.0]);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn mda_expectation_matches_enumeration() {
    let x: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0].iter().map(|&v| vec![v, 0.0]).collect();
    let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let m = ensemble_model(vec![stump(0, 0.5, 0.0, 1.0)], 2, false);
    // exact expected permuted accuracy over all 720 orderings
    let perms = permutations(6);
    let mean_acc = perms
        .iter()
        .map(|p| p.iter().enumerate().filter(|&(i, &k)| x[k][0] == y[i]).count() as f64 / 6.0)
        .sum::<f64>()
        / perms.len() as f64;
    assert!((mean_acc - 0.5).abs() < 1e-12);
    let view = ModelView::from_inputs(&m, x, names(2)).unwrap();
    let r = permutation_importance(&view, &y, 4000, 11).unwrap();
    assert_eq!(r.baseline_accuracy, 1.0);
    assert!((r.ranking.score("f0").unwrap() - (1.0 - mean_acc)).abs() < 0.02);
    assert_eq!(r.ranking.score("f1"), Some(0.0));
}

#[test]
fn mda_concentrates_with_repeats_and_keeps_negative_scores() {
    let x = random_instances(12, 60, 3);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] > 1.5))).collect();
    let m = ensemble_model(vec![stump(0, 1.5, 0.0, 1.0)], 3, false);
    let view = ModelView::from_inputs(&m, x.clone(), names(3)).unwrap();
    let spread = |repeats: usize| -> f64 {
        // std of the repeat mean across 20 independent seeds
        let means: Vec<f64> = (0..20)
            .map(|s| permutation_importance(&view, &y, repeats, s).unwrap().ranking.score("f0").unwrap())
            .collect();
        let mu = means.iter().sum::<f64>() / 20.0;
        (means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 19.0).sqrt()
    };
    let ratio = spread(10) / spread(1000);
    // 1/sqrt(repeats) scaling predicts 10
    assert!((5.0..20.0).contains(&ratio), "{ratio}");

    // a model that is right by luck only: permuting can help
    let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let r = permutation_importance(&view, &flipped, 10, 0).unwrap();
    assert!(r.ranking.score("f0").unwrap() < 0.0);
    assert_eq!(r.ranking.entries.last().unwrap().feature, "f0");
}

#[test]
fn lime_recovers_linear_coefficients() {
    let beta = [0.8, -1.5, 0.0, 2.5];
    let f = |p: &[f64]| 0.3 + p.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    let cfg = LimeConfig::default();
    let a = lime_explain_fn(f, &[0.2, -1.0, 0.5, 1.0], &[1.0; 4], &cfg, 7).unwrap();
    for (w, b) in a.values.iter().zip(beta) {
        assert!((w - b).abs() <= 0.1 * b.abs().max(0.01), "{w} vs {b}");
    }
    let c = lime_explain_fn(|_| 0.42, &[0.0; 4], &[1.0; 4], &cfg, 7).unwrap();
    assert!(c.values.iter().all(|w| w.abs() < 1e-9));
    assert!((c.base - 0.42).abs() < 1e-9);
    let small = LimeConfig { n_samples: 30, ..LimeConfig::default() };
    assert!(lime_explain_fn(f, &[0.0; 4], &[1.0; 4], &small, 0).is_err());
}

#[test]
fn lime_wide_kernel_approaches_ordinary_least_squares() {
    let cloud = RefCell::new(Vec::new());
    let f = |p: &[f64]| {
        let v = (p[0] * 1.3).sin() + p[1] * p[1] - 0.5 * p[2];
        cloud.borrow_mut().push((p.to_vec(), v));
        v
    };
    let x = [0.3, -0.4, 1.0];
    let cfg = LimeConfig { n_samples: 3000, kernel_width: Some(1e9), ridge: 1e-12, ..LimeConfig::default() };
    let a = lime_explain_fn(f, &x, &[1.0; 3], &cfg, 3).unwrap();
    // normal equations on the recorded cloud
    let pts = cloud.into_inner();
    let n = pts.len() as f64;
    let mean = |j: usize| pts.iter().map(|(p, _)| p[j] - x[j]).sum::<f64>() / n;
    let ybar = pts.iter().map(|(_, v)| v).sum::<f64>() / n;
    let mut a_mat = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (p, v) in &pts {
        for i in 0..3 {
            let zi = p[i] - x[i] - mean(i);
            b[i] += zi * (v - ybar);
            for j in 0..3 {
                a_mat[i][j] += zi * (p[j] - x[j] - mean(j));
            }
        }
    }
    let ols = solve3(a_mat, b);
    for (w, o) in a.values.iter().zip(ols) {
        assert!((w - o).abs() < 1e-6, "{w} vs {o}");
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        x[r] = (b[r] - (r + 1..3).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

#[test]
fn lime_global_ranking_ignores_unused_features_and_is_deterministic() {
    let x = random_instances(31, 120, 3);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] + 0.5 * r[1] > 3.0))).collect();
    let spec = ModelSpec::new(Hyperparams::Forest(ForestParams { n_trees: 30, min_leaf: 3, ..Default::default() }), 2);
    // the model never sees feature 2: it is constant in training
    let train: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], r[1], 0.0]).collect();
    let m = fit_model(&spec, &train, &y, None).unwrap();
    let view = ModelView::from_inputs(&m, x, names(3)).unwrap();
    let cfg = LimeConfig { max_rows: Some(25), seed: 4, ..LimeConfig::default() };
    let r = lime_global_ranking(&view, &cfg).unwrap();
    let top = r.entries[0].score;
    let unused = r.score("f2").unwrap();
    assert!(unused < 0.01 * top, "{unused} vs {top}");
    assert_eq!(r, lime_global_ranking(&view, &cfg).unwrap());
    let dep = dependence_data(&view, "f0", Method::Lime, &cfg).unwrap();
    assert_eq!(dep.points.len(), 25);
}

#[test]
fn shap_dependence_follows_a_monotone_signal() {
    let x = random_instances(41, 300, 3);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] + r[2] * 0.3 > 2.5))).collect();
    let spec = ModelSpec::new(Hyperparams::Gbdt(GbdtParams { n_rounds: 30, max_depth: 2, ..Default::default() }), 1);
    let m = fit_model(&spec, &x, &y, None).unwrap();
    let view = ModelView::from_inputs(&m, x, names(3)).unwrap();
    let dep = dependence_data(&view, "f0", Method::Shap, &LimeConfig::default()).unwrap();
    let mean_at = |v: f64| {
        let s: Vec<f64> = dep.points.iter().filter(|p| p.0 == v).map(|p| p.1).collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    assert!(mean_at(0.0) < mean_at(2.0) && mean_at(2.0) < mean_at(4.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn local_accuracy_holds_for_random_ensembles(seed in 0u64..10_000, trees in 1usize..6, d in 1usize..9) {
        let m = random_ensemble(seed, trees, d, 5);
        for x in random_instances(seed ^ 0xabc, 5, d) {
            let a = tree_shap(&m, &x).unwrap();
            prop_assert!((a.base + a.values.iter().sum::<f64>() - m.raw_one(&x)).abs() < 1e-9);
            let im = shap_interactions(&m, &x).unwrap();
            for (s, p) in im.row_sums().iter().zip(&a.values) {
                prop_assert!((s - p).abs() < 1e-9);
            }
        }
    }
}
