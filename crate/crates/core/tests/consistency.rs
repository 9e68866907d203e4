mod common;

use common::*;
use nutrisk::consistency::*;
use nutrisk::xai::{ImportanceRanking, Method};
use proptest::prelude::*;

fn list(method: Method, f: &[&str]) -> RankingList {
    RankingList { method, features: f.iter().map(|s| s.to_string()).collect(), truncated: false }
}

#[test]
fn published_tables_are_reproduced() {
    let m = agree_file(&fixture("rankings_with_body_top5.json"), &DEFAULT_KS).unwrap();
    assert_eq!(table_mismatches(&m, &TABLE_WITH_BODY), Vec::<String>::new());
    let xgb = &m[0];
    assert_eq!(xgb.cell(Method::Shap, Method::Mdi, 5).unwrap().non_exact, Some(5));
    assert_eq!(m[1].cell(Method::Shap, Method::Mda, 5).map(|c| (c.exact, c.non_exact)), Some((1, Some(4))));
    let m = agree_file(&fixture("rankings_without_body_top5.json"), &DEFAULT_KS).unwrap();
    assert_eq!(table_mismatches(&m, &TABLE_WITHOUT_BODY), Vec::<String>::new());
    assert_eq!(m[0].cell(Method::Mda, Method::Shap, 5).map(|c| (c.exact, c.non_exact)), Some((3, Some(5))));
}

#[test]
fn matrix_shape_and_csv_layout() {
    let m = agree_file(&fixture("rankings_with_body_top5.json"), &DEFAULT_KS).unwrap();
    assert_eq!(m[0].cells.len(), 18);
    let csv = matrix_csv_string(&m).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,K,SHAP-LIME,SHAP-MDI,SHAP-MDA,LIME-MDI,LIME-MDA,MDI-MDA");
    assert_eq!(lines[1], "XGBoost,1,1,0,1,0,1,0");
    assert_eq!(lines[3], "XGBoost,5,1/3,1/5,4/4,0/3,1/3,1/4");
    assert_eq!(lines.len(), 7);
    let s = summarize(&m);
    assert_eq!(s.comparisons, 24);
    // non-exact >= 2 in 21 of the 24 K > 1 cells of the two rows
    assert!((s.share_non_exact_at_least_2 - 21.0 / 24.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs() {
    let a = list(Method::Shap, &["x", "y", "z"]);
    let b = list(Method::Lime, &["x", "y", "w"]);
    assert!(topk_agreement_lists(&a, &b, 2).is_err());
    assert!(topk_agreement_lists(&a, &a, 4).is_err());
    assert!(topk_agreement_lists(&a, &a, 0).is_err());
    assert!(topk_agreement_lists(&a, &list(Method::Mdi, &["x", "x", "y"]), 1).is_err());
    assert!(agreement_matrix("m", std::slice::from_ref(&a), &DEFAULT_KS).is_err());
    assert!(agreement_matrix("m", &[a.clone(), a.clone()], &[1]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("one.json");
    std::fs::write(&single, r#"[{"model":"m","rankings":[{"method":"SHAP","features":["a"]}]}]"#).unwrap();
    assert!(agree_file(&single, &[1]).is_err());
    let broken = dir.path().join("bad.json");
    std::fs::write(&broken, r#"[{"model":"m","rankings":[{"method":"GRAD","features":["a"]}]}]"#).unwrap();
    assert!(agree_file(&broken, &[1]).is_err());
}

#[test]
fn identical_rankings_agree_fully() {
    let f = ["a", "b", "c", "d", "e", "f"];
    let lists: Vec<RankingList> = Method::ALL.iter().map(|&m| list(m, &f)).collect();
    let m = agreement_matrix("same", &lists, &DEFAULT_KS).unwrap();
    assert_eq!(m.cells.len(), 18);
    for c in &m.cells {
        assert_eq!(c.exact, c.k);
        assert_eq!(c.non_exact, (c.k > 1).then_some(c.k));
    }
}

#[test]
fn importance_rankings_feed_directly() {
    let a = ImportanceRanking::new(Method::Shap, [("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)]);
    let b = ImportanceRanking::new(Method::Mda, [("b".into(), 3.0), ("a".into(), 2.0), ("c".into(), 1.0)]);
    assert_eq!(topk_agreement(&a, &b, 2).unwrap(), (0, 2));
    assert_eq!(topk_agreement(&a, &b, 3).unwrap(), (1, 3));
}

fn perm_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (4usize..10).prop_flat_map(|n| {
        let p = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
        (p.clone(), p)
    })
}

proptest! {
    #[test]
    fn agreement_invariants((pa, pb) in perm_strategy(), tail_seed in any::<u64>()) {
        let n = pa.len();
        let name = |v: &Vec<usize>| v.iter().map(|i| format!("f{i}")).collect::<Vec<_>>();
        let a = RankingList { method: Method::Shap, features: name(&pa), truncated: false };
        let b = RankingList { method: Method::Lime, features: name(&pb), truncated: false };
        let mut prev = 0;
        for k in 1..=n {
            let (e, ne) = topk_agreement_lists(&a, &b, k).unwrap();
            prop_assert!(e <= ne && ne <= k);
            prop_assert!(ne >= prev);
            prev = ne;
            prop_assert_eq!(topk_agreement_lists(&b, &a, k).unwrap(), (e, ne));
            // shuffling below rank k changes nothing
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            let rot = (tail_seed as usize) % (n - k + 1);
            a2.features[k..].rotate_left(rot.min(n - k));
            b2.features[k..].rotate_right(rot.min(n - k));
            prop_assert_eq!(topk_agreement_lists(&a2, &b2, k).unwrap(), (e, ne));
        }
        prop_assert_eq!(topk_agreement_lists(&a, &a, n).unwrap(), (n, n));
    }
}
