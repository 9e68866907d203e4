mod common;

use std::process::Command;

use common::fixture;
use nutrisk::cli::*;
use nutrisk::evalharness::{SplitKind, SplitPlan};
use nutrisk::models::{fit_model, Family, ForestParams, GbdtParams, Hyperparams, ModelSpec};
use nutrisk::synthcohort::{generate_cohort, write_synthetic, SyntheticCohortSpec};
use nutrisk::xai::{LimeConfig, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nutrisk"));
    c.env_remove("NUTRISK_OUT_DIR").env_remove("NUTRISK_WORKERS");
    c
}

fn small_config(out: &std::path::Path) -> RunConfig {
    RunConfig {
        variants: vec![Variant::WithBody],
        families: vec![Family::Forest, Family::LassoLogreg],
        validation: vec![SplitPlan { repeats: 2, ..SplitPlan::default() }],
        search: None,
        xai: XaiConfig {
            lime: LimeConfig { n_samples: 300, max_rows: Some(3), ..LimeConfig::default() },
            mda_repeats: 2,
            explain_rows: Some(40),
            ..XaiConfig::default()
        },
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

#[test]
fn artifacts_round_trip_bit_exact() {
    let x = random_rows(200, 4, 1);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] + r[1] * r[2] > 0.3))).collect();
    let dir = tempfile::tempdir().unwrap();
    let probe = random_rows(100, 4, 2);
    for params in [
        Hyperparams::Forest(ForestParams { n_trees: 20, ..Default::default() }),
        Hyperparams::Gbdt(GbdtParams { n_rounds: 20, ..Default::default() }),
        Hyperparams::default_for(Family::LassoLogreg),
    ] {
        let m = fit_model(&ModelSpec::new(params, 3), &x, &y, None).unwrap();
        let path = dir.path().join("m.nrm");
        persist_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let (a, b) = (m.predict_proba(&probe).unwrap(), back.predict_proba(&probe).unwrap());
        assert!(a.iter().zip(&b).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn damaged_artifacts_are_rejected() {
    let x = random_rows(50, 2, 4);
    let y: Vec<f64> = x.iter().map(|r| f64::from(u8::from(r[0] > 0.0))).collect();
    let m = fit_model(&ModelSpec::new(Hyperparams::default_for(Family::Cart), 0), &x, &y, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nrm");
    persist_model(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let e = load_model(&path).unwrap_err().to_string();
    assert!(e.contains("checksum"), "{e}");

    let text = String::from_utf8(bytes.clone()).unwrap();
    std::fs::write(&path, text.replacen("NUTRISK-MODEL v1", "NUTRISK-MODEL v0", 1)).unwrap();
    let e = load_model(&path).unwrap_err().to_string();
    assert!(e.contains("unsupported artifact version 0"), "{e}");

    std::fs::write(&path, b"{\"spec\": 1}\n").unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn config_file_then_flags() {
    let cfg = RunConfig::from_toml(
        r#"
        seed = 7
        variants = ["without_body"]
        families = ["gbdt", "knn"]

        [[validation]]
        kind = "loso"
        min_subject_weeks = 20

        [search]
        rounds = 5
        "#,
    )
    .unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.validation[0].kind, SplitKind::Loso);
    assert_eq!(cfg.validation[0].min_subject_weeks, 20);
    assert_eq!(cfg.search.as_ref().unwrap().rounds, 5);
    assert_eq!(cfg.search.as_ref().unwrap().inner_folds, 10);
    assert!(RunConfig::from_toml("sede = 7").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 7\nfamilies = [\"gbdt\"]\n").unwrap();
    let args = RunArgs {
        config: Some(path),
        seed: Some(9),
        family: vec![Family::Forest],
        split: vec![SplitKind::Loso, SplitKind::Holdout],
        repeats: Some(4),
        no_search: true,
        ..RunArgs::default()
    };
    let cfg = args.resolve().unwrap();
    assert_eq!((cfg.seed, cfg.families.clone()), (9, vec![Family::Forest]));
    assert_eq!(cfg.validation.iter().map(|p| p.kind).collect::<Vec<_>>(), [SplitKind::Loso, SplitKind::Holdout]);
    assert!(cfg.validation.iter().all(|p| p.repeats == 4));
    assert!(cfg.search.is_none());

    // workers and output directory stay out of the hash
    let mut other = cfg.clone();
    other.workers = Some(8);
    other.out_dir = "elsewhere".into();
    assert_eq!(other.hash(), cfg.hash());
    other.seed = 10;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn agree_reproduces_published_rows() {
    let csv = cmd_agree(&fixture("rankings_with_body_top5.json"), &[1, 3, 5]).unwrap();
    assert!(csv.starts_with("model,K,SHAP-LIME,SHAP-MDI,SHAP-MDA,LIME-MDI,LIME-MDA,MDI-MDA\n"));
    assert!(csv.contains("XGBoost,5,1/3,1/5,4/4,0/3,1/3,1/4\n"), "{csv}");
    let csv = cmd_agree(&fixture("rankings_without_body_top5.json"), &[5]).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("XGBoost,5,") && l.split(',').nth(4) == Some("3/5")), "{csv}");

    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.json");
    std::fs::write(&one, r#"[{"model": "m", "rankings": [{"method": "SHAP", "features": ["a", "b"]}]}]"#).unwrap();
    assert!(cmd_agree(&one, &[1]).unwrap_err().to_string().contains("at least 2 methods"));
}

#[test]
fn exit_codes() {
    let out = bin().arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["report", "--family", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));

    let good = fixture("rankings_with_body_top5.json");
    let out = bin().args(["agree", "--rankings"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("LightGBM,1,"));

    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.json");
    std::fs::write(&one, r#"[{"model": "m", "rankings": [{"method": "SHAP", "features": ["a"]}]}]"#).unwrap();
    let out = bin().args(["agree", "--rankings"]).arg(&one).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["agree", "--rankings"]).arg(dir.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_sets_the_output_directory() {
    let data = tempfile::tempdir().unwrap();
    let out = bin().args(["synth", "--subjects", "12", "--seed", "3", "--out"]).arg(data.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dest = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["ingest", "--variant", "without_body", "--data"])
        .arg(data.path())
        .env("NUTRISK_OUT_DIR", dest.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dest.path().join("features_without_body.csv").exists());
    assert!(dest.path().join("validation.json").exists());
}

#[test]
fn train_and_explain_commands() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("forest.nrm");
    let run = ["--variant", "with_body", "--family", "forest", "--no-search", "--seed", "5"];
    let out = bin().arg("train").args(run).arg("--model").arg(&model).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_model(&model).unwrap();
    assert_eq!(m.family(), Family::Forest);

    let cfg = dir.path().join("x.toml");
    std::fs::write(&cfg, "[xai]\nexplain_rows = 30\nmda_repeats = 2\n[xai.lime]\nn_samples = 300\nmax_rows = 2\n").unwrap();
    let out = bin().arg("explain").args(run).arg("--config").arg(&cfg).arg("--model").arg(&model).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("importance_with_body_forest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn pipeline_bundle_is_complete_and_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(&small_config(a.path())).unwrap();
    let second = run_pipeline(&small_config(b.path())).unwrap();
    assert_eq!(first.manifest, second.manifest);
    for name in first.manifest.files.keys() {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let m = &first.agreement[&Variant::WithBody];
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].cells.len(), 18);
    let csv = std::fs::read_to_string(a.path().join("agreement_with_body.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for f in ["config.json", "stats.json", "rankings_with_body.json", "eval_with_body_forest_holdout.json", "dependence_with_body_forest_bmi.csv"] {
        assert!(first.manifest.files.contains_key(f), "{f}");
    }
    assert!(first.explanation(Variant::WithBody, Family::LassoLogreg).is_none());
    let ex = first.explanation(Variant::WithBody, Family::Forest).unwrap();
    assert_eq!(ex.rankings.keys().copied().collect::<Vec<_>>(), Method::ALL);

    // the manifest digests cover the written files
    let path = a.path().join("stats.json");
    std::fs::write(&path, "{}").unwrap();
    let text = std::fs::read_to_string(a.path().join("manifest.json")).unwrap();
    let manifest: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest, first.manifest);
}

#[test]
fn body_variant_without_body_data_is_a_stage_error() {
    let spec = SyntheticCohortSpec { n_subjects: 10, body_coverage: 0.0, ..SyntheticCohortSpec::default() };
    let data = tempfile::tempdir().unwrap();
    write_synthetic(data.path(), &generate_cohort(&spec, 1).unwrap(), &spec, 1).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig { data_dir: Some(data.path().to_path_buf()), ..small_config(out.path()) };
    let e = run_pipeline(&cfg).unwrap_err();
    assert!(e.to_string().starts_with("[features]"), "{e}");
    assert_eq!(exit_code(&e), 2);
}
