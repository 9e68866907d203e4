//! Run configuration, model artifacts, the end-to-end pipeline and the
//! command-line front end.
//!
//! A run writes a report bundle: evaluation reports, rankings, agreement
//! tables, dependence series and `manifest.json`, which records the config
//! hash, tool version and a SHA-256 digest of every other file in the bundle.
//! Nothing in a bundle depends on wall-clock time or worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consistency::{agree_file, agreement_matrix, matrix_csv_string, summarize, AgreementMatrix, ModelRankings, RankingList, DEFAULT_KS};
use crate::domain::{ingest_cohort, validate_cohort, Cohort, IngestSchema};
use crate::error::{Error, Result};
use crate::evalharness::{evaluate, make_splits, train_on, EvalConfig, EvalReport, HyperSearchConfig, SplitKind, SplitPlan};
use crate::featureng::{build_feature_matrix, FeatureConfig, FeatureMatrix};
use crate::models::{Family, Hyperparams, ModelSpec, TrainedModel};
use crate::preprocess::{ResampleMode, ResamplePlan};
use crate::rng::derive;
use crate::stats::{compare_pipelines, tukey_hsd, TestResult, TukeyHsd};
use crate::synthcohort::{generate_cohort, write_synthetic, SyntheticCohortSpec};
use crate::xai::{all_rankings, dependence_data, DependenceSeries, ImportanceRanking, LimeConfig, Method, ModelView};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithBody,
    WithoutBody,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::WithBody => "with_body",
            Variant::WithoutBody => "without_body",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        [Variant::WithBody, Variant::WithoutBody].into_iter().find(|v| v.as_str() == s)
    }

    pub fn with_body(self) -> bool {
        self == Variant::WithBody
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row slice for global rankings and dependence series. Models are always
/// trained on the first hold-out split's training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainRows {
    All,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XaiConfig {
    pub methods: Vec<Method>,
    pub lime: LimeConfig,
    pub mda_repeats: usize,
    /// Rows the pipeline explains.
    pub rows: ExplainRows,
    /// Cap on explained rows, evenly thinned; `None` explains them all.
    pub explain_rows: Option<usize>,
    /// Raw features that get a SHAP dependence series.
    pub dependence_features: Vec<String>,
    pub ks: Vec<usize>,
}

impl Default for XaiConfig {
    fn default() -> Self {
        XaiConfig {
            methods: Method::ALL.to_vec(),
            lime: LimeConfig { max_rows: Some(50), ..LimeConfig::default() },
            mda_repeats: 10,
            rows: ExplainRows::All,
            explain_rows: None,
            dependence_features: ["bmi", "mmse", "vegetables"].map(String::from).to_vec(),
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

/// Everything a run depends on. Split, LIME and permutation seeds are derived
/// from `seed`, so the seeds stored inside the nested plans are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort tables to ingest; `None` generates a synthetic cohort from `synth` and `seed`.
    pub data_dir: Option<PathBuf>,
    pub synth: SyntheticCohortSpec,
    pub variants: Vec<Variant>,
    pub resample: ResamplePlan,
    pub families: Vec<Family>,
    /// Validation schemes, run in order; explanations use a model from the first.
    pub validation: Vec<SplitPlan>,
    pub search: Option<HyperSearchConfig>,
    pub features: FeatureConfig,
    pub xai: XaiConfig,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            synth: SyntheticCohortSpec::default(),
            variants: vec![Variant::WithBody, Variant::WithoutBody],
            resample: ResamplePlan::default(),
            families: vec![Family::Forest, Family::Gbdt, Family::LassoLogreg],
            validation: vec![SplitPlan::default(), SplitPlan { kind: SplitKind::Loso, ..SplitPlan::default() }],
            search: Some(HyperSearchConfig { reuse: true, ..HyperSearchConfig::default() }),
            features: FeatureConfig::default(),
            xai: XaiConfig::default(),
            seed: 42,
            out_dir: PathBuf::from("nutrisk-out"),
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks that do not need the data.
    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.variants.is_empty() {
            return fail("no dataset variant selected");
        }
        if self.families.is_empty() {
            return fail("no model family selected");
        }
        if self.validation.is_empty() {
            return fail("no validation scheme selected");
        }
        if self.xai.ks.contains(&0) {
            return fail("agreement K must be positive");
        }
        if self.workers == Some(0) {
            return fail("worker count must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; output directory and worker count are excluded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn split_plan(&self, i: usize) -> SplitPlan {
        SplitPlan { seed: derive(self.seed, "split", i as u64), ..self.validation[i].clone() }
    }

    fn eval_config(&self, family: Family, i: usize) -> EvalConfig {
        EvalConfig {
            family,
            resample: self.resample.clone(),
            split: self.split_plan(i),
            search: self.search.clone(),
            seed: derive(self.seed, "eval", i as u64),
        }
    }

    fn base_spec(&self, family: Family) -> ModelSpec {
        ModelSpec { params: Hyperparams::default_for(family), resample: self.resample.clone(), seed: derive(self.seed, "model", 0) }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

// ---------------------------------------------------------------------------
// Model artifacts

const MAGIC: &str = "NUTRISK-MODEL";
pub const ARTIFACT_VERSION: u32 = 1;

/// Writes a one-line header `NUTRISK-MODEL v1 sha256=<digest>` followed by the model as JSON.
pub fn persist_model(m: &TrainedModel, path: &Path) -> Result<()> {
    let body = serde_json::to_vec(m)?;
    let mut out = format!("{MAGIC} v{ARTIFACT_VERSION} sha256={}\n", hex(&Sha256::digest(&body))).into_bytes();
    out.extend(body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Artifact(format!("{}: {m}", path.display()));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing artifact header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("malformed artifact header".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    let [magic, version, digest] = parts[..] else {
        return Err(bad("malformed artifact header".into()));
    };
    if magic != MAGIC {
        return Err(bad("not a model artifact".into()));
    }
    let version: u32 = version
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("malformed version {version:?}")))?;
    if version != ARTIFACT_VERSION {
        return Err(bad(format!("unsupported artifact version {version}; this build reads v{ARTIFACT_VERSION}")));
    }
    let digest = digest.strip_prefix("sha256=").ok_or_else(|| bad("malformed checksum field".into()))?;
    let body = &bytes[nl + 1..];
    if hex(&Sha256::digest(body)) != digest {
        return Err(bad("checksum mismatch: file is truncated or corrupted".into()));
    }
    Ok(serde_json::from_slice(body)?)
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: Variant,
    pub family: Family,
    pub report: EvalReport,
}

impl Evaluation {
    pub fn kind(&self) -> SplitKind {
        self.report.config.split.kind
    }
}

/// One statistical comparison of accuracy samples; `note` explains a skipped test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub result: Option<TestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAnova {
    pub label: String,
    pub families: Vec<Family>,
    pub tukey: Option<TukeyHsd>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub comparisons: Vec<Comparison>,
    pub anova: Vec<FamilyAnova>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub variant: Variant,
    pub family: Family,
    pub rows_explained: usize,
    pub rankings: BTreeMap<Method, ImportanceRanking>,
    pub dependence: Vec<DependenceSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// File name to SHA-256, for every file in the bundle except the manifest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub evaluations: Vec<Evaluation>,
    pub stats: StatsReport,
    pub explanations: Vec<Explanation>,
    pub agreement: BTreeMap<Variant, Vec<AgreementMatrix>>,
}

impl ReportBundle {
    pub fn evaluation(&self, variant: Variant, family: Family, kind: SplitKind) -> Option<&EvalReport> {
        self.evaluations
            .iter()
            .find(|e| e.variant == variant && e.family == family && e.kind() == kind)
            .map(|e| &e.report)
    }

    pub fn explanation(&self, variant: Variant, family: Family) -> Option<&Explanation> {
        self.explanations.iter().find(|e| e.variant == variant && e.family == family)
    }
}

fn kind_str(k: SplitKind) -> &'static str {
    match k {
        SplitKind::Holdout => "holdout",
        SplitKind::Loso => "loso",
    }
}

pub fn load_cohort(cfg: &RunConfig) -> Result<Cohort> {
    match &cfg.data_dir {
        Some(dir) => Ok(ingest_cohort(dir, &IngestSchema::default())?.0),
        None => Ok(generate_cohort(&cfg.synth, cfg.seed)?.cohort),
    }
}

pub fn feature_matrix(c: &Cohort, variant: Variant, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    build_feature_matrix(c, variant.with_body(), cfg).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{variant}: {m}")),
        e => e,
    })
}

fn compare(label: String, a: &[f64], b: &[f64]) -> Comparison {
    match compare_pipelines(a, b) {
        Ok(r) => Comparison { label, result: Some(r), note: None },
        Err(e) => {
            log::warn!("{label}: {e}");
            Comparison { label, result: None, note: Some(e.to_string()) }
        }
    }
}

fn run_stats(cfg: &RunConfig, evals: &[Evaluation]) -> StatsReport {
    let mut comparisons = Vec::new();
    let mut anova = Vec::new();
    let find = |v: Variant, f: Family, k: SplitKind| evals.iter().find(|e| e.variant == v && e.family == f && e.kind() == k);
    let kinds: Vec<SplitKind> = cfg.validation.iter().map(|p| p.kind).collect();
    for &kind in &kinds {
        for &v in &cfg.variants {
            for (i, &a) in cfg.families.iter().enumerate() {
                for &b in &cfg.families[i + 1..] {
                    if let (Some(x), Some(y)) = (find(v, a, kind), find(v, b, kind)) {
                        let label = format!("{v}/{}: {a} vs {b}", kind_str(kind));
                        comparisons.push(compare(label, &x.report.accuracies(), &y.report.accuracies()));
                    }
                }
            }
            if cfg.families.len() >= 3 {
                let samples: Vec<Vec<f64>> = cfg.families.iter().filter_map(|&f| find(v, f, kind)).map(|e| e.report.accuracies()).collect();
                let groups: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
                let label = format!("{v}/{}: accuracy by family", kind_str(kind));
                let (tukey, note) = match tukey_hsd(&groups, 0.05) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                anova.push(FamilyAnova { label, families: cfg.families.clone(), tukey, note });
            }
        }
        if let [a, b] = cfg.variants[..] {
            for &f in &cfg.families {
                if let (Some(x), Some(y)) = (find(a, f, kind), find(b, f, kind)) {
                    let label = format!("{f}/{}: {a} vs {b}", kind_str(kind));
                    comparisons.push(compare(label, &x.report.accuracies(), &y.report.accuracies()));
                }
            }
        }
    }
    StatsReport { comparisons, anova }
}

/// Evenly spaced subset of `idx` of at most `cap` entries.
fn thin(idx: &[usize], cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < idx.len() => (0..c).map(|i| idx[i * idx.len() / c]).collect(),
        _ => idx.to_vec(),
    }
}

fn explain(cfg: &RunConfig, fm: &FeatureMatrix, variant: Variant, family: Family, report: &EvalReport) -> Result<Explanation> {
    let splits = make_splits(fm, &report.config.split)?;
    let (split, run) = (&splits[0], &report.runs[0]);
    let model = train_on(fm, &split.train, &run.spec, None)?;
    let rows = match cfg.xai.rows {
        ExplainRows::All => thin(&(0..fm.n_rows()).collect::<Vec<_>>(), cfg.xai.explain_rows),
        ExplainRows::Test => thin(&split.test, cfg.xai.explain_rows),
    };
    let raw: Vec<Vec<f64>> = rows.iter().map(|&i| fm.rows[i].clone()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| fm.labels[i].as_f64()).collect();
    let view = ModelView::new(&model, &fm.columns, &raw)?;
    let tag = format!("{variant}/{family}");
    let lime = LimeConfig { seed: derive(cfg.seed, &format!("lime/{tag}"), 0), ..cfg.xai.lime.clone() };
    let rankings = all_rankings(&view, &y, &cfg.xai.methods, &lime, cfg.xai.mda_repeats, derive(cfg.seed, &format!("mda/{tag}"), 0))?;
    let mut dependence = Vec::new();
    if cfg.xai.methods.contains(&Method::Shap) {
        for feature in &cfg.xai.dependence_features {
            if fm.column_index(feature).is_some() {
                dependence.push(dependence_data(&view, feature, Method::Shap, &lime)?);
            }
        }
    }
    Ok(Explanation { variant, family, rows_explained: rows.len(), rankings, dependence })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// ingest → features → splits → search → train → evaluate → stats → explain → agree → report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.check()?;
    with_workers(cfg.workers, || pipeline(cfg))?
}

fn pipeline(cfg: &RunConfig) -> Result<ReportBundle> {
    let cohort = load_cohort(cfg).map_err(|e| e.in_stage("ingest"))?;
    let mut evaluations = Vec::new();
    let mut explanations = Vec::new();
    let mut agreement = BTreeMap::new();
    for &variant in &cfg.variants {
        let fm = feature_matrix(&cohort, variant, &cfg.features).map_err(|e| e.in_stage("features"))?;
        log::info!("{variant}: {} rows", fm.n_rows());
        for &family in &cfg.families {
            for i in 0..cfg.validation.len() {
                let report = evaluate(&fm, &cfg.eval_config(family, i)).map_err(|e| e.in_stage("evaluate"))?;
                log::info!("{variant}/{family}/{}: median accuracy {:.4}", kind_str(report.config.split.kind), report.median_accuracy());
                evaluations.push(Evaluation { variant, family, report });
            }
        }
        let mut matrices = Vec::new();
        for &family in cfg.families.iter().filter(|f| f.is_tree()) {
            let first = evaluations
                .iter()
                .find(|e| e.variant == variant && e.family == family)
                .expect("evaluated above");
            let ex = explain(cfg, &fm, variant, family, &first.report).map_err(|e| e.in_stage("explain"))?;
            if ex.rankings.len() >= 2 {
                let lists: Vec<RankingList> = ex.rankings.values().map(RankingList::from).collect();
                matrices.push(agreement_matrix(family.as_str(), &lists, &cfg.xai.ks).map_err(|e| e.in_stage("agree"))?);
            }
            explanations.push(ex);
        }
        agreement.insert(variant, matrices);
    }
    let stats = run_stats(cfg, &evaluations);
    write_bundle(cfg, evaluations, stats, explanations, agreement).map_err(|e| e.in_stage("report"))
}

fn write_bundle(
    cfg: &RunConfig,
    evaluations: Vec<Evaluation>,
    stats: StatsReport,
    explanations: Vec<Explanation>,
    agreement: BTreeMap<Variant, Vec<AgreementMatrix>>,
) -> Result<ReportBundle> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = vec![("config.json".into(), json(cfg)?)];
    for e in &evaluations {
        files.push((format!("eval_{}_{}_{}.json", e.variant, e.family, kind_str(e.kind())), json(&e.report)?));
    }
    files.push(("stats.json".into(), json(&stats)?));
    for &variant in &cfg.variants {
        let of_variant: Vec<&Explanation> = explanations.iter().filter(|x| x.variant == variant).collect();
        if of_variant.is_empty() {
            continue;
        }
        let lists: Vec<ModelRankings> = of_variant
            .iter()
            .map(|x| ModelRankings { model: x.family.to_string(), rankings: x.rankings.values().map(RankingList::from).collect() })
            .collect();
        files.push((format!("rankings_{variant}.json"), json(&lists)?));
        for x in &of_variant {
            let scored: Vec<&ImportanceRanking> = x.rankings.values().collect();
            files.push((format!("importance_{variant}_{}.json", x.family), json(&scored)?));
            for d in &x.dependence {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["value", "score"])?;
                for (v, s) in &d.points {
                    w.write_record([v.to_string(), s.to_string()])?;
                }
                let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("dependence CSV: {e}")))?;
                files.push((format!("dependence_{variant}_{}_{}.csv", x.family, d.feature), bytes));
            }
        }
        let matrices = &agreement[&variant];
        if !matrices.is_empty() {
            files.push((format!("agreement_{variant}.csv"), matrix_csv_string(matrices)?.into_bytes()));
            files.push((format!("agreement_summary_{variant}.json"), json(&summarize(matrices))?));
        }
    }
    let mut digests = BTreeMap::new();
    for (name, bytes) in &files {
        write_file(dir, name, bytes)?;
        digests.insert(name.clone(), hex(&Sha256::digest(bytes)));
    }
    let manifest = Manifest {
        tool: "nutrisk".into(),
        version: TOOL_VERSION.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        files: digests,
    };
    write_file(dir, "manifest.json", &json(&manifest)?)?;
    Ok(ReportBundle { dir: dir.clone(), manifest, evaluations, stats, explanations, agreement })
}

/// Agreement matrices for an external rankings file, as CSV.
pub fn cmd_agree(rankings: &Path, ks: &[usize]) -> Result<String> {
    matrix_csv_string(&agree_file(rankings, ks)?)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "nutrisk", version, about = "Explainable malnutrition-risk screening from weekly monitoring data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort as CSV tables.
    Synth {
        /// Directory for the cohort tables.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of subjects (default from the generator spec).
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Validate cohort tables and write the feature matrix of each variant.
    Ingest(RunArgs),
    /// Train one model on every row of a variant and save it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Where to write the model artifact.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the validation schemes and write evaluation reports.
    Evaluate(RunArgs),
    /// Rank features of a saved model on a variant's rows.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        /// Model artifact written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Top-K agreement for an external rankings JSON file.
    Agree {
        /// JSON array of {model, rankings: [{method, features, truncated?}]}.
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: evaluation, statistics, explanations, agreement and manifest.
    Report(RunArgs),
}

/// Flags shared by the pipeline commands; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort tables to ingest instead of a synthetic cohort.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "NUTRISK_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "NUTRISK_WORKERS")]
    pub workers: Option<usize>,
    /// Dataset variants: with_body, without_body.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variant: Vec<Variant>,
    /// Model families: cart, forest, gbdt, rusboost, lasso_logreg, knn.
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    pub family: Vec<Family>,
    /// Imbalance handling: none, smote, class_weights, balanced_subsample, random_undersample.
    #[arg(long, value_parser = parse_resample)]
    pub resample: Option<ResampleMode>,
    /// Validation schemes: holdout, loso.
    #[arg(long, value_delimiter = ',', value_parser = parse_split)]
    pub split: Vec<SplitKind>,
    /// Hold-out repeats.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Hyperparameter search rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Train family defaults without tuning.
    #[arg(long)]
    pub no_search: bool,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("unknown model family {s:?}"))
}

fn parse_resample(s: &str) -> std::result::Result<ResampleMode, String> {
    ResampleMode::parse(s).ok_or_else(|| format!("unknown resample mode {s:?}"))
}

fn parse_split(s: &str) -> std::result::Result<SplitKind, String> {
    match s {
        "holdout" => Ok(SplitKind::Holdout),
        "loso" => Ok(SplitKind::Loso),
        _ => Err(format!("unknown split scheme {s:?}")),
    }
}

impl RunArgs {
    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data_dir = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if !self.variant.is_empty() {
            cfg.variants = self.variant.clone();
        }
        if !self.family.is_empty() {
            cfg.families = self.family.clone();
        }
        if let Some(m) = self.resample {
            cfg.resample.mode = m;
        }
        if !self.split.is_empty() {
            cfg.validation = self
                .split
                .iter()
                .map(|&kind| cfg.validation.iter().find(|p| p.kind == kind).cloned().unwrap_or(SplitPlan { kind, ..SplitPlan::default() }))
                .collect();
        }
        if let Some(r) = self.repeats {
            for p in &mut cfg.validation {
                p.repeats = r;
            }
        }
        if self.no_search {
            cfg.search = None;
        } else if let Some(r) = self.rounds {
            cfg.search.get_or_insert_with(HyperSearchConfig::default).rounds = r;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Exit status: 0 success, 1 usage error, 2 data error, 3 internal failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        2
    } else {
        3
    }
}

/// A failed invocation: bad usage, or an error from the run itself.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) => exit_code(e),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn resolve(run: &RunArgs) -> std::result::Result<RunConfig, Failure> {
    run.resolve().map_err(|e| match e {
        Error::Io { .. } | Error::InvalidInput(_) => Failure::Usage(e.to_string()),
        e => Failure::Run(e),
    })
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))
}

/// Executes a parsed command; returns what to print on standard output.
pub fn execute(cmd: Command) -> std::result::Result<String, Failure> {
    match cmd {
        Command::Synth { out, seed, subjects } => {
            let mut spec = SyntheticCohortSpec::default();
            if let Some(n) = subjects {
                spec.n_subjects = n;
            }
            spec.check().map_err(|e| Failure::Usage(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let synth = generate_cohort(&spec, seed)?;
            write_synthetic(&out, &synth, &spec, seed)?;
            Ok(format!("wrote synthetic cohort ({} subjects) to {}\n", synth.cohort.n_subjects(), out.display()))
        }
        Command::Ingest(run) => {
            let cfg = resolve(&run)?;
            prepare_out(&cfg)?;
            let cohort = load_cohort(&cfg).map_err(|e| e.in_stage("ingest"))?;
            let report = validate_cohort(&cohort, &cfg.features.validation);
            write_file(&cfg.out_dir, "validation.json", &json(&report)?)?;
            let mut msg = String::new();
            for &v in &cfg.variants {
                let fm = feature_matrix(&cohort, v, &cfg.features).map_err(|e| e.in_stage("features"))?;
                fm.write(&cfg.out_dir, &format!("features_{v}"))?;
                let (n, r) = fm.class_counts();
                msg.push_str(&format!("{v}: {} rows ({n} normal, {r} risk)\n", fm.n_rows()));
            }
            Ok(msg)
        }
        Command::Train { run, model } => {
            let cfg = resolve(&run)?;
            let (&variant, &family) = (&cfg.variants[0], &cfg.families[0]);
            let m = with_workers(cfg.workers, || -> Result<TrainedModel> {
                let cohort = load_cohort(&cfg).map_err(|e| e.in_stage("ingest"))?;
                let fm = feature_matrix(&cohort, variant, &cfg.features).map_err(|e| e.in_stage("features"))?;
                let all: Vec<usize> = (0..fm.n_rows()).collect();
                train_on(&fm, &all, &cfg.base_spec(family), cfg.search.as_ref()).map_err(|e| e.in_stage("train"))
            })??;
            persist_model(&m, &model)?;
            Ok(format!("wrote {family} model for {variant} to {}\n", model.display()))
        }
        Command::Evaluate(run) => {
            let cfg = resolve(&run)?;
            prepare_out(&cfg)?;
            let evals = with_workers(cfg.workers, || -> Result<Vec<Evaluation>> {
                let cohort = load_cohort(&cfg).map_err(|e| e.in_stage("ingest"))?;
                let mut out = Vec::new();
                for &variant in &cfg.variants {
                    let fm = feature_matrix(&cohort, variant, &cfg.features).map_err(|e| e.in_stage("features"))?;
                    for &family in &cfg.families {
                        for i in 0..cfg.validation.len() {
                            let report = evaluate(&fm, &cfg.eval_config(family, i)).map_err(|e| e.in_stage("evaluate"))?;
                            out.push(Evaluation { variant, family, report });
                        }
                    }
                }
                Ok(out)
            })??;
            let mut msg = String::new();
            for e in &evals {
                let name = format!("eval_{}_{}_{}.json", e.variant, e.family, kind_str(e.kind()));
                write_file(&cfg.out_dir, &name, &json(&e.report)?)?;
                msg.push_str(&format!("{}/{}/{}: median accuracy {:.4}\n", e.variant, e.family, kind_str(e.kind()), e.report.median_accuracy()));
            }
            Ok(msg)
        }
        Command::Explain { run, model } => {
            let cfg = resolve(&run)?;
            prepare_out(&cfg)?;
            let m = load_model(&model)?;
            let variant = cfg.variants[0];
            let rankings = with_workers(cfg.workers, || -> Result<BTreeMap<Method, ImportanceRanking>> {
                let cohort = load_cohort(&cfg).map_err(|e| e.in_stage("ingest"))?;
                let fm = feature_matrix(&cohort, variant, &cfg.features).map_err(|e| e.in_stage("features"))?;
                let rows = thin(&(0..fm.n_rows()).collect::<Vec<_>>(), cfg.xai.explain_rows);
                let raw: Vec<Vec<f64>> = rows.iter().map(|&i| fm.rows[i].clone()).collect();
                let y: Vec<f64> = rows.iter().map(|&i| fm.labels[i].as_f64()).collect();
                let view = ModelView::new(&m, &fm.columns, &raw)?;
                let methods: Vec<Method> = if m.family().is_tree() {
                    cfg.xai.methods.clone()
                } else {
                    cfg.xai.methods.iter().copied().filter(|x| matches!(x, Method::Lime | Method::Mda)).collect()
                };
                let lime = LimeConfig { seed: derive(cfg.seed, "lime", 0), ..cfg.xai.lime.clone() };
                all_rankings(&view, &y, &methods, &lime, cfg.xai.mda_repeats, derive(cfg.seed, "mda", 0)).map_err(|e| e.in_stage("explain"))
            })??;
            let scored: Vec<&ImportanceRanking> = rankings.values().collect();
            write_file(&cfg.out_dir, &format!("importance_{variant}_{}.json", m.family()), &json(&scored)?)?;
            let mut msg = String::new();
            for r in rankings.values() {
                msg.push_str(&format!("{}: {}\n", r.method, r.top_k(5).join(", ")));
            }
            Ok(msg)
        }
        Command::Agree { rankings, ks, out } => {
            if ks.contains(&0) {
                return Err(Failure::Usage("K must be positive".into()));
            }
            let csv = cmd_agree(&rankings, &ks).map_err(|e| e.in_stage("agree"))?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
                    Ok(String::new())
                }
                None => Ok(csv),
            }
        }
        Command::Report(run) => {
            let cfg = resolve(&run)?;
            let bundle = run_pipeline(&cfg)?;
            Ok(format!("wrote {} files and manifest.json to {}\n", bundle.manifest.files.len(), bundle.dir.display()))
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
