//! Two-stage validation: repeated stratified hold-out and leave-one-subject-out
//! cross-validation, with inner-CV hyperparameter search, metrics and the
//! failure-case scan.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::SubjectId;
use crate::error::{Error, Result};
use crate::featureng::FeatureMatrix;
use crate::models::{fit_resampled, is_risk, Family, Hyperparams, ModelSpec, TrainedModel};
use crate::preprocess::{apply_preprocessor, fit_preprocessor, ResampleMode, ResamplePlan};
use crate::rng::{derive, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Holdout,
    Loso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub train_fraction: f64,
    pub repeats: usize,
    pub stratified: bool,
    pub min_subject_weeks: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan { kind: SplitKind::Holdout, train_fraction: 0.7, repeats: 10, stratified: true, min_subject_weeks: 26, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub index: usize,
    /// Held-out subject for LOSO folds.
    pub subject: Option<SubjectId>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Test-set size per class by largest remainder, so the class counts sum to
/// the rounded overall test size.
fn stratified_test_counts(class_sizes: &[usize], test_fraction: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let total = (n as f64 * test_fraction).round() as usize;
    let quotas: Vec<f64> = class_sizes.iter().map(|&c| c as f64 * test_fraction).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            left -= 1;
        }
    }
    counts
}

fn class_rows(y: &[f64]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &v) in y.iter().enumerate() {
        out[usize::from(v == 1.0)].push(i);
    }
    out
}

/// `repeats` random train/test partitions, stratified by label.
pub fn holdout_splits(fm: &FeatureMatrix, plan: &SplitPlan) -> Result<Vec<Split>> {
    if !(0.0..1.0).contains(&plan.train_fraction) || plan.train_fraction == 0.0 {
        return Err(Error::InvalidInput(format!("train fraction {} outside (0, 1)", plan.train_fraction)));
    }
    let y = fm.y();
    let classes = class_rows(&y);
    if plan.stratified && classes.iter().any(|c| c.len() < 2) {
        return Err(Error::InvalidInput("stratified hold-out needs at least 2 rows per class".into()));
    }
    let test_fraction = 1.0 - plan.train_fraction;
    (0..plan.repeats)
        .map(|r| {
            let mut rng = rng_for(plan.seed, "holdout", r as u64);
            let mut test = Vec::new();
            if plan.stratified {
                let counts = stratified_test_counts(&[classes[0].len(), classes[1].len()], test_fraction);
                for (c, rows) in classes.iter().enumerate() {
                    let mut rows = rows.clone();
                    rows.shuffle(&mut rng);
                    test.extend_from_slice(&rows[..counts[c]]);
                }
            } else {
                let mut rows: Vec<usize> = (0..y.len()).collect();
                rows.shuffle(&mut rng);
                test.extend_from_slice(&rows[..(y.len() as f64 * test_fraction).round() as usize]);
            }
            test.sort_unstable();
            let mut in_test = vec![false; y.len()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..y.len()).filter(|&i| !in_test[i]).collect();
            Ok(Split { index: r, subject: None, train, test })
        })
        .collect()
}

/// Subjects with at least `min_weeks` rows, in sorted order.
pub fn eligible_subjects(fm: &FeatureMatrix, min_weeks: usize) -> Vec<SubjectId> {
    fm.subject_rows().into_iter().filter(|(_, rows)| rows.len() >= min_weeks).map(|(s, _)| s).collect()
}

/// One fold per eligible subject. Ineligible subjects are never tested but
/// their rows stay in every training set.
pub fn loso_splits(fm: &FeatureMatrix, plan: &SplitPlan) -> Result<Vec<Split>> {
    let by_subject = fm.subject_rows();
    let eligible = eligible_subjects(fm, plan.min_subject_weeks);
    if eligible.is_empty() {
        return Err(Error::InvalidInput(format!("no subject has {} or more weeks", plan.min_subject_weeks)));
    }
    if by_subject.len() < 2 {
        return Err(Error::InvalidInput("LOSO needs at least 2 subjects".into()));
    }
    Ok(eligible
        .into_iter()
        .enumerate()
        .map(|(index, s)| {
            let test = by_subject[&s].clone();
            let train = (0..fm.n_rows()).filter(|&i| fm.subjects[i] != s).collect();
            Split { index, subject: Some(s), train, test }
        })
        .collect())
}

pub fn make_splits(fm: &FeatureMatrix, plan: &SplitPlan) -> Result<Vec<Split>> {
    match plan.kind {
        SplitKind::Holdout => holdout_splits(fm, plan),
        SplitKind::Loso => loso_splits(fm, plan),
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// F1 of the Risk class; absent when the labels hold one class only.
    pub f1: Option<f64>,
    /// Absent when the labels hold one class only.
    pub auc: Option<f64>,
}

fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Accuracy and F1 at P(Risk) >= 0.5, AUC as the tie-corrected Mann-Whitney statistic.
pub fn compute_metrics(y_true: &[f64], p_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != p_pred.len() || y_true.is_empty() {
        return Err(Error::InvalidInput(format!("{} labels vs {} predictions", y_true.len(), p_pred.len())));
    }
    if let Some(p) = p_pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(p_pred) {
        let (pos, pred) = (t == 1.0, is_risk(p));
        correct += usize::from(pos == pred);
        tp += usize::from(pos && pred);
        fp += usize::from(!pos && pred);
        fn_ += usize::from(pos && !pred);
    }
    let n_pos = y_true.iter().filter(|&&t| t == 1.0).count();
    let n_neg = y_true.len() - n_pos;
    let single_class = n_pos == 0 || n_neg == 0;
    let f1 = (!single_class).then(|| if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 });
    let auc = (!single_class).then(|| {
        let ranks = midranks(p_pred);
        let r_pos: f64 = ranks.iter().zip(y_true).filter(|(_, &t)| t == 1.0).map(|(r, _)| r).sum();
        let (np, nn) = (n_pos as f64, n_neg as f64);
        (r_pos - np * (np + 1.0) / 2.0) / (np * nn)
    });
    Ok(Metrics { accuracy: correct as f64 / y_true.len() as f64, f1, auc })
}

// ---------------------------------------------------------------------------
// Hyperparameter search

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    F1,
    Accuracy,
}

/// F1 when training on the raw class balance, accuracy under any resampling.
pub fn scoring_for(mode: ResampleMode) -> Scoring {
    if mode == ResampleMode::None {
        Scoring::F1
    } else {
        Scoring::Accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SeededRandom,
    /// Sequential model-based: a nearest-neighbour surrogate proposes each
    /// round's point after a random warm-up.
    Smbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSearchConfig {
    pub rounds: usize,
    pub inner_folds: usize,
    pub strategy: Strategy,
    /// `None` picks [`scoring_for`] the resample mode.
    pub scoring: Option<Scoring>,
    /// Tune on the first split only and reuse the winner for the others.
    pub reuse: bool,
}

impl Default for HyperSearchConfig {
    fn default() -> Self {
        HyperSearchConfig { rounds: 60, inner_folds: 10, strategy: Strategy::SeededRandom, scoring: None, reuse: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dim {
    Int { name: String, lo: i64, hi: i64 },
    Float { name: String, lo: f64, hi: f64, log: bool },
}

impl Dim {
    fn name(&self) -> &str {
        match self {
            Dim::Int { name, .. } | Dim::Float { name, .. } => name,
        }
    }

    /// Maps u in [0, 1] to a parameter value.
    fn decode(&self, u: f64) -> f64 {
        match *self {
            Dim::Int { lo, hi, .. } => (lo + ((hi - lo + 1) as f64 * u).floor() as i64).min(hi) as f64,
            Dim::Float { lo, hi, log: true, .. } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
            Dim::Float { lo, hi, .. } => lo + u * (hi - lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

fn int(name: &str, lo: i64, hi: i64) -> Dim {
    Dim::Int { name: name.into(), lo, hi }
}

fn float(name: &str, lo: f64, hi: f64, log: bool) -> Dim {
    Dim::Float { name: name.into(), lo, hi, log }
}

impl SearchSpace {
    /// Default space per family. The ranges are engineering choices.
    pub fn for_family(family: Family, n_features: usize) -> SearchSpace {
        let d = n_features.max(1) as i64;
        let dims = match family {
            Family::Cart => vec![int("max_depth", 2, 20), int("min_leaf", 1, 20)],
            Family::Forest => vec![
                int("n_trees", 50, 300),
                int("max_depth", 4, 24),
                int("min_leaf", 1, 10),
                int("max_features", 1, d),
            ],
            Family::Gbdt => vec![
                int("n_rounds", 20, 300),
                float("eta", 0.02, 0.3, true),
                int("max_depth", 2, 6),
                float("lambda", 0.1, 10.0, true),
                int("min_leaf", 1, 10),
                float("subsample", 0.6, 1.0, false),
                float("colsample", 0.6, 1.0, false),
            ],
            Family::Rusboost => {
                vec![int("n_rounds", 10, 100), int("max_depth", 1, 5), float("learning_rate", 0.1, 1.0, false)]
            }
            Family::LassoLogreg => vec![float("penalty", 1e-4, 1.0, true)],
            Family::Knn => vec![int("k", 1, 25)],
        };
        SearchSpace { dims }
    }

    pub fn decode(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &u)| d.decode(u)).collect()
    }

    /// Applies decoded values to a copy of `base`.
    pub fn build(&self, base: &Hyperparams, values: &[f64]) -> Result<Hyperparams> {
        let mut h = base.clone();
        for (d, &v) in self.dims.iter().zip(values) {
            set_param(&mut h, d.name(), v)?;
        }
        Ok(h)
    }
}

fn set_param(h: &mut Hyperparams, name: &str, v: f64) -> Result<()> {
    let u = v.round().max(0.0) as usize;
    match (h, name) {
        (Hyperparams::Cart(p), "max_depth") => p.max_depth = u,
        (Hyperparams::Cart(p), "min_leaf") => p.min_leaf = u,
        (Hyperparams::Forest(p), "n_trees") => p.n_trees = u,
        (Hyperparams::Forest(p), "max_depth") => p.max_depth = u,
        (Hyperparams::Forest(p), "min_leaf") => p.min_leaf = u,
        (Hyperparams::Forest(p), "max_features") => p.max_features = Some(u),
        (Hyperparams::Gbdt(p), "n_rounds") => p.n_rounds = u,
        (Hyperparams::Gbdt(p), "eta") => p.eta = v,
        (Hyperparams::Gbdt(p), "max_depth") => p.max_depth = u,
        (Hyperparams::Gbdt(p), "lambda") => p.lambda = v,
        (Hyperparams::Gbdt(p), "min_leaf") => p.min_leaf = u,
        (Hyperparams::Gbdt(p), "subsample") => p.subsample = v,
        (Hyperparams::Gbdt(p), "colsample") => p.colsample = v,
        (Hyperparams::Rusboost(p), "n_rounds") => p.n_rounds = u,
        (Hyperparams::Rusboost(p), "max_depth") => p.max_depth = u,
        (Hyperparams::Rusboost(p), "learning_rate") => p.learning_rate = v,
        (Hyperparams::LassoLogreg(p), "penalty") => p.penalty = v,
        (Hyperparams::Knn(p), "k") => p.k = u,
        (_, other) => return Err(Error::InvalidInput(format!("unknown hyperparameter {other}"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Vec<f64>,
    pub best_score: f64,
    /// Every evaluated point with its score; `None` when no fold was usable.
    pub trail: Vec<(Vec<f64>, Option<f64>)>,
}

/// Maximizes `objective` over `rounds` points of the space. Ties keep the
/// first point encountered.
pub fn search_space(
    space: &SearchSpace,
    rounds: usize,
    strategy: Strategy,
    seed: u64,
    objective: impl Fn(&[f64]) -> Option<f64>,
) -> Result<SearchOutcome> {
    if rounds == 0 {
        return Err(Error::InvalidInput("hyperparameter search needs at least 1 round".into()));
    }
    let dims = space.dims.len();
    let mut rng = rng_for(seed, "search", 0);
    let warmup = match strategy {
        Strategy::SeededRandom => rounds,
        Strategy::Smbo => rounds.min((rounds / 4).max(5)),
    };
    let mut seen: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut trail = Vec::with_capacity(rounds);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for round in 0..rounds {
        let u: Vec<f64> = if round < warmup || seen.is_empty() {
            (0..dims).map(|_| rng.random()).collect()
        } else {
            propose(&seen, dims, &mut rng)
        };
        let values = space.decode(&u);
        let score = objective(&values);
        if let Some(s) = score {
            seen.push((u, s));
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((values.clone(), s));
            }
        }
        trail.push((values, score));
    }
    let (best, best_score) = best.ok_or_else(|| Error::Model("no search round produced a usable score".into()))?;
    Ok(SearchOutcome { best, best_score, trail })
}

/// Picks the candidate with the best surrogate value: inverse-distance
/// weighted mean of the 5 nearest scores plus a small distance bonus.
fn propose(seen: &[(Vec<f64>, f64)], dims: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let (lo, hi) = seen.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, s)| (a.min(*s), b.max(*s)));
    let range = (hi - lo).max(1e-9);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..64 {
        let c: Vec<f64> = (0..dims).map(|_| rng.random()).collect();
        let mut d: Vec<(f64, f64)> = seen
            .iter()
            .map(|(p, s)| (p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), *s))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let near = &d[..d.len().min(5)];
        let wsum: f64 = near.iter().map(|(d, _)| 1.0 / (d + 1e-6)).sum();
        let mean = near.iter().map(|(d, s)| s / (d + 1e-6)).sum::<f64>() / wsum;
        let value = mean + 0.1 * range * near[0].0.sqrt();
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((c, value));
        }
    }
    best.expect("64 candidates").0
}

/// Test folds of a stratified k-fold partition.
pub fn stratified_folds(y: &[f64], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, "folds", 0);
    let k = k.max(1);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut rows in class_rows(y) {
        rows.shuffle(&mut rng);
        for i in rows {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn score_metrics(m: &Metrics, scoring: Scoring) -> Option<f64> {
    match scoring {
        Scoring::Accuracy => Some(m.accuracy),
        Scoring::F1 => m.f1,
    }
}

/// Mean inner-CV score of `spec`; folds whose training part holds one class
/// or whose score is undefined are skipped.
pub fn cross_val_score(spec: &ModelSpec, x: &[Vec<f64>], y: &[f64], folds: &[Vec<usize>], scoring: Scoring) -> Option<f64> {
    let mut scores = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; y.len()];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..y.len()).filter(|&i| !in_test[i]).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        if test.is_empty() || ty.iter().all(|&v| v == ty[0]) {
            log::warn!("inner fold {f} is degenerate; skipped");
            continue;
        }
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let model = match fit_resampled(spec, &tx, &ty) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("inner fold {f} skipped: {e}");
                continue;
            }
        };
        let vx: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
        let vy: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let Ok(p) = model.predict_proba(&vx) else { continue };
        if let Some(s) = compute_metrics(&vy, &p).ok().and_then(|m| score_metrics(&m, scoring)) {
            scores.push(s);
        }
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub spec: ModelSpec,
    pub score: f64,
    pub scoring: Scoring,
    pub rounds: usize,
}

/// Tunes `base` (family, resampling and seed fixed) on encoded training rows.
pub fn hyper_search(base: &ModelSpec, x: &[Vec<f64>], y: &[f64], cfg: &HyperSearchConfig) -> Result<SearchResult> {
    let space = SearchSpace::for_family(base.family(), x.first().map_or(1, Vec::len));
    hyper_search_in(base, &space, x, y, cfg)
}

pub fn hyper_search_in(
    base: &ModelSpec,
    space: &SearchSpace,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &HyperSearchConfig,
) -> Result<SearchResult> {
    let scoring = cfg.scoring.unwrap_or_else(|| scoring_for(base.resample.mode));
    let folds = stratified_folds(y, cfg.inner_folds, derive(base.seed, "inner-cv", 0));
    let outcome = search_space(space, cfg.rounds, cfg.strategy, base.seed, |values| {
        let params = space.build(&base.params, values).ok()?;
        let spec = ModelSpec { params, ..base.clone() };
        cross_val_score(&spec, x, y, &folds, scoring)
    })?;
    let spec = ModelSpec { params: space.build(&base.params, &outcome.best)?, ..base.clone() };
    Ok(SearchResult { spec, score: outcome.best_score, scoring, rounds: cfg.rounds })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub family: Family,
    pub resample: ResamplePlan,
    pub split: SplitPlan,
    /// `None` trains the family defaults without tuning.
    pub search: Option<HyperSearchConfig>,
    pub seed: u64,
}

impl EvalConfig {
    fn base_spec(&self, split: usize) -> ModelSpec {
        ModelSpec {
            params: Hyperparams::default_for(self.family),
            resample: self.resample.clone(),
            seed: derive(self.seed, "model", split as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub split: usize,
    pub subject: Option<SubjectId>,
    pub n_train: usize,
    /// `[normal, risk]` test rows.
    pub test_counts: [usize; 2],
    pub metrics: Metrics,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
    Some(Aggregate {
        n: v.len(),
        median: quantile(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCase {
    pub subject: SubjectId,
    pub n_rows: usize,
    pub normal: usize,
    pub risk: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub runs: Vec<RunMetrics>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub failures: Vec<FailureCase>,
}

impl EvalReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.metrics.accuracy).collect()
    }

    pub fn median_accuracy(&self) -> f64 {
        self.aggregates.get("accuracy").map_or(f64::NAN, |a| a.median)
    }
}

/// LOSO subjects whose every test row was misclassified.
pub fn failure_case_scan(report: &EvalReport) -> Vec<FailureCase> {
    report
        .runs
        .iter()
        .filter(|r| r.metrics.accuracy == 0.0)
        .filter_map(|r| {
            r.subject.clone().map(|subject| FailureCase {
                subject,
                n_rows: r.test_counts[0] + r.test_counts[1],
                normal: r.test_counts[0],
                risk: r.test_counts[1],
            })
        })
        .collect()
}

fn rows_of(fm: &FeatureMatrix, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (idx.iter().map(|&i| fm.rows[i].clone()).collect(), idx.iter().map(|&i| fm.labels[i].as_f64()).collect())
}

/// Fits the encoder on the training rows, tunes if configured, and trains.
/// The returned model carries its encoder.
pub fn train_on(fm: &FeatureMatrix, train: &[usize], base: &ModelSpec, search: Option<&HyperSearchConfig>) -> Result<TrainedModel> {
    let (raw, y) = rows_of(fm, train);
    let plan = fit_preprocessor(&fm.columns, &raw)?;
    let x = apply_preprocessor(&plan, &raw)?;
    let spec = match search {
        Some(cfg) => hyper_search(base, &x, &y, cfg)?.spec,
        None => base.clone(),
    };
    let mut m = fit_resampled(&spec, &x, &y)?;
    m.preprocess = Some(plan);
    Ok(m)
}

fn run_split(fm: &FeatureMatrix, split: &Split, spec: &ModelSpec, search: Option<&HyperSearchConfig>) -> Result<RunMetrics> {
    let model = train_on(fm, &split.train, spec, search)?;
    let (raw, y) = rows_of(fm, &split.test);
    let p = model.predict_proba_raw_features(&raw)?;
    let risk = y.iter().filter(|&&v| v == 1.0).count();
    Ok(RunMetrics {
        split: split.index,
        subject: split.subject.clone(),
        n_train: split.train.len(),
        test_counts: [y.len() - risk, risk],
        metrics: compute_metrics(&y, &p)?,
        spec: model.spec,
    })
}

/// Runs every split of the plan; splits run in parallel and are reported in order.
pub fn evaluate(fm: &FeatureMatrix, cfg: &EvalConfig) -> Result<EvalReport> {
    let splits = make_splits(fm, &cfg.split)?;
    let runs: Vec<RunMetrics> = match &cfg.search {
        Some(search) if search.reuse => {
            let first = &splits[0];
            let (raw, y) = rows_of(fm, &first.train);
            let plan = fit_preprocessor(&fm.columns, &raw)?;
            let tuned = hyper_search(&cfg.base_spec(0), &apply_preprocessor(&plan, &raw)?, &y, search)?.spec;
            splits
                .par_iter()
                .map(|s| run_split(fm, s, &ModelSpec { seed: cfg.base_spec(s.index).seed, ..tuned.clone() }, None))
                .collect::<Result<_>>()?
        }
        search => splits.par_iter().map(|s| run_split(fm, s, &cfg.base_spec(s.index), search.as_ref())).collect::<Result<_>>()?,
    };
    let mut aggregates = BTreeMap::new();
    let pick = |f: fn(&Metrics) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(&r.metrics)).collect() };
    for (name, values) in [("accuracy", pick(|m| Some(m.accuracy))), ("f1", pick(|m| m.f1)), ("auc", pick(|m| m.auc))] {
        if let Some(a) = aggregate(&values) {
            aggregates.insert(name.to_string(), a);
        }
    }
    let mut report = EvalReport { config: cfg.clone(), runs, aggregates, failures: Vec::new() };
    report.failures = failure_case_scan(&report);
    Ok(report)
}
