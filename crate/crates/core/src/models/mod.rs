//! Binary classifiers with probability output.
//!
//! Tree models share one representation: `offset + Σ scale_t · tree_t(x)`,
//! optionally passed through the logistic link. A forest averages leaf
//! P(Risk) values, boosting adds shrunken Newton leaf margins to a base
//! margin, and RUSBoost takes an α-weighted vote of hard leaf decisions.

mod linear;
mod tree;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{
    balanced_subsample, class_weights, row_weights, smote_oversample, PreprocessPlan, ResampleMode,
    ResamplePlan,
};
use crate::rng::{derive, rng_for};

pub use linear::{fit_logistic_lasso, LassoFit};
pub use tree::{depth, leaf_of, predict_tree, Split, TreeNode};
use tree::{grow_tree, to_columns, Criterion, GrowParams, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cart,
    Forest,
    Gbdt,
    Rusboost,
    LassoLogreg,
    Knn,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Cart, Family::Forest, Family::Gbdt, Family::Rusboost, Family::LassoLogreg, Family::Knn];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cart => "cart",
            Family::Forest => "forest",
            Family::Gbdt => "gbdt",
            Family::Rusboost => "rusboost",
            Family::LassoLogreg => "lasso_logreg",
            Family::Knn => "knn",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    pub fn is_tree(self) -> bool {
        !matches!(self, Family::LassoLogreg | Family::Knn)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams { max_depth: 32, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means √d.
    pub max_features: Option<usize>,
    /// Each tree sees a balanced subsample instead of a bootstrap.
    pub balanced: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 32, min_leaf: 5, max_features: None, balanced: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_child_weight: f64,
    /// Row fraction drawn without replacement per round.
    pub subsample: f64,
    /// Column fraction drawn per tree.
    pub colsample: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_rounds: 100,
            eta: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 4,
            min_leaf: 5,
            min_child_weight: 1e-3,
            subsample: 1.0,
            colsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RusboostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
}

impl Default for RusboostParams {
    fn default() -> Self {
        RusboostParams { n_rounds: 50, max_depth: 3, min_leaf: 5, learning_rate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    /// L1 penalty on the mean log-loss.
    pub penalty: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams { penalty: 0.01, max_iter: 1000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparams {
    Cart(CartParams),
    Forest(ForestParams),
    Gbdt(GbdtParams),
    Rusboost(RusboostParams),
    LassoLogreg(LassoParams),
    Knn(KnnParams),
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Cart(_) => Family::Cart,
            Hyperparams::Forest(_) => Family::Forest,
            Hyperparams::Gbdt(_) => Family::Gbdt,
            Hyperparams::Rusboost(_) => Family::Rusboost,
            Hyperparams::LassoLogreg(_) => Family::LassoLogreg,
            Hyperparams::Knn(_) => Family::Knn,
        }
    }

    pub fn default_for(family: Family) -> Hyperparams {
        match family {
            Family::Cart => Hyperparams::Cart(CartParams::default()),
            Family::Forest => Hyperparams::Forest(ForestParams::default()),
            Family::Gbdt => Hyperparams::Gbdt(GbdtParams::default()),
            Family::Rusboost => Hyperparams::Rusboost(RusboostParams::default()),
            Family::LassoLogreg => Hyperparams::LassoLogreg(LassoParams::default()),
            Family::Knn => Hyperparams::Knn(KnnParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: Hyperparams,
    pub resample: ResamplePlan,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: Hyperparams, seed: u64) -> ModelSpec {
        ModelSpec { params, resample: ResamplePlan::default(), seed }
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    Probability,
    LogOdds,
}

/// `offset + Σ scales[t] · tree_t(x)`, through the logistic link if `logistic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<Vec<TreeNode>>,
    pub scales: Vec<f64>,
    pub offset: f64,
    pub logistic: bool,
}

impl TreeEnsemble {
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.offset + self.trees.iter().zip(&self.scales).map(|(t, s)| s * predict_tree(t, x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitted {
    Trees(TreeEnsemble),
    Linear { coef: Vec<f64>, intercept: f64 },
    Knn { x: Vec<Vec<f64>>, y: Vec<f64>, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub fitted: Fitted,
    pub output: OutputSpace,
    /// Encoder the model was trained behind, if any.
    pub preprocess: Option<PreprocessPlan>,
    /// `[normal, risk]` training-set sizes per RUSBoost round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub round_class_counts: Vec<[usize; 2]>,
}

/// Risk decision at P(Risk) >= 0.5.
pub fn is_risk(p: f64) -> bool {
    p >= 0.5
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Log-loss of one label at margin `m`.
pub fn logloss(y: f64, m: f64) -> f64 {
    // log(1 + e^m) - y m, computed stably
    let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
    softplus - y * m
}

/// Gradient and hessian of [`logloss`] with respect to the margin.
pub fn logloss_grad_hess(y: f64, m: f64) -> (f64, f64) {
    let p = sigmoid(m);
    (p - y, p * (1.0 - p))
}

fn check_xy(x: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>, need_both: bool) -> Result<usize> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::Model(format!("need at least 2 rows with matching labels, got {} rows and {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Model("ragged feature matrix".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite feature value".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Model("labels must be 0 or 1".into()));
    }
    if let Some(w) = weights {
        if w.len() != y.len() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Model("weights must be finite, non-negative and one per row".into()));
        }
    }
    if need_both && (!y.contains(&0.0) || !y.contains(&1.0)) {
        return Err(Error::Model("training labels contain a single class".into()));
    }
    Ok(d)
}

fn gini_samples(rows: &[(usize, usize)], y: &[f64], w: &[f64]) -> Vec<Sample> {
    rows.iter()
        .map(|&(row, count)| {
            let a = w[row] * count as f64;
            Sample { row, count, cover: a, a, b: a * y[row] }
        })
        .collect()
}

/// Fits a model on already-encoded rows. Labels are 0 (Normal) or 1 (Risk).
pub fn fit_model(spec: &ModelSpec, x: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Result<TrainedModel> {
    let family = spec.family();
    let d = check_xy(x, y, weights, family != Family::Knn)?;
    let ones = vec![1.0; y.len()];
    let w = weights.unwrap_or(&ones);
    let mut round_class_counts = Vec::new();
    let (fitted, output) = match &spec.params {
        Hyperparams::Cart(p) => {
            let cols = to_columns(x, d);
            let rows: Vec<(usize, usize)> = (0..x.len()).map(|i| (i, 1)).collect();
            let params = GrowParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: None };
            let mut rng = rng_for(spec.seed, "cart", 0);
            let tree = grow_tree(&cols, &gini_samples(&rows, y, w), Criterion::Gini, params, &mut rng);
            (Fitted::Trees(TreeEnsemble { trees: vec![tree], scales: vec![1.0], offset: 0.0, logistic: false }), OutputSpace::Probability)
        }
        Hyperparams::Forest(p) => (Fitted::Trees(fit_forest(p, spec.seed, x, y, w, d)?), OutputSpace::Probability),
        Hyperparams::Gbdt(p) => (Fitted::Trees(fit_gbdt(p, spec.seed, x, y, w, d)), OutputSpace::LogOdds),
        Hyperparams::Rusboost(p) => {
            let (ens, counts) = fit_rusboost(p, spec.seed, x, y, w, d)?;
            round_class_counts = counts;
            (Fitted::Trees(ens), OutputSpace::Probability)
        }
        Hyperparams::LassoLogreg(p) => {
            let fit = fit_logistic_lasso(x, y, Some(w), p.penalty, p.max_iter, p.tol);
            (Fitted::Linear { coef: fit.coef, intercept: fit.intercept }, OutputSpace::Probability)
        }
        Hyperparams::Knn(p) => {
            if p.k == 0 {
                return Err(Error::Model("k-NN needs k >= 1".into()));
            }
            (Fitted::Knn { x: x.to_vec(), y: y.to_vec(), k: p.k }, OutputSpace::Probability)
        }
    };
    Ok(TrainedModel { spec: spec.clone(), n_features: d, fitted, output, preprocess: None, round_class_counts })
}

/// Applies the spec's resampling regime to the training rows, then fits.
///
/// A forest under `balanced_subsample` draws a balanced subsample per tree;
/// every other family gets a single balanced draw.
pub fn fit_resampled(spec: &ModelSpec, x: &[Vec<f64>], y: &[f64]) -> Result<TrainedModel> {
    let seed = derive(spec.seed, "resample", 0);
    let plan = &spec.resample;
    match plan.mode {
        ResampleMode::None => fit_model(spec, x, y, None),
        ResampleMode::Smote => {
            let (xs, ys) = smote_oversample(x, y, plan.smote_k, seed)?;
            fit_model(spec, &xs, &ys, None)
        }
        ResampleMode::ClassWeights => {
            let cw = match plan.class_weights {
                Some(w) => w,
                None => class_weights(y)?,
            };
            fit_model(spec, x, y, Some(&row_weights(y, cw)))
        }
        ResampleMode::BalancedSubsample if spec.family() == Family::Forest => {
            let mut s = spec.clone();
            if let Hyperparams::Forest(p) = &mut s.params {
                p.balanced = true;
            }
            let mut m = fit_model(&s, x, y, None)?;
            m.spec = spec.clone();
            Ok(m)
        }
        ResampleMode::BalancedSubsample | ResampleMode::RandomUndersample => {
            let idx = balanced_subsample(y, seed)?;
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            fit_model(spec, &xs, &ys, None)
        }
    }
}

fn fit_forest(p: &ForestParams, seed: u64, x: &[Vec<f64>], y: &[f64], w: &[f64], d: usize) -> Result<TreeEnsemble> {
    if p.n_trees == 0 {
        return Err(Error::Model("forest needs at least one tree".into()));
    }
    let cols = to_columns(x, d);
    let max_features = Some(p.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)));
    let params = GrowParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features };
    let n = x.len();
    let trees: Result<Vec<Vec<TreeNode>>> = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, "tree", t as u64);
            let rows: Vec<(usize, usize)> = if p.balanced {
                balanced_subsample(y, derive(seed, "tree-balanced", t as u64))?
                    .into_iter()
                    .map(|i| (i, 1))
                    .collect()
            } else {
                let mut counts = vec![0usize; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                counts.into_iter().enumerate().filter(|(_, c)| *c > 0).collect()
            };
            Ok(grow_tree(&cols, &gini_samples(&rows, y, w), Criterion::Gini, params, &mut rng))
        })
        .collect();
    let trees = trees?;
    let scales = vec![1.0 / trees.len() as f64; trees.len()];
    Ok(TreeEnsemble { trees, scales, offset: 0.0, logistic: false })
}

/// Weighted log-odds of the positive rate, where boosting starts.
pub fn gbdt_base_margin(y: &[f64], w: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    let p = (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum).clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn fit_gbdt(p: &GbdtParams, seed: u64, x: &[Vec<f64>], y: &[f64], w: &[f64], d: usize) -> TreeEnsemble {
    let n = x.len();
    let cols = to_columns(x, d);
    let base = gbdt_base_margin(y, w);
    let mut margin = vec![base; n];
    let crit = Criterion::Newton { lambda: p.lambda, eta: p.eta, min_child_weight: p.min_child_weight, gamma: p.gamma };
    let mut trees = Vec::with_capacity(p.n_rounds);
    for round in 0..p.n_rounds {
        let mut rng = rng_for(seed, "gbdt-round", round as u64);
        let rows: Vec<usize> = if p.subsample < 1.0 {
            let m = ((p.subsample * n as f64).round() as usize).clamp(1, n);
            let mut r = sample(&mut rng, n, m).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let samples: Vec<Sample> = rows
            .iter()
            .map(|&i| {
                let (g, h) = logloss_grad_hess(y[i], margin[i]);
                Sample { row: i, count: 1, cover: w[i], a: w[i] * h, b: w[i] * g }
            })
            .collect();
        let tree = if p.colsample < 1.0 {
            let m = ((p.colsample * d as f64).round() as usize).clamp(1, d);
            let mut keep = sample(&mut rng, d, m).into_vec();
            keep.sort_unstable();
            // blank out dropped columns so they can never split
            let sub: Vec<Vec<f64>> =
                (0..d).map(|j| if keep.contains(&j) { cols[j].clone() } else { vec![0.0; n] }).collect();
            grow_tree(&sub, &samples, crit, GrowParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: None }, &mut rng)
        } else {
            grow_tree(&cols, &samples, crit, GrowParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: None }, &mut rng)
        };
        for (i, m) in margin.iter_mut().enumerate() {
            *m += predict_tree(&tree, &x[i]);
        }
        trees.push(tree);
    }
    let scales = vec![1.0; trees.len()];
    TreeEnsemble { trees, scales, offset: base, logistic: true }
}

fn fit_rusboost(p: &RusboostParams, seed: u64, x: &[Vec<f64>], y: &[f64], w: &[f64], d: usize) -> Result<(TreeEnsemble, Vec<[usize; 2]>)> {
    let n = x.len();
    let cols = to_columns(x, d);
    let wsum: f64 = w.iter().sum();
    let mut dist: Vec<f64> = w.iter().map(|v| v / wsum).collect();
    let params = GrowParams { max_depth: p.max_depth, min_leaf: p.min_leaf, max_features: None };
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    let mut counts = Vec::new();
    for round in 0..p.n_rounds {
        let mut rng = rng_for(seed, "rus-round", round as u64);
        let idx = balanced_subsample(y, derive(seed, "rus-sample", round as u64))?;
        let pos = idx.iter().filter(|&&i| y[i] == 1.0).count();
        counts.push([idx.len() - pos, pos]);
        let rows: Vec<(usize, usize)> = idx.iter().map(|&i| (i, 1)).collect();
        let mut tree = grow_tree(&cols, &gini_samples(&rows, y, &dist), Criterion::Gini, params, &mut rng);
        for node in tree.iter_mut().filter(|t| t.is_leaf()) {
            node.value = if node.value >= 0.5 { 1.0 } else { 0.0 };
        }
        let pred: Vec<f64> = (0..n).map(|i| predict_tree(&tree, &x[i])).collect();
        let err: f64 = (0..n).filter(|&i| pred[i] != y[i]).map(|i| dist[i]).sum();
        if err >= 0.5 {
            if trees.is_empty() {
                trees.push(tree);
                alphas.push(1.0);
            }
            break;
        }
        let err = err.max(1e-10);
        let alpha = p.learning_rate * 0.5 * ((1.0 - err) / err).ln();
        for i in 0..n {
            let sign = if pred[i] != y[i] { 1.0 } else { -1.0 };
            dist[i] *= (sign * alpha).exp();
        }
        let z: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|v| *v /= z);
        trees.push(tree);
        alphas.push(alpha);
        if err <= 1e-10 {
            break;
        }
    }
    let total: f64 = alphas.iter().sum();
    let scales = alphas.iter().map(|a| a / total).collect();
    Ok((TreeEnsemble { trees, scales, offset: 0.0, logistic: false }, counts))
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    fn check_width(&self, x: &[Vec<f64>]) -> Result<()> {
        match x.iter().find(|r| r.len() != self.n_features) {
            Some(r) => Err(Error::Model(format!("expected {} features, got {}", self.n_features, r.len()))),
            None => Ok(()),
        }
    }

    /// Output in the model's native space: margin for boosting, P(Risk) otherwise.
    pub fn raw_one(&self, x: &[f64]) -> f64 {
        match &self.fitted {
            Fitted::Trees(e) => e.raw(x),
            Fitted::Linear { coef, intercept } => {
                sigmoid(intercept + coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
            }
            Fitted::Knn { x: train, y, k } => knn_vote(train, y, *k, x),
        }
    }

    pub fn proba_one(&self, x: &[f64]) -> f64 {
        let r = self.raw_one(x);
        match &self.fitted {
            Fitted::Trees(e) if e.logistic => sigmoid(r),
            // averaged leaf frequencies can drift an ulp past 1
            _ => r.clamp(0.0, 1.0),
        }
    }

    pub fn predict_raw(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(x.iter().map(|r| self.raw_one(r)).collect())
    }

    /// P(Risk) per row.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(x.iter().map(|r| self.proba_one(r)).collect())
    }

    /// Encodes raw feature rows with the stored plan, then predicts.
    pub fn predict_proba_raw_features(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match &self.preprocess {
            Some(plan) => self.predict_proba(&crate::preprocess::apply_preprocessor(plan, rows)?),
            None => self.predict_proba(rows),
        }
    }

    pub fn ensemble(&self) -> Result<&TreeEnsemble> {
        match &self.fitted {
            Fitted::Trees(e) => Ok(e),
            _ => Err(Error::Model(format!("{} is not a tree model", self.family()))),
        }
    }

    pub fn tree_structure(&self) -> Result<&[Vec<TreeNode>]> {
        Ok(&self.ensemble()?.trees)
    }
}

fn knn_vote(train: &[Vec<f64>], y: &[f64], k: usize, x: &[f64]) -> f64 {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        .collect();
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
}
