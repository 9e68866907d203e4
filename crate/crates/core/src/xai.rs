//! Attribution engines: path-dependent TreeSHAP with interaction values,
//! LIME-style local surrogates, permutation importance (MDA) and impurity
//! importance (MDI), plus global rankings and dependence series.
//!
//! Everything operates on the model's input space. A [`ModelView`] maps input
//! columns back to source features so that one-hot columns (sex) are reported
//! as one feature.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureng::ColumnSpec;
use crate::models::{is_risk, OutputSpace, TrainedModel, TreeEnsemble, TreeNode};
use crate::preprocess::apply_preprocessor;
use crate::rng::{derive, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SHAP")]
    Shap,
    #[serde(rename = "LIME")]
    Lime,
    #[serde(rename = "MDI")]
    Mdi,
    #[serde(rename = "MDA")]
    Mda,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Shap, Method::Lime, Method::Mdi, Method::Mda];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Shap => "SHAP",
            Method::Lime => "LIME",
            Method::Mdi => "MDI",
            Method::Mda => "MDA",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Local explanation of one instance: `base + Σ values = output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub base: f64,
    pub output: OutputSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub score: f64,
}

/// Features in descending score order, ties broken by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub method: Method,
    pub entries: Vec<RankedFeature>,
}

impl ImportanceRanking {
    pub fn new(method: Method, scores: impl IntoIterator<Item = (String, f64)>) -> ImportanceRanking {
        let mut entries: Vec<RankedFeature> =
            scores.into_iter().map(|(feature, score)| RankedFeature { feature, score }).collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.feature.cmp(&b.feature)));
        ImportanceRanking { method, entries }
    }

    pub fn features(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.feature.clone()).collect()
    }

    pub fn top_k(&self, k: usize) -> Vec<String> {
        self.entries.iter().take(k).map(|e| e.feature.clone()).collect()
    }

    pub fn score(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.score)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["rank", "feature", "score", "method"])?;
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([(i + 1).to_string(), e.feature.clone(), e.score.to_string(), self.method.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-row (feature value, main-effect score) pairs for trend plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceSeries {
    pub feature: String,
    pub method: Method,
    pub points: Vec<(f64, f64)>,
}

impl DependenceSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record([self.feature.as_str(), "main_effect"])?;
        for (v, s) in &self.points {
            w.write_record([v.to_string(), s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Symmetric d×d SHAP interaction values of one instance; the diagonal
/// holds main effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub values: Vec<Vec<f64>>,
}

impl InteractionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn main_effects(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.values[i][i]).collect()
    }
}

/// A model together with the rows to explain, in its input space.
#[derive(Debug, Clone)]
pub struct ModelView<'a> {
    pub model: &'a TrainedModel,
    pub x: Vec<Vec<f64>>,
    /// Source feature of every input column.
    pub sources: Vec<String>,
    raw: Vec<Vec<f64>>,
    raw_names: Vec<String>,
}

impl<'a> ModelView<'a> {
    /// Encodes `rows` (feature-matrix layout) with the model's stored plan, if any.
    pub fn new(model: &'a TrainedModel, columns: &[ColumnSpec], rows: &[Vec<f64>]) -> Result<ModelView<'a>> {
        let raw_names: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
        let (x, sources) = match &model.preprocess {
            Some(plan) => (apply_preprocessor(plan, rows)?, plan.output_sources()),
            None => (rows.to_vec(), raw_names.clone()),
        };
        if sources.len() != model.n_features {
            return Err(Error::Xai(format!("model expects {} inputs, view has {}", model.n_features, sources.len())));
        }
        Ok(ModelView { model, x, sources, raw: rows.to_vec(), raw_names })
    }

    /// View over rows already in the model's input space.
    pub fn from_inputs(model: &'a TrainedModel, x: Vec<Vec<f64>>, names: Vec<String>) -> Result<ModelView<'a>> {
        if names.len() != model.n_features || x.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Xai(format!("model expects {} inputs", model.n_features)));
        }
        Ok(ModelView { model, raw: x.clone(), x, raw_names: names.clone(), sources: names })
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    /// Source features in first-appearance order.
    pub fn features(&self) -> Vec<String> {
        self.groups().into_iter().map(|(n, _)| n).collect()
    }

    fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, s) in self.sources.iter().enumerate() {
            match out.iter_mut().find(|(n, _)| n == s) {
                Some((_, v)) => v.push(j),
                None => out.push((s.clone(), vec![j])),
            }
        }
        out
    }

    fn raw_column(&self, feature: &str) -> Option<Vec<f64>> {
        let j = self.raw_names.iter().position(|n| n == feature)?;
        Some(self.raw.iter().map(|r| r[j]).collect())
    }

    /// Sums per-column values into per-feature values.
    fn grouped(&self, per_column: &[f64]) -> Vec<(String, f64)> {
        self.groups().into_iter().map(|(n, idx)| (n, idx.iter().map(|&j| per_column[j]).sum())).collect()
    }
}

// ---------------------------------------------------------------------------
// TreeSHAP

#[derive(Debug, Clone, Copy, Default)]
struct PathElem {
    feature: isize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend_path(path: &mut [PathElem], depth: usize, zero: f64, one: f64, feature: isize) {
    path[depth] = PathElem { feature, zero, one, weight: if depth == 0 { 1.0 } else { 0.0 } };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut [PathElem], depth: usize, idx: usize) {
    let PathElem { zero, one, .. } = path[idx];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in idx..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
}

/// Total permutation weight of the path with element `idx` removed.
fn unwound_path_sum(path: &[PathElem], depth: usize, idx: usize) -> f64 {
    let PathElem { zero, one, .. } = path[idx];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

/// Conditioning of one feature for interaction values.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Condition {
    None,
    /// Feature always present (follows x).
    On(usize),
    /// Feature always absent (averaged out).
    Off(usize),
}

struct TreeShap<'a> {
    nodes: &'a [TreeNode],
    x: &'a [f64],
    phi: &'a mut [f64],
    scale: f64,
    cond: Condition,
    buf: Vec<PathElem>,
}

fn child_fraction(nodes: &[TreeNode], parent: usize, child: usize) -> f64 {
    let c = nodes[parent].cover;
    if c > 0.0 {
        nodes[child].cover / c
    } else {
        0.5
    }
}

impl TreeShap<'_> {
    // `off` is where this call's path copy lives; `depth` its unique-path length.
    #[allow(clippy::too_many_arguments)]
    fn recurse(&mut self, node: usize, parent_off: usize, off: usize, depth: usize, zero: f64, one: f64, feature: isize, cond_frac: f64) {
        if cond_frac == 0.0 {
            return;
        }
        self.buf.copy_within(parent_off..parent_off + depth + 1, off);
        let cond_feature = match self.cond {
            Condition::On(f) | Condition::Off(f) => Some(f as isize),
            Condition::None => None,
        };
        if cond_feature != Some(feature) {
            extend_path(&mut self.buf[off..], depth, zero, one, feature);
        }
        let n = &self.nodes[node];
        let Some(split) = n.split else {
            let path = &self.buf[off..off + depth + 1];
            for i in 1..=depth {
                let w = unwound_path_sum(path, depth, i);
                let el = path[i];
                self.phi[el.feature as usize] += w * (el.one - el.zero) * cond_frac * n.value * self.scale;
            }
            return;
        };
        let (hot, cold) =
            if self.x[split.feature] <= split.threshold { (split.left, split.right) } else { (split.right, split.left) };
        let hot_zero = child_fraction(self.nodes, node, hot);
        let cold_zero = child_fraction(self.nodes, node, cold);
        let (mut in_zero, mut in_one) = (1.0, 1.0);
        let mut depth = depth as isize;
        let sf = split.feature as isize;
        if let Some(k) = (0..=depth as usize).find(|&k| self.buf[off + k].feature == sf) {
            in_zero = self.buf[off + k].zero;
            in_one = self.buf[off + k].one;
            unwind_path(&mut self.buf[off..], depth as usize, k);
            depth -= 1;
        }
        let (mut hot_frac, mut cold_frac) = (cond_frac, cond_frac);
        match self.cond {
            Condition::On(f) if f == split.feature => {
                cold_frac = 0.0;
                depth -= 1;
            }
            Condition::Off(f) if f == split.feature => {
                hot_frac *= hot_zero;
                cold_frac *= cold_zero;
                depth -= 1;
            }
            _ => {}
        }
        let child_depth = (depth + 1) as usize;
        let child_off = off + child_depth + 1;
        self.recurse(hot, off, child_off, child_depth, hot_zero * in_zero, in_one, sf, hot_frac);
        self.recurse(cold, off, child_off, child_depth, cold_zero * in_zero, 0.0, sf, cold_frac);
    }
}

fn tree_shap_into(nodes: &[TreeNode], x: &[f64], scale: f64, cond: Condition, phi: &mut [f64]) {
    let d = crate::models::depth(nodes) + 2;
    let mut t = TreeShap { nodes, x, phi, scale, cond, buf: vec![PathElem::default(); (d + 2) * (d + 3) / 2 + 2] };
    // the root call copies from an empty slot in front of its own region
    t.recurse(0, 0, 1, 0, 1.0, 1.0, -1, 1.0);
}

/// Cover-weighted mean leaf value.
fn tree_expectation(nodes: &[TreeNode], i: usize) -> f64 {
    match nodes[i].split {
        None => nodes[i].value,
        Some(s) => {
            let l = child_fraction(nodes, i, s.left);
            let r = child_fraction(nodes, i, s.right);
            l * tree_expectation(nodes, s.left) + r * tree_expectation(nodes, s.right)
        }
    }
}

/// Path-dependent conditional expectation with the features in `known` fixed to `x`.
fn tree_value(nodes: &[TreeNode], i: usize, x: &[f64], known: &dyn Fn(usize) -> bool) -> f64 {
    match nodes[i].split {
        None => nodes[i].value,
        Some(s) if known(s.feature) => {
            tree_value(nodes, if x[s.feature] <= s.threshold { s.left } else { s.right }, x, known)
        }
        Some(s) => {
            child_fraction(nodes, i, s.left) * tree_value(nodes, s.left, x, known)
                + child_fraction(nodes, i, s.right) * tree_value(nodes, s.right, x, known)
        }
    }
}

fn ensemble_value(e: &TreeEnsemble, x: &[f64], known: &dyn Fn(usize) -> bool) -> f64 {
    e.offset + e.trees.iter().zip(&e.scales).map(|(t, s)| s * tree_value(t, 0, x, known)).sum::<f64>()
}

/// Expected raw output over the training distribution encoded in node covers.
pub fn expected_value(e: &TreeEnsemble) -> f64 {
    e.offset + e.trees.iter().zip(&e.scales).map(|(t, s)| s * tree_expectation(t, 0)).sum::<f64>()
}

fn ensemble_shap(e: &TreeEnsemble, x: &[f64], d: usize, cond: Condition) -> Vec<f64> {
    let mut phi = vec![0.0; d];
    for (t, s) in e.trees.iter().zip(&e.scales) {
        tree_shap_into(t, x, *s, cond, &mut phi);
    }
    phi
}

fn check_row(m: &TrainedModel, x: &[f64]) -> Result<()> {
    if x.len() != m.n_features {
        return Err(Error::Xai(format!("expected {} features, got {}", m.n_features, x.len())));
    }
    Ok(())
}

fn shap_ensemble(m: &TrainedModel) -> Result<&TreeEnsemble> {
    m.ensemble().map_err(|_| Error::Xai(format!("TreeSHAP needs a tree model, got {}", m.family())))
}

/// Exact path-dependent Shapley values in the model's raw output space
/// (probability for forests and trees, log-odds for boosting).
pub fn tree_shap(m: &TrainedModel, x: &[f64]) -> Result<Attribution> {
    let e = shap_ensemble(m)?;
    check_row(m, x)?;
    Ok(Attribution { values: ensemble_shap(e, x, m.n_features, Condition::None), base: expected_value(e), output: m.output })
}

/// SHAP interaction values. Off-diagonal cells are half the difference of
/// the SHAP values with the other feature conditioned present and absent.
pub fn shap_interactions(m: &TrainedModel, x: &[f64]) -> Result<InteractionMatrix> {
    let e = shap_ensemble(m)?;
    check_row(m, x)?;
    let d = m.n_features;
    let phi = ensemble_shap(e, x, d, Condition::None);
    let used = used_features(e, d);
    let mut values = vec![vec![0.0; d]; d];
    for i in (0..d).filter(|&i| used[i]) {
        let on = ensemble_shap(e, x, d, Condition::On(i));
        let off = ensemble_shap(e, x, d, Condition::Off(i));
        let mut rest = 0.0;
        for j in (0..d).filter(|&j| j != i) {
            values[i][j] = (on[j] - off[j]) / 2.0;
            rest += values[i][j];
        }
        values[i][i] = phi[i] - rest;
    }
    Ok(InteractionMatrix { values })
}

fn used_features(e: &TreeEnsemble, d: usize) -> Vec<bool> {
    let mut used = vec![false; d];
    for n in e.trees.iter().flatten() {
        if let Some(s) = n.split {
            used[s.feature] = true;
        }
    }
    used
}

/// Diagonal of the interaction matrix without building it.
///
/// By symmetry and efficiency of the conditioned games, the off-diagonal row
/// sum of feature j is `(f(x) - v({j}) - v(N∖{j}) + v(∅)) / 2`.
pub fn shap_main_effects(m: &TrainedModel, x: &[f64]) -> Result<Vec<f64>> {
    let e = shap_ensemble(m)?;
    check_row(m, x)?;
    let d = m.n_features;
    let phi = ensemble_shap(e, x, d, Condition::None);
    let used = used_features(e, d);
    let fx = e.raw(x);
    let v0 = expected_value(e);
    Ok((0..d)
        .map(|j| {
            if !used[j] {
                return 0.0;
            }
            let only = ensemble_value(e, x, &|f| f == j);
            let others = ensemble_value(e, x, &|f| f != j);
            phi[j] - (fx - only - others + v0) / 2.0
        })
        .collect())
}

fn par_rows<T: Send>(x: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<T> + Sync) -> Result<Vec<T>> {
    x.par_iter().map(|r| f(r)).collect()
}

/// All TreeSHAP attributions of the view's rows, in row order.
pub fn shap_values(view: &ModelView) -> Result<Vec<Attribution>> {
    par_rows(&view.x, |r| tree_shap(view.model, r))
}

/// Mean absolute SHAP value per feature; one-hot columns are summed per row first.
pub fn shap_global_ranking(view: &ModelView) -> Result<ImportanceRanking> {
    let attributions = shap_values(view)?;
    Ok(ImportanceRanking::new(Method::Shap, mean_abs_grouped(view, attributions.iter().map(|a| a.values.as_slice()))))
}

fn mean_abs_grouped<'b>(view: &ModelView, rows: impl Iterator<Item = &'b [f64]>) -> Vec<(String, f64)> {
    let groups = view.groups();
    let mut sums = vec![0.0; groups.len()];
    let mut n = 0usize;
    for r in rows {
        n += 1;
        for (s, (_, idx)) in sums.iter_mut().zip(&groups) {
            *s += idx.iter().map(|&j| r[j]).sum::<f64>().abs();
        }
    }
    let n = n.max(1) as f64;
    groups.into_iter().zip(sums).map(|((name, _), s)| (name, s / n)).collect()
}

// ---------------------------------------------------------------------------
// LIME

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width in standardized units; `None` means 0.75·√d.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    /// Rows explained for a global ranking; `None` explains every row.
    pub max_rows: Option<usize>,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { n_samples: 5000, kernel_width: None, ridge: 1e-3, max_rows: None, seed: 0 }
    }
}

/// Weighted ridge surrogate around `x` for an arbitrary scoring function.
///
/// Perturbations are `x + scale ⊙ z` with `z ~ N(0, I)`; proximity weights are
/// `exp(-|z|² / width²)`. The returned values are surrogate slopes per unit of
/// `z`, i.e. per training standard deviation, and `base` is the surrogate
/// intercept.
pub fn lime_explain_fn(f: impl Fn(&[f64]) -> f64, x: &[f64], scale: &[f64], cfg: &LimeConfig, seed: u64) -> Result<Attribution> {
    let d = x.len();
    if cfg.n_samples < 10 * d.max(1) {
        return Err(Error::Xai(format!("LIME needs at least {} samples for {d} features", 10 * d)));
    }
    let width = cfg.kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    let mut rng = crate::rng::rng_from(seed);
    let mut zs = Vec::with_capacity(cfg.n_samples);
    let mut ys = Vec::with_capacity(cfg.n_samples);
    let mut ws = Vec::with_capacity(cfg.n_samples);
    let mut point = vec![0.0; d];
    for _ in 0..cfg.n_samples {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for j in 0..d {
            point[j] = x[j] + scale[j] * z[j];
        }
        ys.push(f(&point));
        ws.push((-z.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp());
        zs.push(z);
    }
    let (coef, intercept) = weighted_ridge(&zs, &ys, &ws, cfg.ridge);
    Ok(Attribution { values: coef, base: intercept, output: OutputSpace::Probability })
}

/// Ridge on weight-normalized data with an unpenalized intercept.
fn weighted_ridge(z: &[Vec<f64>], y: &[f64], w: &[f64], ridge: f64) -> (Vec<f64>, f64) {
    let d = z.first().map_or(0, Vec::len);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return (vec![0.0; d], 0.0);
    }
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let zbar: Vec<f64> = (0..d).map(|j| z.iter().zip(&w).map(|(r, w)| w * r[j]).sum()).collect();
    let ybar: f64 = y.iter().zip(&w).map(|(y, w)| w * y).sum();
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for ((r, &yi), &wi) in z.iter().zip(y).zip(&w) {
        for j in 0..d {
            let cj = wi * (r[j] - zbar[j]);
            b[j] += cj * (yi - ybar);
            for k in 0..=j {
                a[j][k] += cj * (r[k] - zbar[k]);
            }
        }
    }
    for j in 0..d {
        a[j][j] += ridge.max(1e-12);
        for k in 0..j {
            a[k][j] = a[j][k];
        }
    }
    let coef = solve_spd(a, b);
    let intercept = ybar - coef.iter().zip(&zbar).map(|(c, m)| c * m).sum::<f64>();
    (coef, intercept)
}

/// Cholesky solve of a symmetric positive definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for j in 0..n {
        let mut s = a[j][j];
        for k in 0..j {
            s -= a[j][k] * a[j][k];
        }
        let l = s.max(1e-300).sqrt();
        a[j][j] = l;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / l;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    b
}

fn column_scales(x: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    (0..d)
        .map(|j| {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// LIME surrogate of P(Risk) around `x`; perturbation scales are the view's
/// column standard deviations.
pub fn lime_explain(view: &ModelView, x: &[f64], cfg: &LimeConfig, seed: u64) -> Result<Attribution> {
    check_row(view.model, x)?;
    let scale = column_scales(&view.x, view.model.n_features);
    lime_explain_fn(|p| view.model.proba_one(p), x, &scale, cfg, seed)
}

fn lime_rows(view: &ModelView, cfg: &LimeConfig) -> Vec<usize> {
    let n = view.n_rows();
    match cfg.max_rows {
        Some(k) if k < n => {
            let mut rng = rng_for(cfg.seed, "lime-rows", 0);
            let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

fn lime_all(view: &ModelView, cfg: &LimeConfig, rows: &[usize]) -> Result<Vec<Attribution>> {
    let scale = column_scales(&view.x, view.model.n_features);
    rows.par_iter()
        .map(|&i| {
            lime_explain_fn(|p| view.model.proba_one(p), &view.x[i], &scale, cfg, derive(cfg.seed, "lime", i as u64))
        })
        .collect()
}

/// Mean absolute surrogate weight per feature over the explained rows.
pub fn lime_global_ranking(view: &ModelView, cfg: &LimeConfig) -> Result<ImportanceRanking> {
    let rows = lime_rows(view, cfg);
    let att = lime_all(view, cfg, &rows)?;
    Ok(ImportanceRanking::new(Method::Lime, mean_abs_grouped(view, att.iter().map(|a| a.values.as_slice()))))
}

// ---------------------------------------------------------------------------
// MDA and MDI

/// Permutation importance with per-repeat detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub ranking: ImportanceRanking,
    pub baseline_accuracy: f64,
    /// `per_repeat[g][r]`: accuracy drop of feature g in repeat r, in view feature order.
    pub per_repeat: Vec<Vec<f64>>,
}

fn accuracy(m: &TrainedModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let hits = x.iter().zip(y).filter(|(r, &t)| is_risk(m.proba_one(r)) == (t == 1.0)).count();
    hits as f64 / y.len() as f64
}

/// Mean decrease in accuracy when a feature's columns are shuffled jointly.
/// Negative scores are kept as they are.
pub fn permutation_importance(view: &ModelView, y: &[f64], repeats: usize, seed: u64) -> Result<PermutationImportance> {
    if view.n_rows() == 0 || repeats == 0 {
        return Err(Error::Xai("permutation importance needs rows and at least one repeat".into()));
    }
    if y.len() != view.n_rows() {
        return Err(Error::Xai(format!("{} labels for {} rows", y.len(), view.n_rows())));
    }
    let baseline = accuracy(view.model, &view.x, y);
    let groups = view.groups();
    let per_repeat: Vec<Vec<f64>> = groups
        .par_iter()
        .enumerate()
        .map(|(g, (_, cols))| {
            let mut rng = rng_for(seed, "mda", g as u64);
            let mut xs = view.x.clone();
            let mut perm: Vec<usize> = (0..xs.len()).collect();
            (0..repeats)
                .map(|_| {
                    perm.shuffle(&mut rng);
                    for (i, &p) in perm.iter().enumerate() {
                        for &j in cols {
                            xs[i][j] = view.x[p][j];
                        }
                    }
                    baseline - accuracy(view.model, &xs, y)
                })
                .collect()
        })
        .collect();
    let ranking = ImportanceRanking::new(
        Method::Mda,
        groups.into_iter().zip(&per_repeat).map(|((n, _), r)| (n, r.iter().sum::<f64>() / repeats as f64)),
    );
    Ok(PermutationImportance { ranking, baseline_accuracy: baseline, per_repeat })
}

/// Per-column mean decrease in impurity: each tree's cover-weighted decreases
/// are normalized to sum 1, averaged over trees, and renormalized.
pub fn impurity_importance_columns(m: &TrainedModel) -> Result<Vec<f64>> {
    let e = m.ensemble().map_err(|_| Error::Xai(format!("MDI needs a tree model, got {}", m.family())))?;
    let d = m.n_features;
    let mut total = vec![0.0; d];
    for t in &e.trees {
        let mut imp = vec![0.0; d];
        let root = t[0].cover;
        if root <= 0.0 {
            continue;
        }
        for n in t {
            if let Some(s) = n.split {
                let (l, r) = (&t[s.left], &t[s.right]);
                imp[s.feature] += (n.cover * n.impurity - l.cover * l.impurity - r.cover * r.impurity) / root;
            }
        }
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            for (a, v) in total.iter_mut().zip(&imp) {
                *a += v / sum;
            }
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in &mut total {
            *v /= sum;
        }
    }
    Ok(total)
}

pub fn impurity_importance(view: &ModelView) -> Result<ImportanceRanking> {
    let cols = impurity_importance_columns(view.model)?;
    Ok(ImportanceRanking::new(Method::Mdi, view.grouped(&cols)))
}

// ---------------------------------------------------------------------------
// Dependence

/// Per-row main effect of `feature`: the SHAP interaction diagonal (summed
/// over one-hot columns) or the LIME weight.
pub fn dependence_data(view: &ModelView, feature: &str, method: Method, lime: &LimeConfig) -> Result<DependenceSeries> {
    let groups = view.groups();
    let cols = groups
        .iter()
        .find(|(n, _)| n == feature)
        .map(|(_, c)| c.clone())
        .ok_or_else(|| Error::Xai(format!("unknown feature {feature}")))?;
    let values = view.raw_column(feature).ok_or_else(|| Error::Xai(format!("no raw values for {feature}")))?;
    let (rows, scores): (Vec<usize>, Vec<f64>) = match method {
        Method::Shap => {
            let main = par_rows(&view.x, |r| shap_main_effects(view.model, r))?;
            ((0..view.n_rows()).collect(), main.iter().map(|m| cols.iter().map(|&j| m[j]).sum()).collect())
        }
        Method::Lime => {
            let rows = lime_rows(view, lime);
            let att = lime_all(view, lime, &rows)?;
            let s = att.iter().map(|a| cols.iter().map(|&j| a.values[j]).sum()).collect();
            (rows, s)
        }
        other => return Err(Error::Xai(format!("no dependence series for {other}"))),
    };
    Ok(DependenceSeries { feature: feature.to_string(), method, points: rows.iter().map(|&i| values[i]).zip(scores).collect() })
}

/// Global rankings for every requested method.
pub fn all_rankings(
    view: &ModelView,
    y: &[f64],
    methods: &[Method],
    lime: &LimeConfig,
    mda_repeats: usize,
    seed: u64,
) -> Result<BTreeMap<Method, ImportanceRanking>> {
    let mut out = BTreeMap::new();
    for &m in methods {
        let r = match m {
            Method::Shap => shap_global_ranking(view)?,
            Method::Lime => lime_global_ranking(view, lime)?,
            Method::Mdi => impurity_importance(view)?,
            Method::Mda => permutation_importance(view, y, mda_repeats, seed)?.ranking,
        };
        out.insert(m, r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extend_then_unwind_restores_weights() {
        let mut p = vec![PathElem::default(); 4];
        extend_path(&mut p, 0, 1.0, 1.0, -1);
        extend_path(&mut p, 1, 0.3, 1.0, 0);
        let before: Vec<f64> = p[..2].iter().map(|e| e.weight).collect();
        extend_path(&mut p, 2, 0.6, 0.0, 1);
        unwind_path(&mut p, 2, 2);
        for (a, b) in before.iter().zip(&p[..2]) {
            assert!((a - b.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_breaks_ties_by_name() {
        let r = ImportanceRanking::new(Method::Mdi, [("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)]);
        assert_eq!(r.features(), ["c", "a", "b"]);
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        let z: Vec<Vec<f64>> = (0..20).map(|i| vec![f64::from(i), f64::from(i * i % 7)]).collect();
        let y: Vec<f64> = z.iter().map(|r| 1.5 + 2.0 * r[0] - 3.0 * r[1]).collect();
        let (c, b) = weighted_ridge(&z, &y, &[1.0; 20], 1e-12);
        assert!((c[0] - 2.0).abs() < 1e-6 && (c[1] + 3.0).abs() < 1e-6 && (b - 1.5).abs() < 1e-6);
    }
}
