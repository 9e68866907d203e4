//! Train-fitted encoding and standardization, plus class-imbalance regimes.
//!
//! Numeric columns are z-scored with the population standard deviation of the
//! training rows; a training column with zero spread is flagged constant and
//! maps to 0. Boolean columns pass through as 0/1. Categorical columns expand
//! to one indicator per category seen in training.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureng::{ColumnKind, ColumnSpec};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    Numeric { mean: f64, std: f64, constant: bool },
    Boolean,
    OneHot { categories: Vec<String>, vocabulary: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanColumn {
    pub name: String,
    pub transform: ColumnTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub columns: Vec<PlanColumn>,
    /// Always "population": standard deviations divide by n.
    pub std_convention: String,
}

impl PreprocessPlan {
    /// Names of the encoded columns, one-hot columns as `name=category`.
    pub fn output_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            match &c.transform {
                ColumnTransform::OneHot { categories, vocabulary } => {
                    out.extend(vocabulary.iter().map(|&v| format!("{}={}", c.name, categories[v])));
                }
                _ => out.push(c.name.clone()),
            }
        }
        out
    }

    /// Source feature name of every encoded column.
    pub fn output_sources(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            let width = match &c.transform {
                ColumnTransform::OneHot { vocabulary, .. } => vocabulary.len(),
                _ => 1,
            };
            out.extend(std::iter::repeat_n(c.name.clone(), width));
        }
        out
    }

    pub fn n_outputs(&self) -> usize {
        self.output_sources().len()
    }
}

/// Fits the plan on training rows only.
pub fn fit_preprocessor(columns: &[ColumnSpec], train: &[Vec<f64>]) -> Result<PreprocessPlan> {
    if train.len() < 2 {
        return Err(Error::InvalidInput("preprocessing needs at least 2 training rows".into()));
    }
    check_width(train, columns.len())?;
    let n = train.len() as f64;
    let mut out = Vec::with_capacity(columns.len());
    for (j, spec) in columns.iter().enumerate() {
        let transform = match &spec.kind {
            ColumnKind::Numeric => {
                let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                let constant = std <= 1e-12 * mean.abs().max(1.0);
                if constant {
                    log::warn!("column {} is constant on the training rows; encoded as 0", spec.name);
                }
                ColumnTransform::Numeric { mean, std, constant }
            }
            ColumnKind::Boolean => ColumnTransform::Boolean,
            ColumnKind::Categorical(categories) => {
                let mut vocabulary: Vec<usize> = train.iter().map(|r| r[j] as usize).collect();
                vocabulary.sort_unstable();
                vocabulary.dedup();
                if let Some(&bad) = vocabulary.iter().find(|&&v| v >= categories.len()) {
                    return Err(Error::InvalidInput(format!("column {}: category index {bad} out of range", spec.name)));
                }
                ColumnTransform::OneHot { categories: categories.clone(), vocabulary }
            }
        };
        out.push(PlanColumn { name: spec.name.clone(), transform });
    }
    Ok(PreprocessPlan { columns: out, std_convention: "population".into() })
}

fn check_width(rows: &[Vec<f64>], width: usize) -> Result<()> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::InvalidInput(format!("row {i} has {} columns, expected {width}", r.len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(())
}

pub fn apply_preprocessor(plan: &PreprocessPlan, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_width(rows, plan.columns.len())?;
    let width = plan.n_outputs();
    rows.iter()
        .map(|r| {
            let mut out = Vec::with_capacity(width);
            for (c, &v) in plan.columns.iter().zip(r) {
                match &c.transform {
                    ColumnTransform::Numeric { constant: true, .. } => out.push(0.0),
                    ColumnTransform::Numeric { mean, std, .. } => out.push((v - mean) / std),
                    ColumnTransform::Boolean => out.push(if v != 0.0 { 1.0 } else { 0.0 }),
                    ColumnTransform::OneHot { categories, vocabulary } => {
                        let idx = v as usize;
                        if !vocabulary.contains(&idx) {
                            let label = categories.get(idx).map_or_else(|| v.to_string(), Clone::clone);
                            return Err(Error::InvalidInput(format!(
                                "column {}: category {label} not seen in training",
                                c.name
                            )));
                        }
                        out.extend(vocabulary.iter().map(|&k| if k == idx { 1.0 } else { 0.0 }));
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    #[default]
    None,
    Smote,
    ClassWeights,
    BalancedSubsample,
    RandomUndersample,
}

impl ResampleMode {
    pub const ALL: [ResampleMode; 5] = [
        ResampleMode::None,
        ResampleMode::Smote,
        ResampleMode::ClassWeights,
        ResampleMode::BalancedSubsample,
        ResampleMode::RandomUndersample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResampleMode::None => "none",
            ResampleMode::Smote => "smote",
            ResampleMode::ClassWeights => "class_weights",
            ResampleMode::BalancedSubsample => "balanced_subsample",
            ResampleMode::RandomUndersample => "random_undersample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub mode: ResampleMode,
    pub smote_k: usize,
    /// Per-class weights `[normal, risk]`; `None` means inverse frequency.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        ResamplePlan { mode: ResampleMode::None, smote_k: 5, class_weights: None }
    }
}

fn class_indices(y: &[f64]) -> Result<[Vec<usize>; 2]> {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &v) in y.iter().enumerate() {
        match v {
            0.0 => out[0].push(i),
            1.0 => out[1].push(i),
            _ => return Err(Error::InvalidInput(format!("label {v} at row {i} is not 0 or 1"))),
        }
    }
    Ok(out)
}

/// Inverse-frequency weights normalized to mean 1 over the rows, so that
/// the weights of all rows sum to n.
pub fn class_weights(y: &[f64]) -> Result<[f64; 2]> {
    let idx = class_indices(y)?;
    if idx.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("class weights need both classes".into()));
    }
    let n = y.len() as f64;
    Ok([n / (2.0 * idx[0].len() as f64), n / (2.0 * idx[1].len() as f64)])
}

pub fn row_weights(y: &[f64], weights: [f64; 2]) -> Vec<f64> {
    y.iter().map(|&v| weights[usize::from(v == 1.0)]).collect()
}

/// SMOTE oversampling of the minority class up to the majority count.
///
/// The original rows come first, followed by `majority - minority` synthetic
/// rows. `k` is clamped to `minority - 1`; fewer than 2 minority rows is an error.
pub fn smote_oversample(x: &[Vec<f64>], y: &[f64], k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let idx = class_indices(y)?;
    let (minority, label) = if idx[1].len() <= idx[0].len() { (&idx[1], 1.0) } else { (&idx[0], 0.0) };
    let need = idx[0].len().abs_diff(idx[1].len());
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    if need == 0 {
        return Ok((xs, ys));
    }
    if minority.len() < 2 || k == 0 {
        return Err(Error::InvalidInput(format!(
            "SMOTE needs more minority rows than neighbours (minority {}, k {k})",
            minority.len()
        )));
    }
    let k = k.min(minority.len() - 1);
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (dist2(&x[i], &x[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let mut rng = rng_from(seed);
    for s in 0..need {
        // cycle through minority rows so each one seeds synthetic points evenly
        let a = s % minority.len();
        let base = &x[minority[a]];
        let nb = &x[neighbours[a][rng.random_range(0..k)]];
        let lambda: f64 = rng.random();
        xs.push(base.iter().zip(nb).map(|(u, v)| u + lambda * (v - u)).collect());
        ys.push(label);
    }
    Ok((xs, ys))
}

/// Equal-size draw without replacement from each class, sized to the minority.
/// Returned indices are sorted.
pub fn balanced_subsample(y: &[f64], seed: u64) -> Result<Vec<usize>> {
    let idx = class_indices(y)?;
    let m = idx[0].len().min(idx[1].len());
    if m == 0 {
        return Err(Error::InvalidInput("balanced subsample needs both classes".into()));
    }
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(2 * m);
    for class in idx {
        out.extend(class.choose_multiple(&mut rng, m).copied());
    }
    out.sort_unstable();
    Ok(out)
}
