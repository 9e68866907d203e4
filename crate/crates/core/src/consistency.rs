//! Top-K agreement between feature rankings of different attribution methods.
//!
//! Exact agreement counts positions holding the same feature; non-exact
//! agreement is the size of the intersection of the two top-K sets, exact
//! matches included.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xai::{ImportanceRanking, Method};

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

/// An ordered feature list, either a full ranking or a published top-K excerpt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingList {
    pub method: Method,
    pub features: Vec<String>,
    /// True when the list is only the head of a longer ranking, so feature
    /// sets of different methods may legitimately differ.
    #[serde(default)]
    pub truncated: bool,
}

impl From<&ImportanceRanking> for RankingList {
    fn from(r: &ImportanceRanking) -> Self {
        RankingList { method: r.method, features: r.features(), truncated: false }
    }
}

/// Rankings of one model, as read from or written to JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRankings {
    pub model: String,
    pub rankings: Vec<RankingList>,
}

fn check_list(l: &RankingList, k: usize) -> Result<()> {
    if k == 0 || k > l.features.len() {
        return Err(Error::Consistency(format!("K = {k} out of range for {} ranking of {} features", l.method, l.features.len())));
    }
    let unique: BTreeSet<&String> = l.features.iter().collect();
    if unique.len() != l.features.len() {
        return Err(Error::Consistency(format!("{} ranking repeats a feature", l.method)));
    }
    Ok(())
}

/// `(exact, non_exact)` agreement of the top `k` entries.
pub fn topk_agreement_lists(a: &RankingList, b: &RankingList, k: usize) -> Result<(usize, usize)> {
    check_list(a, k)?;
    check_list(b, k)?;
    if !a.truncated && !b.truncated {
        let sa: BTreeSet<&String> = a.features.iter().collect();
        let sb: BTreeSet<&String> = b.features.iter().collect();
        if sa != sb {
            return Err(Error::Consistency(format!("{} and {} rank different feature sets", a.method, b.method)));
        }
    }
    let (ta, tb) = (&a.features[..k], &b.features[..k]);
    let exact = ta.iter().zip(tb).filter(|(x, y)| x == y).count();
    let non_exact = ta.iter().filter(|f| tb.contains(f)).count();
    Ok((exact, non_exact))
}

pub fn topk_agreement(a: &ImportanceRanking, b: &ImportanceRanking, k: usize) -> Result<(usize, usize)> {
    topk_agreement_lists(&a.into(), &b.into(), k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub model: String,
    pub method_a: Method,
    pub method_b: Method,
    pub k: usize,
    pub exact: usize,
    /// Not reported for K = 1, where it carries no extra information.
    pub non_exact: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub model: String,
    pub ks: Vec<usize>,
    /// Method pairs in table order, e.g. SHAP-LIME, SHAP-MDI, ..., MDI-MDA.
    pub pairs: Vec<(Method, Method)>,
    /// Pair-major: `cells[p * ks.len() + i]` is pair p at `ks[i]`.
    pub cells: Vec<AgreementCell>,
}

impl AgreementMatrix {
    pub fn cell(&self, a: Method, b: Method, k: usize) -> Option<&AgreementCell> {
        self.cells
            .iter()
            .find(|c| c.k == k && ((c.method_a, c.method_b) == (a, b) || (c.method_a, c.method_b) == (b, a)))
    }
}

/// All method pairs at every K. Methods are ordered SHAP, LIME, MDI, MDA.
pub fn agreement_matrix(model: &str, rankings: &[RankingList], ks: &[usize]) -> Result<AgreementMatrix> {
    let mut lists: Vec<&RankingList> = rankings.iter().collect();
    lists.sort_by_key(|l| l.method);
    if lists.windows(2).any(|w| w[0].method == w[1].method) {
        return Err(Error::Consistency(format!("{model}: a method appears twice")));
    }
    if lists.len() < 2 {
        return Err(Error::Consistency(format!("{model}: agreement needs at least 2 methods, got {}", lists.len())));
    }
    let mut pairs = Vec::new();
    let mut cells = Vec::new();
    for i in 0..lists.len() {
        for j in i + 1..lists.len() {
            let (a, b) = (lists[i], lists[j]);
            pairs.push((a.method, b.method));
            for &k in ks {
                let (exact, non_exact) = topk_agreement_lists(a, b, k)?;
                cells.push(AgreementCell {
                    model: model.to_string(),
                    method_a: a.method,
                    method_b: b.method,
                    k,
                    exact,
                    non_exact: (k > 1).then_some(non_exact),
                });
            }
        }
    }
    Ok(AgreementMatrix { model: model.to_string(), ks: ks.to_vec(), pairs, cells })
}

/// Writes the matrices in table layout: one row per (model, K), one column
/// per method pair; cells read `exact` for K = 1 and `exact/non_exact` otherwise.
pub fn write_matrix_csv<W: Write>(matrices: &[AgreementMatrix], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = matrices.first() else {
        return Ok(());
    };
    let mut header = vec!["model".to_string(), "K".to_string()];
    header.extend(first.pairs.iter().map(|(a, b)| format!("{a}-{b}")));
    w.write_record(&header)?;
    for m in matrices {
        if m.pairs != first.pairs {
            return Err(Error::Consistency(format!("{} uses a different method set than {}", m.model, first.model)));
        }
        for &k in &m.ks {
            let mut row = vec![m.model.clone(), k.to_string()];
            for &(a, b) in &m.pairs {
                let c = m.cell(a, b, k).expect("complete grid");
                row.push(match c.non_exact {
                    Some(n) => format!("{}/{n}", c.exact),
                    None => c.exact.to_string(),
                });
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::Consistency(format!("writing agreement CSV: {e}")))
}

pub fn matrix_csv_string(matrices: &[AgreementMatrix]) -> Result<String> {
    let mut buf = Vec::new();
    write_matrix_csv(matrices, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Derived aggregates over a set of matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    /// Comparisons with K > 1.
    pub comparisons: usize,
    /// Share of those with at least 2 non-exact matches.
    pub share_non_exact_at_least_2: f64,
    pub mean_exact_by_k: BTreeMap<usize, f64>,
    pub mean_non_exact_by_k: BTreeMap<usize, f64>,
}

pub fn summarize(matrices: &[AgreementMatrix]) -> AgreementSummary {
    let cells: Vec<&AgreementCell> = matrices.iter().flat_map(|m| &m.cells).collect();
    let multi: Vec<&&AgreementCell> = cells.iter().filter(|c| c.k > 1).collect();
    let hits = multi.iter().filter(|c| c.non_exact.unwrap_or(0) >= 2).count();
    let mut exact: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut non_exact: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for c in &cells {
        let e = exact.entry(c.k).or_default();
        e.0 += c.exact as f64;
        e.1 += 1;
        if let Some(n) = c.non_exact {
            let e = non_exact.entry(c.k).or_default();
            e.0 += n as f64;
            e.1 += 1;
        }
    }
    let mean = |m: BTreeMap<usize, (f64, usize)>| m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    AgreementSummary {
        comparisons: multi.len(),
        share_non_exact_at_least_2: if multi.is_empty() { 0.0 } else { hits as f64 / multi.len() as f64 },
        mean_exact_by_k: mean(exact),
        mean_non_exact_by_k: mean(non_exact),
    }
}

/// Reads a JSON array of [`ModelRankings`].
pub fn read_rankings(path: &Path) -> Result<Vec<ModelRankings>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: Vec<ModelRankings> = serde_json::from_str(&text)
        .map_err(|e| Error::Consistency(format!("{}: invalid rankings file: {e}", path.display())))?;
    if parsed.is_empty() {
        return Err(Error::Consistency(format!("{}: no models", path.display())));
    }
    Ok(parsed)
}

/// Agreement matrices for every model in a rankings file.
pub fn agree_file(path: &Path, ks: &[usize]) -> Result<Vec<AgreementMatrix>> {
    read_rankings(path)?.iter().map(|m| agreement_matrix(&m.model, &m.rankings, ks)).collect()
}
