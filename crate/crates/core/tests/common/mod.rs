#![allow(clippy::needless_range_loop)]
//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nutrisk::models::{Family, Fitted, Hyperparams, ModelSpec, OutputSpace, Split, TrainedModel, TreeEnsemble, TreeNode};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn leaf(value: f64, cover: f64) -> TreeNode {
    TreeNode { split: None, value, cover, n_samples: cover as usize, impurity: 0.0 }
}

pub fn ensemble_model(trees: Vec<Vec<TreeNode>>, d: usize, logistic: bool) -> TrainedModel {
    let n = trees.len();
    let family = if logistic { Family::Gbdt } else { Family::Forest };
    TrainedModel {
        spec: ModelSpec::new(Hyperparams::default_for(family), 0),
        n_features: d,
        fitted: Fitted::Trees(TreeEnsemble { trees, scales: vec![1.0; n], offset: 0.0, logistic }),
        output: if logistic { OutputSpace::LogOdds } else { OutputSpace::Probability },
        preprocess: None,
        round_class_counts: Vec::new(),
    }
}

/// Random pre-order tree over integer-valued features in 0..5.
pub fn random_tree(rng: &mut ChaCha8Rng, d: usize, max_depth: usize) -> Vec<TreeNode> {
    fn go(rng: &mut ChaCha8Rng, d: usize, left: usize, nodes: &mut Vec<TreeNode>) -> (usize, f64) {
        let id = nodes.len();
        if left == 0 || rng.random_bool(0.2) {
            let c = rng.random_range(1.0..10.0);
            nodes.push(leaf(rng.random_range(-2.0..2.0), c));
            return (id, c);
        }
        nodes.push(leaf(0.0, 0.0));
        let feature = rng.random_range(0..d);
        let threshold = f64::from(rng.random_range(0..4)) + 0.5;
        let (l, cl) = go(rng, d, left - 1, nodes);
        let (r, cr) = go(rng, d, left - 1, nodes);
        nodes[id] = TreeNode {
            split: Some(Split { feature, threshold, left: l, right: r }),
            value: 0.0,
            cover: cl + cr,
            n_samples: 0,
            impurity: 0.0,
        };
        (id, cl + cr)
    }
    let mut nodes = Vec::new();
    go(rng, d, max_depth, &mut nodes);
    nodes
}

pub fn random_ensemble(seed: u64, n_trees: usize, d: usize, max_depth: usize) -> TrainedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..n_trees).map(|_| random_tree(&mut rng, d, max_depth)).collect();
    let mut m = ensemble_model(trees, d, true);
    if let Fitted::Trees(e) = &mut m.fitted {
        e.scales = (0..n_trees).map(|_| rng.random_range(0.2..1.5)).collect();
        e.offset = rng.random_range(-1.0..1.0);
    }
    m
}

pub fn random_instances(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| f64::from(rng.random_range(0..5))).collect()).collect()
}

/// Path-dependent value function: features in the mask follow x, others
/// average over children by cover.
fn tree_value(nodes: &[TreeNode], i: usize, x: &[f64], mask: u32) -> f64 {
    match nodes[i].split {
        None => nodes[i].value,
        Some(s) if mask >> s.feature & 1 == 1 => {
            tree_value(nodes, if x[s.feature] <= s.threshold { s.left } else { s.right }, x, mask)
        }
        Some(s) => {
            let c = nodes[i].cover;
            (nodes[s.left].cover * tree_value(nodes, s.left, x, mask)
                + nodes[s.right].cover * tree_value(nodes, s.right, x, mask))
                / c
        }
    }
}

pub fn value(m: &TrainedModel, x: &[f64], mask: u32) -> f64 {
    let Fitted::Trees(e) = &m.fitted else { panic!("tree model expected") };
    e.offset + e.trees.iter().zip(&e.scales).map(|(t, s)| s * tree_value(t, 0, x, mask)).sum::<f64>()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Shapley values over all 2^d coalitions.
pub fn brute_shapley(m: &TrainedModel, x: &[f64]) -> Vec<f64> {
    let d = m.n_features;
    let v: Vec<f64> = (0..1u32 << d).map(|s| value(m, x, s)).collect();
    (0..d)
        .map(|j| {
            (0..1u32 << d)
                .filter(|s| s >> j & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    factorial(k) * factorial(d - k - 1) / factorial(d) * (v[(s | 1 << j) as usize] - v[s as usize])
                })
                .sum()
        })
        .collect()
}

/// Shapley interaction index for i != j; diagonal = φ_i minus the off-diagonal row sum.
pub fn brute_interactions(m: &TrainedModel, x: &[f64]) -> Vec<Vec<f64>> {
    let d = m.n_features;
    let v: Vec<f64> = (0..1u32 << d).map(|s| value(m, x, s)).collect();
    let phi = brute_shapley(m, x);
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            out[i][j] = (0..1u32 << d)
                .filter(|s| s >> i & 1 == 0 && s >> j & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    let w = factorial(k) * factorial(d - k - 2) / (2.0 * factorial(d - 1));
                    let g = |t: u32| v[t as usize];
                    w * (g(s | 1 << i | 1 << j) - g(s | 1 << i) - g(s | 1 << j) + g(s))
                })
                .sum();
        }
        out[i][i] = phi[i] - (0..d).filter(|&j| j != i).map(|j| out[i][j]).sum::<f64>();
    }
    out
}

/// Published agreement tables: per model, rows K = 1, 3, 5; columns in pair
/// order SHAP-LIME, SHAP-MDI, SHAP-MDA, LIME-MDI, LIME-MDA, MDI-MDA; cells
/// (exact, non_exact) with non_exact unused at K = 1.
pub type Table = [(&'static str, [[(usize, usize); 6]; 3]); 2];

pub const TABLE_WITH_BODY: Table = [
    (
        "XGBoost",
        [
            [(1, 0), (0, 0), (1, 0), (0, 0), (1, 0), (0, 0)],
            [(1, 2), (0, 2), (3, 3), (0, 1), (1, 2), (0, 2)],
            [(1, 3), (1, 5), (4, 4), (0, 3), (1, 3), (1, 4)],
        ],
    ),
    (
        "LightGBM",
        [
            [(0, 0), (1, 0), (1, 0), (0, 0), (0, 0), (1, 0)],
            [(0, 2), (1, 1), (1, 2), (0, 1), (0, 2), (1, 2)],
            [(0, 3), (2, 3), (1, 4), (0, 2), (0, 2), (1, 3)],
        ],
    ),
];

pub const TABLE_WITHOUT_BODY: Table = [
    (
        "XGBoost",
        [
            [(0, 0), (0, 0), (1, 0), (1, 0), (0, 0), (0, 0)],
            [(0, 1), (0, 2), (1, 3), (2, 2), (0, 1), (0, 2)],
            [(0, 4), (1, 3), (3, 5), (2, 4), (0, 4), (1, 3)],
        ],
    ),
    (
        "LightGBM",
        [
            [(0, 0), (1, 0), (1, 0), (0, 0), (0, 0), (1, 0)],
            [(0, 2), (1, 1), (2, 2), (0, 2), (0, 3), (2, 2)],
            [(0, 4), (1, 4), (3, 5), (1, 4), (0, 4), (3, 4)],
        ],
    ),
];

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Cell-by-cell mismatches between computed matrices and a published table.
pub fn table_mismatches(matrices: &[nutrisk::consistency::AgreementMatrix], table: &Table) -> Vec<String> {
    let mut bad = Vec::new();
    for (model, rows) in table {
        let Some(m) = matrices.iter().find(|m| m.model == *model) else {
            bad.push(format!("{model} missing"));
            continue;
        };
        for (ki, k) in [1usize, 3, 5].into_iter().enumerate() {
            for (p, &(a, b)) in m.pairs.iter().enumerate() {
                let c = m.cell(a, b, k).unwrap();
                let (e, n) = rows[ki][p];
                let want_n = (k > 1).then_some(n);
                if c.exact != e || c.non_exact != want_n {
                    bad.push(format!("{model} {a}-{b} K={k}: got ({}, {:?}), published ({e}, {want_n:?})", c.exact, c.non_exact));
                }
            }
        }
    }
    bad
}

/// Weeks per subject in the two dataset variants (42 and 27 subjects).
pub const LOSO_WEEKS_ALL: [(u32, usize); 42] = [
    (1, 35), (2, 52), (3, 35), (4, 22), (5, 22), (6, 22), (7, 74), (8, 18), (9, 10), (10, 22), (11, 79), (12, 14),
    (13, 79), (14, 79), (15, 22), (16, 30), (17, 57), (18, 57), (19, 57), (20, 30), (21, 57), (22, 9), (23, 57),
    (24, 57), (25, 4), (26, 57), (27, 57), (28, 30), (29, 40), (30, 57), (31, 30), (32, 17), (33, 44), (34, 44),
    (35, 44), (36, 17), (37, 27), (38, 27), (39, 27), (40, 27), (41, 27), (42, 27),
];

pub const LOSO_WEEKS_BODY: [(u32, usize); 27] = [
    (1, 35), (3, 35), (4, 22), (5, 22), (8, 18), (9, 10), (10, 22), (14, 79), (11, 57), (16, 30), (17, 57), (18, 57),
    (19, 57), (21, 57), (23, 57), (26, 57), (30, 57), (32, 17), (24, 44), (33, 44), (34, 44), (35, 44), (37, 27),
    (39, 27), (40, 27), (41, 27), (42, 27),
];

/// Two numeric features; the label follows the first with some noise.
pub fn subject_matrix(weeks: &[(u32, usize)], seed: u64) -> nutrisk::featureng::FeatureMatrix {
    use nutrisk::domain::{Label, SubjectId};
    use nutrisk::featureng::{ColumnKind, ColumnSpec, FeatureGroup};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col = |n: &str| ColumnSpec { name: n.into(), kind: ColumnKind::Numeric, group: FeatureGroup::Clinical };
    let mut fm = nutrisk::featureng::FeatureMatrix {
        columns: vec![col("a"), col("b")],
        rows: Vec::new(),
        labels: Vec::new(),
        subjects: Vec::new(),
        periods: Vec::new(),
        weeks: Vec::new(),
    };
    for &(s, n) in weeks {
        let level: f64 = rng.random_range(-1.5..1.5);
        for w in 0..n {
            let a = level + rng.random_range(-0.5..0.5);
            let b: f64 = rng.random_range(-1.0..1.0);
            fm.rows.push(vec![a, b]);
            fm.labels.push(if a + 0.3 * b > 0.6 { Label::Risk } else { Label::Normal });
            fm.subjects.push(SubjectId::new(format!("S{s:02}")));
            fm.periods.push("P1".into());
            fm.weeks.push(w as u32);
        }
    }
    fm
}

/// Plain Newton-Raphson for unpenalized logistic regression with intercept.
pub fn newton_logistic(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len() + 1;
    let design: Vec<Vec<f64>> = x.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let mut b = vec![0.0; d];
    for _ in 0..100 {
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        for (r, &yi) in design.iter().zip(y) {
            let p = 1.0 / (1.0 + (-r.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>()).exp());
            for j in 0..d {
                g[j] += (p - yi) * r[j];
                for k in 0..d {
                    h[j][k] += p * (1.0 - p) * r[j] * r[k];
                }
            }
        }
        // Gaussian elimination for h * step = g
        let mut a: Vec<Vec<f64>> = h.iter().zip(&g).map(|(row, gi)| row.iter().copied().chain([*gi]).collect()).collect();
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let step: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
        for j in 0..d {
            b[j] -= step[j];
        }
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    b
}

pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive permutation p-value of the U statistic with midranks.
pub fn brute_force_p(x: &[f64], y: &[f64], alt: nutrisk::stats::Alternative) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let u_of = |idx: &[usize]| -> f64 {
        // U = #pairs (a in X, b in Y) with a > b, plus half the ties
        let mut u = 0.0;
        for &i in idx {
            for j in (0..n).filter(|j| !idx.contains(j)) {
                u += if pooled[i] > pooled[j] { 1.0 } else if pooled[i] == pooled[j] { 0.5 } else { 0.0 };
            }
        }
        u
    };
    let obs: Vec<usize> = (0..x.len()).collect();
    let u0 = u_of(&obs);
    let mu = (x.len() * y.len()) as f64 / 2.0;
    let all = combinations(n, x.len());
    let hits = all
        .iter()
        .filter(|c| {
            let u = u_of(c);
            match alt {
                nutrisk::stats::Alternative::TwoSided => (u - mu).abs() >= (u0 - mu).abs() - 1e-9,
                nutrisk::stats::Alternative::Less => u <= u0 + 1e-9,
                nutrisk::stats::Alternative::Greater => u >= u0 - 1e-9,
            }
        })
        .count();
    hits as f64 / all.len() as f64
}
