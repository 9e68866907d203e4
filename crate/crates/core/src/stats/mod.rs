//! Hypothesis tests for comparing pipelines: normality, variance
//! homogeneity, one-way ANOVA with Tukey HSD, Welch's t and the
//! Wilcoxon rank-sum test.

mod range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

pub use range::{ptukey, qtukey};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub df: Vec<f64>,
    pub significant: bool,
    /// Human-readable record of intermediate decisions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trail: Vec<String>,
}

impl TestResult {
    fn new(test: &str, statistic: f64, p_value: f64, df: Vec<f64>) -> TestResult {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult { test: test.into(), statistic, p_value, df, significant: p_value < ALPHA, trail: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// x tends to be smaller than y.
    Less,
    Greater,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite observation".into()));
    }
    Ok(())
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

/// Shapiro-Wilk W with Royston's (1995) approximation for coefficients and p-value.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Stats(format!("Shapiro-Wilk needs 3 <= n <= 5000, got {n}")));
    }
    check_finite(x)?;
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    if range <= 0.0 {
        return Err(Error::Stats("Shapiro-Wilk on a constant sample".into()));
    }
    let nn2 = n / 2;
    let an = n as f64;
    let norm = Normal::standard();
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let m: Vec<f64> = (0..nn2).map(|i| norm.inverse_cdf((i as f64 + 1.0 - 0.375) / (an + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0].powi(2) - 2.0 * m[1].powi(2)) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0].powi(2)) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..nn2 {
            a[i] = -m[i] / fac;
        }
    }
    let mu = mean(&s);
    let ssq: f64 = s.iter().map(|v| ((v - mu) / range).powi(2)).sum();
    let num: f64 = (0..nn2).map(|i| a[i] * (s[n - 1 - i] - s[i]) / range).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let w1 = (1.0 - w).ln();
        let (y, m, sd) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], an);
            if w1 >= gamma {
                return Ok(TestResult::new("shapiro_wilk", w, 1e-99, vec![an]));
            }
            let y = -(gamma - w1).ln();
            (y, poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an), poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp())
        } else {
            let xx = an.ln();
            (w1, poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], xx), poly(&[-0.4803, -0.082676, 0.0030302], xx).exp())
        };
        norm.sf((y - m) / sd)
    };
    Ok(TestResult::new("shapiro_wilk", w, p, vec![an]))
}

fn check_groups(groups: &[&[f64]]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Stats("need at least 2 groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Stats(format!("every group needs n >= 2, found n = {}", g.len())));
    }
    groups.iter().try_for_each(|g| check_finite(g))
}

/// Bartlett's test for equal variances; χ² with k - 1 degrees of freedom.
pub fn bartlett(groups: &[&[f64]]) -> Result<TestResult> {
    check_groups(groups)?;
    let k = groups.len() as f64;
    let ntot: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let vars: Vec<f64> = groups.iter().map(|g| var(g)).collect();
    if vars.iter().any(|v| *v <= 0.0) {
        return Err(Error::Stats("Bartlett's test with a zero-variance group".into()));
    }
    let pooled = groups.iter().zip(&vars).map(|(g, v)| (g.len() as f64 - 1.0) * v).sum::<f64>() / (ntot - k);
    let num = (ntot - k) * pooled.ln() - groups.iter().zip(&vars).map(|(g, v)| (g.len() as f64 - 1.0) * v.ln()).sum::<f64>();
    let corr = 1.0
        + (groups.iter().map(|g| 1.0 / (g.len() as f64 - 1.0)).sum::<f64>() - 1.0 / (ntot - k)) / (3.0 * (k - 1.0));
    let t = (num / corr).max(0.0);
    let chi = ChiSquared::new(k - 1.0).expect("positive degrees of freedom");
    Ok(TestResult::new("bartlett", t, chi.sf(t), vec![k - 1.0]))
}

struct Anova {
    f: f64,
    df_between: f64,
    df_within: f64,
    ms_within: f64,
}

fn anova_parts(groups: &[&[f64]]) -> Anova {
    let k = groups.len() as f64;
    let ntot: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / ntot;
    let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ssw: f64 = groups.iter().map(|g| {
        let m = mean(g);
        g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    }).sum();
    let (dfb, dfw) = (k - 1.0, ntot - k);
    let msw = ssw / dfw;
    let f = if ssb == 0.0 {
        0.0
    } else if msw == 0.0 {
        f64::INFINITY
    } else {
        (ssb / dfb) / msw
    };
    Anova { f, df_between: dfb, df_within: dfw, ms_within: msw }
}

/// One-way ANOVA F test.
pub fn anova_oneway(groups: &[&[f64]]) -> Result<TestResult> {
    check_groups(groups)?;
    let a = anova_parts(groups);
    let p = if a.f == 0.0 {
        1.0
    } else if a.f.is_infinite() {
        0.0
    } else {
        FisherSnedecor::new(a.df_between, a.df_within).expect("positive degrees of freedom").sf(a.f)
    };
    Ok(TestResult::new("anova_oneway", a.f, p, vec![a.df_between, a.df_within]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyComparison {
    pub group_a: usize,
    pub group_b: usize,
    /// mean(a) - mean(b)
    pub mean_diff: f64,
    /// Studentized range statistic, p-value from its distribution.
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyHsd {
    pub alpha: f64,
    pub critical_q: f64,
    pub comparisons: Vec<TukeyComparison>,
}

/// Tukey's HSD (Tukey-Kramer for unequal sizes) over all group pairs.
pub fn tukey_hsd(groups: &[&[f64]], alpha: f64) -> Result<TukeyHsd> {
    check_groups(groups)?;
    let a = anova_parts(groups);
    let k = groups.len();
    let critical_q = qtukey(1.0 - alpha, k, a.df_within);
    let mut comparisons = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = mean(groups[i]) - mean(groups[j]);
            let se = (a.ms_within / 2.0 * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let (q, p) = if se == 0.0 {
                if diff == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) }
            } else {
                let q = diff.abs() / se;
                (q, 1.0 - ptukey(q, k, a.df_within))
            };
            let mut result = TestResult::new("tukey_hsd", q, p, vec![k as f64, a.df_within]);
            result.significant = q > critical_q;
            comparisons.push(TukeyComparison { group_a: i, group_b: j, mean_diff: diff, result });
        }
    }
    Ok(TukeyHsd { alpha, critical_q, comparisons })
}

/// Welch's unequal-variance t test, two-sided.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Stats("Welch's t needs n >= 2 in both samples".into()));
    }
    check_finite(x)?;
    check_finite(y)?;
    let (vx, vy) = (var(x) / x.len() as f64, var(y) / y.len() as f64);
    let diff = mean(x) - mean(y);
    let se2 = vx + vy;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            TestResult::new("welch_t", 0.0, 1.0, vec![f64::NAN])
        } else {
            TestResult::new("welch_t", diff.signum() * f64::INFINITY, 0.0, vec![f64::NAN])
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (x.len() as f64 - 1.0) + vy * vy / (y.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    Ok(TestResult::new("welch_t", t, 2.0 * dist.sf(t.abs()), vec![df]))
}

/// Midranks of the pooled sample (1-based).
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Largest pooled size for which the rank-sum test enumerates the exact null.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Wilcoxon rank-sum (Mann-Whitney) test. The statistic is U for `x`.
///
/// Exact permutation distribution over midranks when n_x + n_y <= 20,
/// normal approximation with tie and continuity corrections otherwise.
pub fn wilcoxon_ranksum(x: &[f64], y: &[f64], alt: Alternative) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Stats("rank-sum test needs both samples non-empty".into()));
    }
    check_finite(x)?;
    check_finite(y)?;
    let (nx, ny) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let rx: f64 = ranks[..nx].iter().sum();
    let u = rx - (nx * (nx + 1)) as f64 / 2.0;
    let n = (nx + ny) as f64;
    let mu = (nx * ny) as f64 / 2.0;
    let (p, method) = if nx + ny <= WILCOXON_EXACT_MAX {
        (exact_ranksum_p(&ranks, nx, alt), "exact")
    } else {
        let mut ties = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
            ties += (j * j * j - j) as f64;
            i += j;
        }
        let sd = ((nx * ny) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))).sqrt();
        let p = if sd == 0.0 {
            1.0
        } else {
            let norm = Normal::standard();
            let u_other = (nx * ny) as f64 - u;
            match alt {
                Alternative::TwoSided => (2.0 * norm.sf((u.max(u_other) - mu - 0.5) / sd)).min(1.0),
                Alternative::Greater => norm.sf((u - mu - 0.5) / sd),
                Alternative::Less => norm.sf((u_other - mu - 0.5) / sd),
            }
        };
        (p, "normal approximation")
    };
    let mut r = TestResult::new("wilcoxon_ranksum", u, p, vec![nx as f64, ny as f64]);
    r.trail.push(format!("rank sum of x = {rx}, {method}"));
    Ok(r)
}

/// Exact p-value over all C(n, nx) assignments, computed on doubled midranks.
fn exact_ranksum_p(ranks: &[f64], nx: usize, alt: Alternative) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled-rank sum s
    let mut ways = vec![vec![0.0f64; total + 1]; nx + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=nx).rev() {
            for s in (r..=total).rev() {
                ways[j][s] += ways[j - 1][s - r];
            }
        }
    }
    let dist = &ways[nx];
    let count: f64 = dist.iter().sum();
    let observed: usize = doubled[..nx].iter().sum();
    // |2W - E[2W]| scaled by n stays integral: E[2W] = nx * total / n
    let n = ranks.len();
    let dev = |s: usize| (s * n).abs_diff(nx * total);
    let hits: f64 = dist
        .iter()
        .enumerate()
        .filter(|(s, c)| {
            **c > 0.0
                && match alt {
                    Alternative::TwoSided => dev(*s) >= dev(observed),
                    Alternative::Less => *s <= observed,
                    Alternative::Greater => *s >= observed,
                }
        })
        .map(|(_, c)| c)
        .sum();
    (hits / count).min(1.0)
}

/// Normality-gated choice between Welch's t and the rank-sum test.
pub fn compare_pipelines(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Stats("pipeline comparison needs n >= 3 per sample".into()));
    }
    let mut trail = Vec::new();
    let mut normal = true;
    for (name, s) in [("a", a), ("b", b)] {
        match shapiro_wilk(s) {
            Ok(r) => {
                trail.push(format!("shapiro_wilk({name}): W = {:.6}, p = {:.6}", r.statistic, r.p_value));
                normal &= r.p_value > ALPHA;
            }
            // a constant sample is not normal; fall through to ranks
            Err(_) => {
                trail.push(format!("shapiro_wilk({name}): constant sample"));
                normal = false;
            }
        }
    }
    let mut r = if normal {
        trail.push("both samples look normal: Welch's t".into());
        welch_t(a, b)?
    } else {
        trail.push("normality rejected: Wilcoxon rank-sum".into());
        wilcoxon_ranksum(a, b, Alternative::TwoSided)?
    };
    trail.append(&mut r.trail);
    r.trail = trail;
    Ok(r)
}
