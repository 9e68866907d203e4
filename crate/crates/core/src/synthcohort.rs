//! Seeded synthetic cohorts shaped like a long-term-care monitoring study.
//!
//! Subjects get a clinical profile, per-subject intake means and (for a
//! fraction of them) smart-scale baselines drawn from a Gaussian copula with
//! target correlations. Monthly risk labels come from a logistic latent model
//! over planted, piecewise-linear feature effects; the planted effects double
//! as the ground truth for trend sign checks on model explanations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    write_cohort, BodyCompositionSample, Cohort, ConsumedFraction, FoodCompositionEntry,
    IngestSchema, Label, Meal, MealItem, MealRecord, MonthlyAssessment, Sex, SubjectId,
    SubjectProfile, TrialPeriod,
};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Piecewise,
}

/// Planted effect of one feature on the risk log-odds, as linear interpolation
/// through `knots` (flat outside the first and last knot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrend {
    pub feature: String,
    pub direction: Direction,
    pub knots: Vec<(f64, f64)>,
    /// Values where the effect changes regime, for reporting.
    pub breakpoints: Vec<f64>,
}

impl FeatureTrend {
    pub fn effect(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSpec {
    pub features: Vec<FeatureTrend>,
}

impl TrendSpec {
    pub fn get(&self, feature: &str) -> Option<&FeatureTrend> {
        self.features.iter().find(|t| t.feature == feature)
    }

    fn effect(&self, feature: &str, x: f64) -> f64 {
        self.get(feature).map_or(0.0, |t| t.effect(x))
    }
}

fn trend(feature: &str, direction: Direction, knots: &[(f64, f64)], breakpoints: &[f64]) -> FeatureTrend {
    FeatureTrend {
        feature: feature.into(),
        direction,
        knots: knots.to_vec(),
        breakpoints: breakpoints.to_vec(),
    }
}

impl Default for TrendSpec {
    fn default() -> Self {
        use Direction::*;
        TrendSpec {
            features: vec![
                // steepest rise below 20, negative in the overweight range
                trend("bmi", Decreasing, &[(15.0, 2.4), (20.0, 1.9), (23.0, 0.0), (28.0, -1.0), (40.0, -1.3)], &[20.0]),
                trend("fmi", Decreasing, &[(2.0, 0.6), (14.0, -0.6)], &[]),
                trend("bmr", Decreasing, &[(900.0, 0.4), (1700.0, -0.4)], &[]),
                trend("body_water", Increasing, &[(35.0, -0.5), (65.0, 0.5)], &[]),
                // positive for impairment, strongest in the mild range, drop at 24
                trend("mmse", Piecewise, &[(0.0, 0.5), (17.5, 0.8), (18.0, 1.5), (23.5, 1.7), (24.0, -1.1), (30.0, -1.2)], &[18.0, 24.0]),
                trend("vegetables", Decreasing, &[(20.0, 1.5), (60.0, 0.6), (90.0, -0.6), (140.0, -1.1)], &[]),
                trend("sex", Piecewise, &[(0.0, 0.5), (1.0, -1.2)], &[]),
                trend("physical_activity", Piecewise, &[(0.0, 0.4), (1.0, -0.7)], &[]),
                trend("age", Piecewise, &[(60.0, -0.5), (85.0, 0.4), (88.0, -0.2), (95.0, 0.5)], &[85.0, 90.0]),
                trend("comorbidities", Piecewise, &[(0.0, 0.2), (4.0, 0.2), (5.0, -0.2), (10.0, -0.3)], &[4.0]),
                trend("therapies", Increasing, &[(0.0, -0.4), (10.0, 0.5)], &[]),
                trend("animal_proteins", Decreasing, &[(20.0, 0.3), (120.0, -0.3)], &[]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub period_id: String,
    pub start: NaiveDate,
    pub weeks: u32,
    /// Probability that a subject takes part in this period.
    pub participation: f64,
    /// Mean probability that a day has both meal surveys filled in.
    pub adherence: f64,
}

/// Generator settings. Body-composition correlations are ordered FMI, BMI, BMR, body water.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    pub n_subjects: usize,
    pub periods: Vec<PeriodSpec>,
    pub female_fraction: f64,
    /// Target fraction of risk-labelled weeks.
    pub risk_prior: f64,
    pub body_coverage: f64,
    pub body_correlation: [[f64; 4]; 4],
    pub missing_body_week_rate: f64,
    pub near_threshold_fraction: f64,
    /// Minimum planned weeks for a subject to be planted as near-threshold.
    pub near_threshold_min_weeks: u32,
    pub subject_effect_sd: f64,
    pub month_noise_sd: f64,
    pub trends: TrendSpec,
}

pub fn default_body_correlation() -> [[f64; 4]; 4] {
    [
        [1.0, 0.81, 0.35, -0.91],
        [0.81, 1.0, 0.47, -0.57],
        [0.35, 0.47, 1.0, -0.25],
        [-0.91, -0.57, -0.25, 1.0],
    ]
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl Default for SyntheticCohortSpec {
    fn default() -> Self {
        let p = |id: &str, start, weeks, participation, adherence| PeriodSpec {
            period_id: id.into(),
            start,
            weeks,
            participation,
            adherence,
        };
        SyntheticCohortSpec {
            n_subjects: 42,
            periods: vec![
                p("T1", ymd(2018, 3, 5), 22, 0.35, 0.93),
                p("T2", ymd(2019, 12, 2), 17, 0.2, 0.45),
                p("T3", ymd(2020, 6, 1), 13, 0.5, 0.93),
                p("T4", ymd(2021, 1, 4), 17, 0.55, 0.95),
                p("T5", ymd(2021, 7, 5), 27, 0.55, 0.92),
            ],
            female_fraction: 0.77,
            risk_prior: 0.33,
            body_coverage: 0.64,
            body_correlation: default_body_correlation(),
            missing_body_week_rate: 0.17,
            near_threshold_fraction: 0.10,
            near_threshold_min_weeks: 30,
            subject_effect_sd: 0.4,
            month_noise_sd: 0.5,
            trends: TrendSpec::default(),
        }
    }
}

impl SyntheticCohortSpec {
    pub fn check(&self) -> Result<()> {
        let frac = [
            self.female_fraction,
            self.risk_prior,
            self.body_coverage,
            self.missing_body_week_rate,
            self.near_threshold_fraction,
        ];
        if frac.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidInput("generator fractions must lie in [0, 1]".into()));
        }
        if self.n_subjects == 0 || self.periods.is_empty() {
            return Err(Error::InvalidInput("generator needs subjects and periods".into()));
        }
        for p in &self.periods {
            if p.start.weekday() != chrono::Weekday::Mon {
                return Err(Error::InvalidInput(format!("period {} must start on a Monday", p.period_id)));
            }
        }
        Ok(())
    }
}

/// What the generator planted, for round-trip and trend checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted mean daily grams per macro-nutrient.
    pub intake_means: BTreeMap<SubjectId, [f64; 4]>,
    pub body_baselines: BTreeMap<SubjectId, [f64; 4]>,
    pub body_subjects: BTreeSet<SubjectId>,
    pub near_threshold: BTreeSet<SubjectId>,
    /// Subject ids per period id.
    pub participation: BTreeMap<String, Vec<SubjectId>>,
    pub risk_threshold: f64,
    /// True if the correlation matrix needed a PSD repair.
    pub correlation_repaired: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub truth: GroundTruth,
}

/// Planted feature directions for explanation sign checks.
pub fn trend_oracle(spec: &SyntheticCohortSpec) -> TrendSpec {
    spec.trends.clone()
}

struct FoodItem {
    id: &'static str,
    portion: f64,
    macro_index: usize,
    share: f64,
}

// three rotating items per macro-nutrient, each attributed to a single class
const MENU: [FoodItem; 12] = [
    FoodItem { id: "pasta", portion: 110.0, macro_index: 0, share: 0.9 },
    FoodItem { id: "rice", portion: 100.0, macro_index: 0, share: 0.9 },
    FoodItem { id: "bread", portion: 120.0, macro_index: 0, share: 0.85 },
    FoodItem { id: "chicken", portion: 100.0, macro_index: 1, share: 0.8 },
    FoodItem { id: "fish", portion: 110.0, macro_index: 1, share: 0.75 },
    FoodItem { id: "beef", portion: 90.0, macro_index: 1, share: 0.85 },
    FoodItem { id: "salad", portion: 80.0, macro_index: 2, share: 1.0 },
    FoodItem { id: "cooked_veg", portion: 80.0, macro_index: 2, share: 1.0 },
    FoodItem { id: "soup", portion: 90.0, macro_index: 2, share: 0.9 },
    FoodItem { id: "apple", portion: 150.0, macro_index: 3, share: 1.0 },
    FoodItem { id: "pear", portion: 140.0, macro_index: 3, share: 1.0 },
    FoodItem { id: "fruit_salad", portion: 160.0, macro_index: 3, share: 0.95 },
];

fn food_table() -> Vec<FoodCompositionEntry> {
    MENU.iter()
        .map(|f| {
            let mut composition = [0.0; 4];
            composition[f.macro_index] = f.share;
            FoodCompositionEntry {
                food_id: f.id.to_string(),
                nominal_portion_g: f.portion,
                composition,
            }
        })
        .collect()
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn half_step(x: f64) -> f64 {
    (x * 2.0).round() / 2.0
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
fn cholesky<const N: usize>(a: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_lower<const N: usize>(l: &[[f64; N]; N], b: &[f64; N]) -> [f64; N] {
    let mut x = [0.0; N];
    for i in 0..N {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn mul_lower<const N: usize>(l: &[[f64; N]; N], x: &[f64; N]) -> [f64; N] {
    let mut y = [0.0; N];
    for i in 0..N {
        y[i] = (0..=i).map(|k| l[i][k] * x[k]).sum();
    }
    y
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
fn jacobi_eigen<const N: usize>(a: &[[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut m = *a;
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut eig = [0.0; N];
    for (i, e) in eig.iter_mut().enumerate() {
        *e = m[i][i];
    }
    (eig, v)
}

/// Clips negative eigenvalues and rescales back to unit diagonal.
/// Returns the matrix and whether any repair was needed.
pub fn nearest_correlation<const N: usize>(r: &[[f64; N]; N]) -> ([[f64; N]; N], bool) {
    const FLOOR: f64 = 1e-6;
    let (eig, v) = jacobi_eigen(r);
    if eig.iter().all(|e| *e >= FLOOR) {
        return (*r, false);
    }
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            out[i][j] = (0..N).map(|k| v[i][k] * eig[k].max(FLOOR) * v[j][k]).sum();
        }
    }
    let d: Vec<f64> = (0..N).map(|i| out[i][i].sqrt()).collect();
    for i in 0..N {
        for j in 0..N {
            out[i][j] /= d[i] * d[j];
        }
    }
    (out, true)
}

/// Draws `weights.len()` correlated standard-normal vectors whose weighted
/// sample mean is zero and weighted sample covariance equals `r` exactly.
fn exact_moment_normals(rng: &mut Rng, weights: &[f64], r: &[[f64; 4]; 4]) -> Vec<[f64; 4]> {
    let n = weights.len();
    let l_target = cholesky(r).expect("repaired correlation is positive definite");
    let z: Vec<[f64; 4]> = (0..n).map(|_| [normal(rng), normal(rng), normal(rng), normal(rng)]).collect();
    if n <= 4 {
        return z.iter().map(|v| mul_lower(&l_target, v)).collect();
    }
    let wsum: f64 = weights.iter().sum();
    let mut mean = [0.0; 4];
    for (v, w) in z.iter().zip(weights) {
        for k in 0..4 {
            mean[k] += w * v[k] / wsum;
        }
    }
    let mut cov = [[0.0; 4]; 4];
    for (v, w) in z.iter().zip(weights) {
        for i in 0..4 {
            for j in 0..4 {
                cov[i][j] += w * (v[i] - mean[i]) * (v[j] - mean[j]) / wsum;
            }
        }
    }
    let Some(l_sample) = cholesky(&cov) else {
        return z.iter().map(|v| mul_lower(&l_target, v)).collect();
    };
    z.iter()
        .map(|v| {
            let centered = [v[0] - mean[0], v[1] - mean[1], v[2] - mean[2], v[3] - mean[3]];
            mul_lower(&l_target, &solve_lower(&l_sample, &centered))
        })
        .collect()
}

const BODY_MEAN: [f64; 4] = [8.5, 24.5, 1300.0, 50.0];
const BODY_SD: [f64; 4] = [3.0, 4.2, 170.0, 5.5];
const BODY_WEEKLY_SD: f64 = 0.2;
/// Month-to-month drift of body composition (z units) and vegetable intake
/// (relative to the subject's mean). Labels follow the drifted values, so
/// planted effects also act within subjects rather than only across a few
/// dozen of them.
const BODY_MONTH_SD: f64 = 0.6;
const VEG_MONTH_CV: f64 = 0.35;

/// Vegetable intake (g/day) and body-composition (z) offsets for one month.
type MonthDrift = (f64, [f64; 4]);

fn body_from_z(z: &[f64; 4]) -> [f64; 4] {
    let v = [
        BODY_MEAN[0] + BODY_SD[0] * z[0],
        BODY_MEAN[1] + BODY_SD[1] * z[1],
        BODY_MEAN[2] + BODY_SD[2] * z[2],
        BODY_MEAN[3] + BODY_SD[3] * z[3],
    ];
    [
        v[0].clamp(1.0, 30.0),
        v[1].clamp(13.0, 50.0),
        v[2].clamp(700.0, 2600.0),
        v[3].clamp(28.0, 75.0),
    ]
}

struct SubjectDraw {
    profile: SubjectProfile,
    intake: [f64; 4],
    body_z: [f64; 4],
    has_body: bool,
    effect: f64,
    periods: Vec<usize>,
}

fn month_key(d: NaiveDate) -> (i32, u32) {
    (d.year(), d.month())
}

fn month_end(y: i32, m: u32) -> NaiveDate {
    let (ny, nm) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
    ymd(ny, nm, 1) - Duration::days(1)
}

/// Generates a cohort. Pure function of `(spec, seed)`.
pub fn generate_cohort(spec: &SyntheticCohortSpec, seed: u64) -> Result<SyntheticCohort> {
    spec.check()?;
    let (corr, repaired) = nearest_correlation(&spec.body_correlation);
    if repaired {
        log::warn!("body-composition correlation matrix was not PSD; repaired");
    }
    let trends = &spec.trends;
    let n = spec.n_subjects;
    let periods: Vec<TrialPeriod> = spec
        .periods
        .iter()
        .map(|p| TrialPeriod { period_id: p.period_id.clone(), start: p.start, weeks: p.weeks })
        .collect();
    // the low-adherence period is discarded downstream; participation there does not count
    let usable: Vec<bool> = spec.periods.iter().map(|p| p.adherence >= 0.7).collect();

    let mut rng = rng_for(seed, "subjects", 0);
    let width = n.to_string().len().max(2);
    let mut subjects: Vec<SubjectDraw> = (0..n)
        .map(|i| {
            let sex = if rng.random::<f64>() < spec.female_fraction { Sex::F } else { Sex::M };
            let profile = SubjectProfile {
                subject_id: SubjectId::new(format!("S{:0width$}", i + 1)),
                sex,
                age: rng.random_range(70..=97),
                physical_activity: rng.random::<f64>() < 0.4,
                mmse: half_step(rng.random_range(10.0..30.0)),
                comorbidities: rng.random_range(2..=7),
                therapies: rng.random_range(1..=9),
            };
            let intake = [
                (165.0 + 30.0 * normal(&mut rng)).clamp(40.0, 330.0),
                (70.0 + 18.0 * normal(&mut rng)).clamp(15.0, 150.0),
                (80.0 + 24.0 * normal(&mut rng)).clamp(25.0, 150.0),
                (115.0 + 30.0 * normal(&mut rng)).clamp(20.0, 280.0),
            ];
            let mut chosen: Vec<usize> = (0..periods.len())
                .filter(|&k| rng.random::<f64>() < spec.periods[k].participation)
                .collect();
            if !chosen.iter().any(|&k| usable[k]) {
                let options: Vec<usize> = (0..periods.len()).filter(|&k| usable[k]).collect();
                if let Some(&k) = options.choose(&mut rng) {
                    chosen.push(k);
                    chosen.sort_unstable();
                }
            }
            SubjectDraw {
                profile,
                intake,
                body_z: [0.0; 4],
                has_body: rng.random::<f64>() < spec.body_coverage,
                effect: spec.subject_effect_sd * normal(&mut rng),
                periods: chosen,
            }
        })
        .collect();

    let usable_weeks = |s: &SubjectDraw| -> u32 {
        s.periods.iter().filter(|&&k| usable[k]).map(|&k| periods[k].weeks).sum()
    };

    // body baselines: exact weighted moments for the weighed subjects, plain draws for the rest
    let mut rng = rng_for(seed, "body", 0);
    let body_idx: Vec<usize> = (0..n).filter(|&i| subjects[i].has_body).collect();
    let weights: Vec<f64> = body_idx.iter().map(|&i| f64::from(usable_weeks(&subjects[i]))).collect();
    let zs = exact_moment_normals(&mut rng, &weights, &corr);
    for (&i, z) in body_idx.iter().zip(zs) {
        subjects[i].body_z = z;
    }
    let l = cholesky(&corr).expect("repaired correlation is positive definite");
    for s in subjects.iter_mut().filter(|s| !s.has_body) {
        s.body_z = mul_lower(&l, &[normal(&mut rng), normal(&mut rng), normal(&mut rng), normal(&mut rng)]);
    }

    let logit_at = |s: &SubjectDraw, vegetables: f64, body_z: &[f64; 4]| -> f64 {
        let p = &s.profile;
        let b = body_from_z(body_z);
        let sex = if p.sex == Sex::M { 1.0 } else { 0.0 };
        let pa = if p.physical_activity { 1.0 } else { 0.0 };
        trends.effect("bmi", b[1])
            + trends.effect("fmi", b[0])
            + trends.effect("bmr", b[2])
            + trends.effect("body_water", b[3])
            + trends.effect("mmse", p.mmse)
            + trends.effect("vegetables", vegetables)
            + trends.effect("animal_proteins", s.intake[1])
            + trends.effect("sex", sex)
            + trends.effect("physical_activity", pa)
            + trends.effect("age", f64::from(p.age))
            + trends.effect("comorbidities", f64::from(p.comorbidities))
            + trends.effect("therapies", f64::from(p.therapies))
            + s.effect
    };
    let subject_logit = |s: &SubjectDraw| logit_at(s, s.intake[2], &s.body_z);

    // near-threshold subjects: the most risk-like long-stay subjects, always assessed Normal
    let n_near = (spec.near_threshold_fraction * n as f64).round() as usize;
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| usable_weeks(&subjects[i]) >= spec.near_threshold_min_weeks)
        .collect();
    // ranked without the trend-checked features: always-Normal subjects at the
    // extremes of bmi, mmse or vegetables would invert those trends locally
    let rank = |s: &SubjectDraw| {
        subject_logit(s)
            - trends.effect("bmi", body_from_z(&s.body_z)[1])
            - trends.effect("mmse", s.profile.mmse)
            - trends.effect("vegetables", s.intake[2])
    };
    candidates.sort_by(|&a, &b| rank(&subjects[b]).total_cmp(&rank(&subjects[a])).then(a.cmp(&b)));
    let near: BTreeSet<usize> = candidates.into_iter().take(n_near).collect();

    // planted risk-like profile for near-threshold subjects
    for &i in &near {
        let s = &mut subjects[i];
        s.profile.sex = Sex::F;
        s.profile.physical_activity = false;
        // cognitively intact: mmse never drifts, so an always-Normal subject in
        // its risk band would be the only evidence there and invert the trend
        s.profile.mmse = s.profile.mmse.max(half_step(24.5 + (i % 3) as f64));
    }

    // monthly latent scores
    let mut rng = rng_for(seed, "months", 0);
    let mut month_weeks: BTreeMap<(usize, (i32, u32)), u32> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        for &k in &s.periods {
            for w in 0..periods[k].weeks {
                *month_weeks.entry((i, month_key(periods[k].week_monday(w)))).or_default() += 1;
            }
        }
    }
    let mut usable_month_weeks: BTreeMap<(usize, (i32, u32)), u32> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        for &k in s.periods.iter().filter(|&&k| usable[k]) {
            for w in 0..periods[k].weeks {
                *usable_month_weeks.entry((i, month_key(periods[k].week_monday(w)))).or_default() += 1;
            }
        }
    }
    // drifts are centred per subject over usable weeks so planted means stay exact
    let mut drift: BTreeMap<(usize, (i32, u32)), MonthDrift> = BTreeMap::new();
    let mut drift_rng = rng_for(seed, "drift", 0);
    for i in 0..n {
        let months: Vec<(i32, u32)> = month_weeks.range((i, (i32::MIN, 0))..(i + 1, (i32::MIN, 0))).map(|(&(_, m), _)| m).collect();
        let veg_sd = VEG_MONTH_CV * subjects[i].intake[2];
        let draws: Vec<(f64, [f64; 4])> = months
            .iter()
            .map(|_| {
                let v = veg_sd * normal(&mut drift_rng).clamp(-2.0, 2.0);
                let z = mul_lower(&l, &[normal(&mut drift_rng), normal(&mut drift_rng), normal(&mut drift_rng), normal(&mut drift_rng)]);
                (v, z.map(|c| BODY_MONTH_SD * c))
            })
            .collect();
        let weight = |m: &(i32, u32)| f64::from(usable_month_weeks.get(&(i, *m)).copied().unwrap_or(0));
        let total: f64 = months.iter().map(weight).sum::<f64>().max(1.0);
        let mut mean = (0.0, [0.0; 4]);
        for (m, (v, z)) in months.iter().zip(&draws) {
            let w = weight(m);
            mean.0 += w * v / total;
            for c in 0..4 {
                mean.1[c] += w * z[c] / total;
            }
        }
        for (m, (v, z)) in months.iter().zip(draws) {
            drift.insert((i, *m), (v - mean.0, [z[0] - mean.1[0], z[1] - mean.1[1], z[2] - mean.1[2], z[3] - mean.1[3]]));
        }
    }
    let drifted_z = |s: &SubjectDraw, d: &[f64; 4]| [s.body_z[0] + d[0], s.body_z[1] + d[1], s.body_z[2] + d[2], s.body_z[3] + d[3]];
    let mut latent: BTreeMap<(usize, (i32, u32)), f64> = BTreeMap::new();
    for &(i, m) in month_weeks.keys() {
        let noise = spec.month_noise_sd * normal(&mut rng);
        let (dv, dz) = &drift[&(i, m)];
        let s = &subjects[i];
        latent.insert((i, m), logit_at(s, s.intake[2] + dv, &drifted_z(s, dz)) + noise);
    }
    // threshold so the weighted risk share over all weeks hits the prior
    let total_w: f64 = month_weeks.values().map(|w| f64::from(*w)).sum();
    let mut regular: Vec<(f64, f64)> = latent
        .iter()
        .filter(|((i, _), _)| !near.contains(i))
        .map(|(k, v)| (*v, f64::from(month_weeks[k])))
        .collect();
    regular.sort_by(|a, b| b.0.total_cmp(&a.0));
    let target = spec.risk_prior * total_w;
    let mut acc = 0.0;
    let mut threshold = f64::INFINITY;
    for (v, w) in &regular {
        if acc + w / 2.0 > target {
            break;
        }
        acc += w;
        threshold = *v;
    }

    let mut rng = rng_for(seed, "assessments", 0);
    let mut assessments = Vec::new();
    for (&(i, (y, m)), v) in &latent {
        let label = if !near.contains(&i) && *v >= threshold { Label::Risk } else { Label::Normal };
        let mna = match label {
            Label::Risk => half_step(rng.random_range(17.0..23.5)),
            Label::Normal if near.contains(&i) => half_step(rng.random_range(24.0..25.0)),
            Label::Normal => half_step(rng.random_range(25.5..29.5)),
        };
        debug_assert_eq!(Label::from_mna(mna), label);
        assessments.push(MonthlyAssessment {
            subject_id: subjects[i].profile.subject_id.clone(),
            month_end_date: month_end(y, m),
            mna_score: mna,
        });
    }

    let foods = food_table();
    let mut meals = Vec::new();
    let mut body = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        for &k in &s.periods {
            let period = &periods[k];
            let pspec = &spec.periods[k];
            let mut rng = rng_for(seed, "weeks", (i * 64 + k) as u64);
            let adherence = (pspec.adherence + 0.05 * normal(&mut rng)).clamp(0.05, 1.0);
            let meal_p = adherence.sqrt();
            for day in 0..(7 * period.weeks) {
                let date = period.start + Duration::days(i64::from(day));
                let mut intake = s.intake;
                intake[2] = (intake[2] + drift[&(i, month_key(period.week_monday(day / 7)))].0).max(5.0);
                for (slot, meal) in [Meal::Lunch, Meal::Dinner].into_iter().enumerate() {
                    if rng.random::<f64>() >= meal_p {
                        continue;
                    }
                    let mut items = Vec::with_capacity(6);
                    for (m, mean) in intake.iter().enumerate() {
                        let mut remaining = (mean * (1.0 + 0.12 * normal(&mut rng))).max(0.0) / 2.0;
                        for r in 0..3 {
                            if remaining <= 0.0 {
                                break;
                            }
                            let item = &MENU[m * 3 + (day as usize + slot + r) % 3];
                            let capacity = item.portion * item.share;
                            let want = (remaining / capacity).min(1.0) * 4.0;
                            // expected, not realized, grams keep the rounding unbiased
                            remaining -= want / 4.0 * capacity;
                            let lower = want.floor();
                            let q = if rng.random::<f64>() < want - lower { lower + 1.0 } else { lower };
                            items.push(MealItem {
                                food_id: item.id.to_string(),
                                fraction: ConsumedFraction::from_quarters(q.min(4.0) as u8)
                                    .expect("quarter in range"),
                            });
                        }
                    }
                    meals.push(MealRecord {
                        subject_id: s.profile.subject_id.clone(),
                        date,
                        meal,
                        items,
                    });
                }
            }
            if s.has_body {
                for w in 0..period.weeks {
                    let dev: [f64; 4] = [normal(&mut rng), normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                    let dev = mul_lower(&l, &dev);
                    if rng.random::<f64>() < spec.missing_body_week_rate {
                        continue;
                    }
                    let base = drifted_z(s, &drift[&(i, month_key(period.week_monday(w)))].1);
                    let z = [
                        base[0] + BODY_WEEKLY_SD * dev[0],
                        base[1] + BODY_WEEKLY_SD * dev[1],
                        base[2] + BODY_WEEKLY_SD * dev[2],
                        base[3] + BODY_WEEKLY_SD * dev[3],
                    ];
                    let v = body_from_z(&z);
                    let n_samples = rng.random_range(1..=2);
                    for _ in 0..n_samples {
                        let day = rng.random_range(0..7);
                        let date = period.week_monday(w) + Duration::days(day);
                        let time = NaiveTime::from_hms_opt(rng.random_range(7..11), rng.random_range(0..60), 0)
                            .expect("valid time");
                        body.push(BodyCompositionSample {
                            subject_id: s.profile.subject_id.clone(),
                            timestamp: date.and_time(time),
                            fmi: (v[0] * 100.0).round() / 100.0,
                            bmi: (v[1] * 100.0).round() / 100.0,
                            bmr: (v[2] * 10.0).round() / 10.0,
                            body_water_pct: (v[3] * 100.0).round() / 100.0,
                        });
                    }
                }
            }
        }
    }
    body.sort_by(|a, b| (&a.subject_id, a.timestamp).cmp(&(&b.subject_id, b.timestamp)));

    let mut participation: BTreeMap<String, Vec<SubjectId>> = BTreeMap::new();
    for s in &subjects {
        for &k in &s.periods {
            participation
                .entry(periods[k].period_id.clone())
                .or_default()
                .push(s.profile.subject_id.clone());
        }
    }
    let truth = GroundTruth {
        intake_means: subjects.iter().map(|s| (s.profile.subject_id.clone(), s.intake)).collect(),
        body_baselines: subjects
            .iter()
            .map(|s| (s.profile.subject_id.clone(), body_from_z(&s.body_z)))
            .collect(),
        body_subjects: subjects
            .iter()
            .filter(|s| s.has_body)
            .map(|s| s.profile.subject_id.clone())
            .collect(),
        near_threshold: near.iter().map(|&i| subjects[i].profile.subject_id.clone()).collect(),
        participation,
        risk_threshold: threshold,
        correlation_repaired: repaired,
    };
    let cohort = Cohort::new(
        subjects.into_iter().map(|s| s.profile).collect(),
        meals,
        foods,
        body,
        assessments,
        periods,
    )?;
    Ok(SyntheticCohort { cohort, truth })
}

/// Writes the cohort tables plus `synth_spec.json` and `synth_truth.json`.
pub fn write_synthetic(dir: &Path, synth: &SyntheticCohort, spec: &SyntheticCohortSpec, seed: u64) -> Result<()> {
    write_cohort(&synth.cohort, dir, &IngestSchema::default())?;
    #[derive(Serialize)]
    struct Stored<'a> {
        seed: u64,
        spec: &'a SyntheticCohortSpec,
    }
    let path = dir.join("synth_spec.json");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(f, &Stored { seed, spec })?;
    let path = dir.join("synth_truth.json");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(f, &synth.truth)?;
    Ok(())
}

/// Share of value bins where the sign of the mean attribution matches the
/// sign of the planted effect. Both series are centred on their mean over
/// the given rows.
///
/// Rows are sorted by feature value and cut into `bins` equal-count bins.
/// Returns (matching bins, total bins).
pub fn trend_sign_agreement(values: &[f64], attributions: &[f64], trend: &FeatureTrend, bins: usize) -> (usize, usize) {
    assert_eq!(values.len(), attributions.len());
    let n = values.len();
    if n == 0 || bins == 0 {
        return (0, 0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let planted: Vec<f64> = values.iter().map(|v| trend.effect(*v)).collect();
    let centre = planted.iter().sum::<f64>() / n as f64;
    // attributions are centred on the model's training expectation, not on these rows
    let obs_centre = attributions.iter().sum::<f64>() / n as f64;
    let bins = bins.min(n);
    let mut matched = 0;
    for b in 0..bins {
        let lo = b * n / bins;
        let hi = (b + 1) * n / bins;
        let idx = &order[lo..hi];
        let obs = idx.iter().map(|&i| attributions[i] - obs_centre).sum::<f64>() / idx.len() as f64;
        let exp = idx.iter().map(|&i| planted[i] - centre).sum::<f64>() / idx.len() as f64;
        if obs.signum() == exp.signum() || exp == 0.0 {
            matched += 1;
        }
    }
    (matched, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_effect_interpolates_and_saturates() {
        let t = trend("x", Direction::Decreasing, &[(0.0, 1.0), (10.0, -1.0)], &[]);
        assert_eq!(t.effect(-5.0), 1.0);
        assert_eq!(t.effect(5.0), 0.0);
        assert_eq!(t.effect(50.0), -1.0);
    }

    #[test]
    fn cholesky_reproduces_matrix() {
        let r = default_body_correlation();
        let l = cholesky(&r).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let v: f64 = (0..4).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - r[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psd_repair_only_when_needed() {
        let (r, repaired) = nearest_correlation(&default_body_correlation());
        assert!(!repaired);
        assert_eq!(r, default_body_correlation());
        let bad = [[1.0, 0.95, -0.95], [0.95, 1.0, 0.95], [-0.95, 0.95, 1.0]];
        let (fixed, repaired) = nearest_correlation(&bad);
        assert!(repaired);
        assert!(cholesky(&fixed).is_some());
        for (i, row) in fixed.iter().enumerate() {
            assert!((row[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_moments_hold_for_weighted_draws() {
        let mut rng = rng_for(1, "t", 0);
        let w: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let r = default_body_correlation();
        let z = exact_moment_normals(&mut rng, &w, &r);
        let ws: f64 = w.iter().sum();
        for i in 0..4 {
            for j in 0..4 {
                let c: f64 = z.iter().zip(&w).map(|(v, wt)| wt * v[i] * v[j]).sum::<f64>() / ws;
                assert!((c - r[i][j]).abs() < 1e-9, "{i}{j}: {c}");
            }
        }
    }

    #[test]
    fn oracle_directions() {
        let t = trend_oracle(&SyntheticCohortSpec::default());
        assert_eq!(t.get("bmi").unwrap().direction, Direction::Decreasing);
        assert_eq!(t.get("vegetables").unwrap().direction, Direction::Decreasing);
        let mmse = t.get("mmse").unwrap();
        assert_eq!(mmse.direction, Direction::Piecewise);
        assert!(mmse.breakpoints.contains(&24.0));
        assert!(mmse.effect(22.0) > 0.0 && mmse.effect(26.0) < 0.0);
    }
}
