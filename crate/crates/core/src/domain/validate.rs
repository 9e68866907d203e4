use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Cohort, Label, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Surveyed days a week needs for its intake means to count as valid.
    pub min_valid_days: u32,
    /// Periods whose invalid-week fraction exceeds this are excluded.
    pub exclusion_threshold: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { min_valid_days: 5, exclusion_threshold: 0.5 }
    }
}

/// Data-quality accounting for one trial period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period_id: String,
    pub weeks: u32,
    pub subjects: usize,
    /// Subject-weeks of participating subjects (collected observations).
    pub subject_weeks: usize,
    pub invalid_nutrition_weeks: usize,
    pub invalid_nutrition_pct: f64,
    pub body_subjects: usize,
    pub body_subject_weeks: usize,
    pub missing_body_weeks: usize,
    /// `None` when no participant has body-composition data in this period.
    pub missing_body_pct: Option<f64>,
    pub normal_weeks: usize,
    pub risk_weeks: usize,
    pub excluded: bool,
}

impl PeriodReport {
    pub fn invalid_fraction(&self) -> f64 {
        ratio(self.invalid_nutrition_weeks, self.subject_weeks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub periods: Vec<PeriodReport>,
    /// Records that do not fit the calendar or reference missing foods.
    pub structural_issues: Vec<String>,
}

impl ValidationReport {
    pub fn excluded_periods(&self) -> BTreeSet<String> {
        self.periods
            .iter()
            .filter(|p| p.excluded)
            .map(|p| p.period_id.clone())
            .collect()
    }

    pub fn period(&self, id: &str) -> Option<&PeriodReport> {
        self.periods.iter().find(|p| p.period_id == id)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-period percentages of invalid nutritional weeks and missing body-composition weeks.
pub fn validate_cohort(c: &Cohort, cfg: &ValidationConfig) -> ValidationReport {
    let mut structural_issues = Vec::new();
    for m in c.meals() {
        if c.period_of(m.date).is_none() {
            structural_issues.push(format!(
                "meal ({}, {}) falls outside every trial period",
                m.subject_id, m.date
            ));
        }
        for it in &m.items {
            if !c.foods().contains_key(&it.food_id) {
                structural_issues.push(format!(
                    "meal ({}, {}) references unknown food {}",
                    m.subject_id, m.date, it.food_id
                ));
            }
        }
    }
    for b in c.body_samples() {
        if c.period_of(b.timestamp.date()).is_none() {
            structural_issues.push(format!(
                "body sample ({}, {}) falls outside every trial period",
                b.subject_id, b.timestamp
            ));
        }
    }

    let mut periods = Vec::new();
    for period in c.periods() {
        let participants = c.participants(period);
        let body_subjects = c.body_participants(period);
        let mut invalid = 0usize;
        let mut missing_body = 0usize;
        let mut normal = 0usize;
        let mut risk = 0usize;
        for s in &participants {
            let days = c.surveyed_days(s);
            let mut per_week = vec![0u32; period.weeks as usize];
            for d in days.iter().filter_map(|d| period.week_of(*d)) {
                per_week[d as usize] += 1;
            }
            invalid += per_week.iter().filter(|n| **n < cfg.min_valid_days).count();

            if body_subjects.contains(s) {
                let weeks_with_body: BTreeSet<u32> = c
                    .body_samples()
                    .iter()
                    .filter(|b| &b.subject_id == s)
                    .filter_map(|b| period.week_of(b.timestamp.date()))
                    .collect();
                missing_body += period.weeks as usize - weeks_with_body.len();
            }
            for (n, r) in week_labels(c, s, period) {
                normal += n;
                risk += r;
            }
        }
        let subject_weeks = participants.len() * period.weeks as usize;
        let body_subject_weeks = body_subjects.len() * period.weeks as usize;
        let mut report = PeriodReport {
            period_id: period.period_id.clone(),
            weeks: period.weeks,
            subjects: participants.len(),
            subject_weeks,
            invalid_nutrition_weeks: invalid,
            invalid_nutrition_pct: 100.0 * ratio(invalid, subject_weeks),
            body_subjects: body_subjects.len(),
            body_subject_weeks,
            missing_body_weeks: missing_body,
            missing_body_pct: (body_subject_weeks > 0)
                .then(|| 100.0 * ratio(missing_body, body_subject_weeks)),
            normal_weeks: normal,
            risk_weeks: risk,
            excluded: false,
        };
        report.excluded = subject_weeks > 0 && report.invalid_fraction() > cfg.exclusion_threshold;
        periods.push(report);
    }
    ValidationReport { config: *cfg, periods, structural_issues }
}

// (normal, risk) indicator per labelled week of the subject in the period
fn week_labels(c: &Cohort, s: &SubjectId, period: &super::TrialPeriod) -> Vec<(usize, usize)> {
    use chrono::Datelike;
    let mut labels: BTreeMap<(i32, u32), Label> = BTreeMap::new();
    for a in c.assessments().iter().filter(|a| &a.subject_id == s) {
        labels.insert(a.month(), a.label());
    }
    (0..period.weeks)
        .filter_map(|w| {
            let monday = period.week_monday(w);
            labels.get(&(monday.year(), monday.month())).map(|l| match l {
                Label::Normal => (1, 0),
                Label::Risk => (0, 1),
            })
        })
        .collect()
}
