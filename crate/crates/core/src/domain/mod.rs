//! Cohort data model, CSV ingestion and structural validation.

mod io;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{ingest_cohort, write_cohort, IngestSchema, IngestSummary};
pub use validate::{validate_cohort, PeriodReport, ValidationConfig, ValidationReport};

/// MNA-SF scores at or below this value are labelled as malnutrition risk.
pub const MNA_RISK_THRESHOLD: f64 = 23.5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Self {
        SubjectId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::F, Sex::M];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Risk,
}

impl Label {
    pub fn from_mna(score: f64) -> Label {
        if score <= MNA_RISK_THRESHOLD {
            Label::Risk
        } else {
            Label::Normal
        }
    }

    /// 1.0 for the positive (risk) class.
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Risk => 1.0,
        }
    }

    pub fn is_risk(self) -> bool {
        self == Label::Risk
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Risk => "Risk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: SubjectId,
    pub sex: Sex,
    pub age: u32,
    pub physical_activity: bool,
    pub mmse: f64,
    pub comorbidities: u32,
    pub therapies: u32,
}

impl SubjectProfile {
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(60..=110).contains(&self.age) {
            return Err(format!("age {} outside [60, 110]", self.age));
        }
        if !(0.0..=30.0).contains(&self.mmse) || !is_half_step(self.mmse) {
            return Err(format!(
                "MMSE {} must lie in [0, 30] on a 0.5 grid",
                self.mmse
            ));
        }
        Ok(())
    }
}

fn is_half_step(x: f64) -> bool {
    (x * 2.0 - (x * 2.0).round()).abs() < 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Meal {
    Lunch,
    Dinner,
}

impl Meal {
    pub fn as_str(self) -> &'static str {
        match self {
            Meal::Lunch => "lunch",
            Meal::Dinner => "dinner",
        }
    }

    pub fn parse(s: &str) -> Option<Meal> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lunch" => Some(Meal::Lunch),
            "dinner" => Some(Meal::Dinner),
            _ => None,
        }
    }
}

/// Portion of a served item that was eaten, on the survey's quarter scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConsumedFraction(u8);

impl ConsumedFraction {
    pub const LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

    pub fn from_quarters(q: u8) -> Option<Self> {
        (q <= 4).then_some(ConsumedFraction(q))
    }

    pub fn quarters(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) * 0.25
    }
}

impl TryFrom<f64> for ConsumedFraction {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        let q = v * 4.0;
        if v.is_finite() && (q - q.round()).abs() < 1e-9 && (0.0..=4.0).contains(&q.round()) {
            Ok(ConsumedFraction(q.round() as u8))
        } else {
            Err(format!(
                "consumed fraction {v} is not on the 5-level scale {{0, 0.25, 0.5, 0.75, 1}}"
            ))
        }
    }
}

impl From<ConsumedFraction> for f64 {
    fn from(c: ConsumedFraction) -> f64 {
        c.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealItem {
    pub food_id: String,
    pub fraction: ConsumedFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealRecord {
    pub subject_id: SubjectId,
    pub date: NaiveDate,
    pub meal: Meal,
    pub items: Vec<MealItem>,
}

/// Macro-nutrient classes tracked by the intake features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Macro {
    Cereals,
    AnimalProteins,
    Vegetables,
    Fruit,
}

impl Macro {
    pub const ALL: [Macro; 4] = [
        Macro::Cereals,
        Macro::AnimalProteins,
        Macro::Vegetables,
        Macro::Fruit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn column(self) -> &'static str {
        match self {
            Macro::Cereals => "cereals",
            Macro::AnimalProteins => "animal_proteins",
            Macro::Vegetables => "vegetables",
            Macro::Fruit => "fruit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodCompositionEntry {
    pub food_id: String,
    pub nominal_portion_g: f64,
    /// Fraction of the portion mass per [`Macro`], indexed by `Macro::index`.
    pub composition: [f64; 4],
}

impl FoodCompositionEntry {
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(self.nominal_portion_g > 0.0 && self.nominal_portion_g.is_finite()) {
            return Err(format!(
                "nominal portion {} g must be positive",
                self.nominal_portion_g
            ));
        }
        if self.composition.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("composition fractions must lie in [0, 1]".into());
        }
        if self.composition.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err("composition fractions sum above 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyCompositionSample {
    pub subject_id: SubjectId,
    pub timestamp: NaiveDateTime,
    pub fmi: f64,
    pub bmi: f64,
    pub bmr: f64,
    pub body_water_pct: f64,
}

impl BodyCompositionSample {
    pub fn check(&self) -> std::result::Result<(), String> {
        let all_positive = [self.fmi, self.bmi, self.bmr, self.body_water_pct]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err("body composition values must be strictly positive".into());
        }
        if !(10.0..=60.0).contains(&self.bmi) {
            return Err(format!("BMI {} outside [10, 60]", self.bmi));
        }
        if self.body_water_pct >= 100.0 {
            return Err(format!("body water {}% must be below 100", self.body_water_pct));
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 4] {
        [self.fmi, self.bmi, self.bmr, self.body_water_pct]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAssessment {
    pub subject_id: SubjectId,
    pub month_end_date: NaiveDate,
    pub mna_score: f64,
}

impl MonthlyAssessment {
    pub fn label(&self) -> Label {
        Label::from_mna(self.mna_score)
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if !(0.0..=30.0).contains(&self.mna_score) || !is_half_step(self.mna_score) {
            return Err(format!(
                "MNA score {} must lie in [0, 30] on a 0.5 grid",
                self.mna_score
            ));
        }
        Ok(())
    }

    /// (year, month) the assessment covers.
    pub fn month(&self) -> (i32, u32) {
        (self.month_end_date.year(), self.month_end_date.month())
    }
}

/// A monitoring period: `weeks` consecutive ISO weeks starting on the Monday `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPeriod {
    pub period_id: String,
    pub start: NaiveDate,
    pub weeks: u32,
}

impl TrialPeriod {
    pub fn end_exclusive(&self) -> NaiveDate {
        self.start + chrono::Duration::days(7 * i64::from(self.weeks))
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date < self.end_exclusive()
    }

    /// Zero-based week index of `date` inside the period.
    pub fn week_of(&self, date: NaiveDate) -> Option<u32> {
        self.contains(date)
            .then(|| ((date - self.start).num_days() / 7) as u32)
    }

    pub fn week_monday(&self, week: u32) -> NaiveDate {
        self.start + chrono::Duration::days(7 * i64::from(week))
    }
}

/// Immutable, cross-referenced collection of all monitoring records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    profiles: BTreeMap<SubjectId, SubjectProfile>,
    meals: Vec<MealRecord>,
    foods: BTreeMap<String, FoodCompositionEntry>,
    body: Vec<BodyCompositionSample>,
    assessments: Vec<MonthlyAssessment>,
    periods: Vec<TrialPeriod>,
}

impl Cohort {
    /// Builds a cohort, checking every record invariant and cross-reference.
    pub fn new(
        profiles: Vec<SubjectProfile>,
        meals: Vec<MealRecord>,
        foods: Vec<FoodCompositionEntry>,
        body: Vec<BodyCompositionSample>,
        assessments: Vec<MonthlyAssessment>,
        periods: Vec<TrialPeriod>,
    ) -> Result<Cohort> {
        let mut profile_map = BTreeMap::new();
        for p in profiles {
            p.check()
                .map_err(|m| Error::InvalidInput(format!("subject {}: {m}", p.subject_id)))?;
            if profile_map.insert(p.subject_id.clone(), p).is_some() {
                return Err(Error::InvalidInput("duplicate subject profile".into()));
            }
        }
        let mut food_map = BTreeMap::new();
        for f in foods {
            f.check()
                .map_err(|m| Error::InvalidInput(format!("food {}: {m}", f.food_id)))?;
            let id = f.food_id.clone();
            if food_map.insert(id.clone(), f).is_some() {
                return Err(Error::InvalidInput(format!("duplicate food {id}")));
            }
        }
        check_periods(&periods)?;

        let known = |id: &SubjectId| -> Result<()> {
            if profile_map.contains_key(id) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("unknown subject_id {id}")))
            }
        };
        let mut seen = BTreeSet::new();
        for m in &meals {
            known(&m.subject_id)?;
            if !seen.insert((m.subject_id.clone(), m.date, m.meal)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate meal record ({}, {}, {})",
                    m.subject_id,
                    m.date,
                    m.meal.as_str()
                )));
            }
        }
        for b in &body {
            known(&b.subject_id)?;
            b.check()
                .map_err(|m| Error::InvalidInput(format!("subject {}: {m}", b.subject_id)))?;
        }
        for a in &assessments {
            known(&a.subject_id)?;
            a.check()
                .map_err(|m| Error::InvalidInput(format!("subject {}: {m}", a.subject_id)))?;
        }
        Ok(Cohort {
            profiles: profile_map,
            meals,
            foods: food_map,
            body,
            assessments,
            periods,
        })
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SubjectProfile> {
        self.profiles.values()
    }

    pub fn profile(&self, id: &SubjectId) -> Option<&SubjectProfile> {
        self.profiles.get(id)
    }

    pub fn meals(&self) -> &[MealRecord] {
        &self.meals
    }

    pub fn foods(&self) -> &BTreeMap<String, FoodCompositionEntry> {
        &self.foods
    }

    pub fn body_samples(&self) -> &[BodyCompositionSample] {
        &self.body
    }

    pub fn assessments(&self) -> &[MonthlyAssessment] {
        &self.assessments
    }

    pub fn periods(&self) -> &[TrialPeriod] {
        &self.periods
    }

    pub fn period(&self, id: &str) -> Option<&TrialPeriod> {
        self.periods.iter().find(|p| p.period_id == id)
    }

    pub fn period_of(&self, date: NaiveDate) -> Option<&TrialPeriod> {
        self.periods.iter().find(|p| p.contains(date))
    }

    pub fn n_subjects(&self) -> usize {
        self.profiles.len()
    }

    /// Subjects with at least one meal or body record inside the period, sorted.
    pub fn participants(&self, period: &TrialPeriod) -> Vec<SubjectId> {
        let mut ids: BTreeSet<&SubjectId> = BTreeSet::new();
        ids.extend(
            self.meals
                .iter()
                .filter(|m| period.contains(m.date))
                .map(|m| &m.subject_id),
        );
        ids.extend(
            self.body
                .iter()
                .filter(|b| period.contains(b.timestamp.date()))
                .map(|b| &b.subject_id),
        );
        ids.into_iter().cloned().collect()
    }

    /// Subjects with at least one body-composition sample inside the period.
    pub fn body_participants(&self, period: &TrialPeriod) -> BTreeSet<SubjectId> {
        self.body
            .iter()
            .filter(|b| period.contains(b.timestamp.date()))
            .map(|b| b.subject_id.clone())
            .collect()
    }

    /// Dates on which the subject has both a lunch and a dinner survey.
    pub fn surveyed_days(&self, subject: &SubjectId) -> BTreeSet<NaiveDate> {
        let mut lunch = BTreeSet::new();
        let mut dinner = BTreeSet::new();
        for m in self.meals.iter().filter(|m| &m.subject_id == subject) {
            match m.meal {
                Meal::Lunch => lunch.insert(m.date),
                Meal::Dinner => dinner.insert(m.date),
            };
        }
        lunch.intersection(&dinner).copied().collect()
    }

    /// Assessment label for a calendar month, if the subject was assessed then.
    pub fn month_label(&self, subject: &SubjectId, year: i32, month: u32) -> Option<Label> {
        self.assessments
            .iter()
            .filter(|a| &a.subject_id == subject && a.month() == (year, month))
            .map(MonthlyAssessment::label)
            .next_back()
    }
}

fn check_periods(periods: &[TrialPeriod]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for p in periods {
        if p.start.weekday() != Weekday::Mon {
            return Err(Error::InvalidInput(format!(
                "period {} must start on a Monday, got {}",
                p.period_id, p.start
            )));
        }
        if p.weeks == 0 {
            return Err(Error::InvalidInput(format!("period {} has no weeks", p.period_id)));
        }
        if !ids.insert(p.period_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate period {}", p.period_id)));
        }
    }
    let mut sorted: Vec<&TrialPeriod> = periods.iter().collect();
    sorted.sort_by_key(|p| p.start);
    for w in sorted.windows(2) {
        if w[1].start < w[0].end_exclusive() {
            return Err(Error::InvalidInput(format!(
                "periods {} and {} overlap",
                w[0].period_id, w[1].period_id
            )));
        }
    }
    Ok(())
}
