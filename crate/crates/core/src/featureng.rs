//! Weekly feature rows from raw cohort records.
//!
//! A week's intake features are the mean daily grams of each macro-nutrient
//! over its valid days (both lunch and dinner surveyed). Body-composition
//! features are weekly means of smart-scale samples. Gaps are filled from the
//! nearest observed weeks of the same subject and period, rows are labelled
//! with the MNA assessment of the calendar month their Monday falls in.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_cohort, BodyCompositionSample, Cohort, FoodCompositionEntry, Label, Macro, Meal,
    MealRecord, SubjectId, ValidationConfig,
};
use crate::error::{Error, Result};

/// Grams per day of each [`Macro`], indexed by `Macro::index`.
pub type MacroGrams = [f64; 4];

/// FMI, BMI, BMR and body-water percentage.
pub type BodyValues = [f64; 4];

pub const INTAKE_COLUMNS: [&str; 4] = ["cereals", "animal_proteins", "vegetables", "fruit"];
pub const CLINICAL_COLUMNS: [&str; 6] =
    ["age", "sex", "physical_activity", "mmse", "comorbidities", "therapies"];
pub const BODY_COLUMNS: [&str; 4] = ["fmi", "bmi", "bmr", "body_water"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "categories")]
pub enum ColumnKind {
    Numeric,
    Boolean,
    /// Values are indices into the category list.
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Nutritional,
    Clinical,
    BodyComposition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub group: FeatureGroup,
}

pub fn feature_columns(with_body: bool) -> Vec<ColumnSpec> {
    let mut cols: Vec<ColumnSpec> = INTAKE_COLUMNS
        .iter()
        .map(|n| ColumnSpec {
            name: n.to_string(),
            kind: ColumnKind::Numeric,
            group: FeatureGroup::Nutritional,
        })
        .collect();
    for n in CLINICAL_COLUMNS {
        let kind = match n {
            "sex" => ColumnKind::Categorical(vec!["F".into(), "M".into()]),
            "physical_activity" => ColumnKind::Boolean,
            _ => ColumnKind::Numeric,
        };
        cols.push(ColumnSpec { name: n.to_string(), kind, group: FeatureGroup::Clinical });
    }
    if with_body {
        cols.extend(BODY_COLUMNS.iter().map(|n| ColumnSpec {
            name: n.to_string(),
            kind: ColumnKind::Numeric,
            group: FeatureGroup::BodyComposition,
        }));
    }
    cols
}

/// Sums `portion × consumed fraction × composition` over the items of one day's meals.
///
/// Returns `Ok(None)` when the day lacks a lunch or a dinner survey.
pub fn compute_daily_intake(
    day_meals: &[&MealRecord],
    foods: &BTreeMap<String, FoodCompositionEntry>,
) -> Result<Option<MacroGrams>> {
    let has = |m: Meal| day_meals.iter().any(|r| r.meal == m);
    if !(has(Meal::Lunch) && has(Meal::Dinner)) {
        return Ok(None);
    }
    let mut grams = [0.0; 4];
    for rec in day_meals {
        for item in &rec.items {
            let food = foods.get(&item.food_id).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown food_id {} in meal of {} on {}",
                    item.food_id, rec.subject_id, rec.date
                ))
            })?;
            let eaten = food.nominal_portion_g * item.fraction.value();
            for (g, share) in grams.iter_mut().zip(food.composition) {
                *g += eaten * share;
            }
        }
    }
    Ok(Some(grams))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeekAggregate {
    Valid(MacroGrams),
    Invalid,
}

/// Mean of the valid daily intakes, or `Invalid` below `min_valid_days` days.
pub fn aggregate_week(days: &[MacroGrams], min_valid_days: u32) -> WeekAggregate {
    assert!((1..=7).contains(&min_valid_days), "min_valid_days must be in [1, 7]");
    if days.len() < min_valid_days as usize {
        return WeekAggregate::Invalid;
    }
    WeekAggregate::Valid(mean_of(days))
}

fn mean_of<const N: usize>(rows: &[[f64; N]]) -> [f64; N] {
    let mut out = [0.0; N];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.map(|v| v / n)
}

/// Componentwise mean of the week's samples; `None` when there are none.
pub fn aggregate_body_week(samples: &[&BodyCompositionSample]) -> Option<BodyValues> {
    if samples.is_empty() {
        return None;
    }
    let vals: Vec<BodyValues> = samples.iter().map(|s| s.values()).collect();
    Some(mean_of(&vals))
}

/// Fills gaps with the mean of the nearest observed weeks on either side.
///
/// One-sided gaps copy their single neighbour; a series with no observed week stays empty.
/// Only originally observed values act as neighbours.
pub fn impute_missing_week<T: Copy + Imputable>(series: &[Option<T>]) -> Vec<Option<T>> {
    let n = series.len();
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for i in 0..n {
        prev[i] = last;
        if series[i].is_some() {
            last = Some(i);
        }
    }
    last = None;
    for i in (0..n).rev() {
        next[i] = last;
        if series[i].is_some() {
            last = Some(i);
        }
    }
    (0..n)
        .map(|i| match series[i] {
            Some(v) => Some(v),
            None => match (prev[i].and_then(|j| series[j]), next[i].and_then(|j| series[j])) {
                (Some(a), Some(b)) => Some(a.midpoint(&b)),
                (Some(a), None) | (None, Some(a)) => Some(a),
                (None, None) => None,
            },
        })
        .collect()
}

pub trait Imputable {
    fn midpoint(&self, other: &Self) -> Self;
}

impl Imputable for f64 {
    fn midpoint(&self, other: &f64) -> f64 {
        0.5 * (self + other)
    }
}

impl<const N: usize> Imputable for [f64; N] {
    fn midpoint(&self, other: &Self) -> Self {
        let mut out = *self;
        for (o, b) in out.iter_mut().zip(other) {
            *o = 0.5 * (*o + b);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeekValue<T> {
    Observed(T),
    Imputed(T),
    Missing,
}

impl<T: Copy> WeekValue<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            WeekValue::Observed(v) | WeekValue::Imputed(v) => Some(*v),
            WeekValue::Missing => None,
        }
    }
}

/// One subject-week with its feature groups and (optional) label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyObservation {
    pub subject_id: SubjectId,
    pub period_id: String,
    pub week_index: u32,
    pub week_monday: NaiveDate,
    pub intake: WeekValue<MacroGrams>,
    pub body: Option<WeekValue<BodyValues>>,
    pub label: Option<Label>,
}

/// Assigns each week the label of the assessment for its Monday's calendar month.
///
/// Weeks whose month has no assessment for the subject are dropped with a warning.
pub fn label_weeks(weeks: Vec<WeeklyObservation>, cohort: &Cohort) -> Vec<WeeklyObservation> {
    let mut by_month: HashMap<(&SubjectId, i32, u32), Label> = HashMap::new();
    for a in cohort.assessments() {
        let (y, m) = a.month();
        by_month.insert((&a.subject_id, y, m), a.label());
    }
    let mut dropped = 0usize;
    let out: Vec<WeeklyObservation> = weeks
        .into_iter()
        .filter_map(|mut w| {
            let key = (&w.subject_id, w.week_monday.year(), w.week_monday.month());
            match by_month.get(&key) {
                Some(l) => {
                    w.label = Some(*l);
                    Some(w)
                }
                None => {
                    dropped += 1;
                    None
                }
            }
        })
        .collect();
    if dropped > 0 {
        log::warn!("{dropped} weeks dropped: no assessment for their month");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub validation: ValidationConfig,
    pub impute: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { validation: ValidationConfig::default(), impute: true }
    }
}

/// All subject-weeks of non-excluded periods, imputed but not yet filtered or labelled.
pub fn weekly_observations(
    c: &Cohort,
    with_body: bool,
    cfg: &FeatureConfig,
) -> Result<Vec<WeeklyObservation>> {
    let report = validate_cohort(c, &cfg.validation);
    let excluded = report.excluded_periods();

    let mut meals_by_subject_day: BTreeMap<(&SubjectId, NaiveDate), Vec<&MealRecord>> =
        BTreeMap::new();
    for m in c.meals() {
        meals_by_subject_day.entry((&m.subject_id, m.date)).or_default().push(m);
    }

    let mut out = Vec::new();
    for period in c.periods() {
        if excluded.contains(&period.period_id) {
            log::info!("period {} excluded: too many invalid weeks", period.period_id);
            continue;
        }
        let body_subjects = c.body_participants(period);
        for s in c.participants(period) {
            let has_body = body_subjects.contains(&s);
            if with_body && !has_body {
                continue;
            }
            let weeks = period.weeks as usize;
            let mut daily: Vec<Vec<MacroGrams>> = vec![Vec::new(); weeks];
            for ((_, date), meals) in meals_by_subject_day
                .range((&s, period.start)..(&s, period.end_exclusive()))
            {
                if let Some(g) = compute_daily_intake(meals, c.foods())? {
                    let w = period.week_of(*date).expect("range restricted to period");
                    daily[w as usize].push(g);
                }
            }
            let intake: Vec<Option<MacroGrams>> = daily
                .iter()
                .map(|d| match aggregate_week(d, cfg.validation.min_valid_days) {
                    WeekAggregate::Valid(v) => Some(v),
                    WeekAggregate::Invalid => None,
                })
                .collect();
            let intake = fill(&intake, cfg.impute);

            let body = if with_body {
                let mut per_week: Vec<Vec<&BodyCompositionSample>> = vec![Vec::new(); weeks];
                for b in c.body_samples().iter().filter(|b| b.subject_id == s) {
                    if let Some(w) = period.week_of(b.timestamp.date()) {
                        per_week[w as usize].push(b);
                    }
                }
                let raw: Vec<Option<BodyValues>> =
                    per_week.iter().map(|v| aggregate_body_week(v)).collect();
                Some(fill(&raw, cfg.impute))
            } else {
                None
            };

            for w in 0..weeks {
                out.push(WeeklyObservation {
                    subject_id: s.clone(),
                    period_id: period.period_id.clone(),
                    week_index: w as u32,
                    week_monday: period.week_monday(w as u32),
                    intake: intake[w],
                    body: body.as_ref().map(|b| b[w]),
                    label: None,
                });
            }
        }
    }
    Ok(out)
}

fn fill<T: Copy + Imputable>(raw: &[Option<T>], impute: bool) -> Vec<WeekValue<T>> {
    let filled = if impute { impute_missing_week(raw) } else { raw.to_vec() };
    raw.iter()
        .zip(filled)
        .map(|(r, f)| match (r, f) {
            (Some(v), _) => WeekValue::Observed(*v),
            (None, Some(v)) => WeekValue::Imputed(v),
            (None, None) => WeekValue::Missing,
        })
        .collect()
}

/// Row-major raw feature matrix with labels and per-row provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub subjects: Vec<SubjectId>,
    pub periods: Vec<String>,
    pub weeks: Vec<u32>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.as_f64()).collect()
    }

    /// (normal, risk) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let risk = self.labels.iter().filter(|l| l.is_risk()).count();
        (self.labels.len() - risk, risk)
    }

    /// Row indices per subject, subjects in sorted order.
    pub fn subject_rows(&self) -> BTreeMap<SubjectId, Vec<usize>> {
        let mut out: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.subjects.iter().enumerate() {
            out.entry(s.clone()).or_default().push(i);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            periods: idx.iter().map(|&i| self.periods[i].clone()).collect(),
            weeks: idx.iter().map(|&i| self.weeks[i]).collect(),
        }
    }

    fn format_cell(&self, j: usize, v: f64) -> String {
        match &self.columns[j].kind {
            ColumnKind::Categorical(cats) => cats[v as usize].clone(),
            ColumnKind::Boolean => (v as u8).to_string(),
            ColumnKind::Numeric => v.to_string(),
        }
    }

    /// Writes `<stem>.csv` and the sidecar `<stem>.manifest.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let f = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut w = csv::Writer::from_writer(f);
        let mut header = vec!["subject_id".to_string(), "period_id".into(), "week".into()];
        header.extend(self.column_names());
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.subjects[i].to_string(),
                self.periods[i].clone(),
                self.weeks[i].to_string(),
            ];
            rec.extend(self.rows[i].iter().enumerate().map(|(j, v)| self.format_cell(j, *v)));
            rec.push(self.labels[i].as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;

        let manifest = FeatureManifest {
            columns: self.columns.clone(),
            label_column: "label".into(),
            subject_column: "subject_id".into(),
            positive_label: Label::Risk.as_str().into(),
            rows: self.n_rows(),
        };
        let man_path = dir.join(format!("{stem}.manifest.json"));
        let f = File::create(&man_path).map_err(|e| Error::io(&man_path, e))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(())
    }

    /// Reads a matrix written by [`FeatureMatrix::write`].
    pub fn read(dir: &Path, stem: &str) -> Result<FeatureMatrix> {
        let man_path = dir.join(format!("{stem}.manifest.json"));
        let f = File::open(&man_path).map_err(|e| Error::io(&man_path, e))?;
        let manifest: FeatureManifest = serde_json::from_reader(f)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = format!("{stem}.csv");
        let f = File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut rdr = csv::Reader::from_reader(f);
        let mut fm = FeatureMatrix {
            columns: manifest.columns.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
            subjects: Vec::new(),
            periods: Vec::new(),
            weeks: Vec::new(),
        };
        let d = fm.columns.len();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::ingest(&file, line, e.to_string()))?;
            if rec.len() != d + 4 {
                return Err(Error::ingest(&file, line, "column count does not match manifest"));
            }
            fm.subjects.push(SubjectId::new(&rec[0]));
            fm.periods.push(rec[1].to_string());
            fm.weeks.push(rec[2].parse().map_err(|_| Error::ingest(&file, line, "bad week"))?);
            let mut row = Vec::with_capacity(d);
            for (j, col) in fm.columns.iter().enumerate() {
                let raw = &rec[3 + j];
                let v = match &col.kind {
                    ColumnKind::Categorical(cats) => cats.iter().position(|c| c == raw).ok_or_else(
                        || Error::ingest(&file, line, format!("unknown category {raw:?} for {}", col.name)),
                    )? as f64,
                    _ => raw.parse().map_err(|_| {
                        Error::ingest(&file, line, format!("cannot parse {} from {raw:?}", col.name))
                    })?,
                };
                row.push(v);
            }
            fm.rows.push(row);
            fm.labels.push(match &rec[d + 3] {
                "Risk" => Label::Risk,
                "Normal" => Label::Normal,
                other => return Err(Error::ingest(&file, line, format!("unknown label {other:?}"))),
            });
        }
        Ok(fm)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    pub subject_column: String,
    pub positive_label: String,
    pub rows: usize,
}

/// One row per valid labelled week. `with_body` keeps only subject-periods with
/// smart-scale data and appends the four body-composition columns.
pub fn build_feature_matrix(c: &Cohort, with_body: bool, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let weeks = weekly_observations(c, with_body, cfg)?;
    let before = weeks.len();
    let complete: Vec<WeeklyObservation> = weeks
        .into_iter()
        .filter(|w| {
            w.intake.value().is_some()
                && w.body.map(|b| b.value().is_some()).unwrap_or(true)
        })
        .collect();
    if complete.len() < before {
        log::info!("{} weeks dropped: no observed neighbour to impute from", before - complete.len());
    }
    let labelled = label_weeks(complete, c);

    let columns = feature_columns(with_body);
    let mut fm = FeatureMatrix {
        columns,
        rows: Vec::with_capacity(labelled.len()),
        labels: Vec::with_capacity(labelled.len()),
        subjects: Vec::with_capacity(labelled.len()),
        periods: Vec::with_capacity(labelled.len()),
        weeks: Vec::with_capacity(labelled.len()),
    };
    for w in labelled {
        let p = c
            .profile(&w.subject_id)
            .expect("cohort guarantees every subject has a profile");
        let mut row: Vec<f64> = w.intake.value().expect("filtered").to_vec();
        row.extend([
            f64::from(p.age),
            match p.sex {
                crate::domain::Sex::F => 0.0,
                crate::domain::Sex::M => 1.0,
            },
            if p.physical_activity { 1.0 } else { 0.0 },
            p.mmse,
            f64::from(p.comorbidities),
            f64::from(p.therapies),
        ]);
        if let Some(b) = w.body {
            row.extend(b.value().expect("filtered"));
        }
        fm.rows.push(row);
        fm.labels.push(w.label.expect("labelled"));
        fm.subjects.push(w.subject_id);
        fm.periods.push(w.period_id);
        fm.weeks.push(w.week_index);
    }
    if fm.n_rows() == 0 {
        return Err(Error::InvalidInput(
            "feature matrix is empty: no valid labelled weeks".into(),
        ));
    }
    debug_assert!(Macro::ALL.len() == INTAKE_COLUMNS.len());
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ConsumedFraction, MealItem};

    fn food(id: &str, portion: f64, comp: [f64; 4]) -> FoodCompositionEntry {
        FoodCompositionEntry { food_id: id.into(), nominal_portion_g: portion, composition: comp }
    }

    fn meal(meal: Meal, items: &[(&str, f64)]) -> MealRecord {
        MealRecord {
            subject_id: SubjectId::new("s1"),
            date: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
            meal,
            items: items
                .iter()
                .map(|(f, v)| MealItem {
                    food_id: f.to_string(),
                    fraction: ConsumedFraction::try_from(*v).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn daily_intake_single_vegetable_item() {
        let foods: BTreeMap<_, _> =
            [("veg".to_string(), food("veg", 80.0, [0.0, 0.0, 1.0, 0.0]))].into();
        let l = meal(Meal::Lunch, &[("veg", 0.5)]);
        let d = meal(Meal::Dinner, &[]);
        let g = compute_daily_intake(&[&l, &d], &foods).unwrap().unwrap();
        assert_eq!(g, [0.0, 0.0, 40.0, 0.0]);
    }

    #[test]
    fn daily_intake_zero_fractions_and_missing_meal() {
        let foods: BTreeMap<_, _> =
            [("pasta".to_string(), food("pasta", 100.0, [0.8, 0.0, 0.1, 0.0]))].into();
        let l = meal(Meal::Lunch, &[("pasta", 0.0)]);
        let d = meal(Meal::Dinner, &[("pasta", 0.0)]);
        assert_eq!(compute_daily_intake(&[&l, &d], &foods).unwrap(), Some([0.0; 4]));
        assert_eq!(compute_daily_intake(&[&l], &foods).unwrap(), None);
        let bad = meal(Meal::Dinner, &[("nope", 1.0)]);
        assert!(compute_daily_intake(&[&l, &bad], &foods).is_err());
    }

    #[test]
    fn daily_intake_mixed_menu_matches_hand_sum() {
        let foods: BTreeMap<_, _> = [
            ("pasta".to_string(), food("pasta", 90.0, [0.7, 0.0, 0.2, 0.0])),
            ("fish".to_string(), food("fish", 120.0, [0.0, 0.9, 0.0, 0.0])),
            ("apple".to_string(), food("apple", 150.0, [0.0, 0.0, 0.0, 1.0])),
        ]
        .into();
        let l = meal(Meal::Lunch, &[("pasta", 0.75), ("fish", 1.0)]);
        let d = meal(Meal::Dinner, &[("apple", 0.25), ("pasta", 0.5)]);
        let g = compute_daily_intake(&[&l, &d], &foods).unwrap().unwrap();
        // pasta eaten: 90*0.75 + 90*0.5 = 112.5 g; fish 120 g; apple 37.5 g
        let expected = [112.5 * 0.7, 120.0 * 0.9, 112.5 * 0.2, 37.5];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn week_aggregation_threshold_and_mean() {
        let five = vec![[0.0, 0.0, 40.0, 0.0]; 5];
        assert_eq!(aggregate_week(&five, 5), WeekAggregate::Valid([0.0, 0.0, 40.0, 0.0]));
        assert_eq!(aggregate_week(&five[..4], 5), WeekAggregate::Invalid);
        let seven: Vec<MacroGrams> = (0..7).map(|i| [i as f64, 2.0 * i as f64, 1.0, 0.5]).collect();
        match aggregate_week(&seven, 5) {
            WeekAggregate::Valid(m) => assert_eq!(m, [3.0, 6.0, 1.0, 0.5]),
            _ => panic!(),
        }
    }

    #[test]
    fn body_week_means() {
        let ts = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let mk = |v: [f64; 4]| BodyCompositionSample {
            subject_id: SubjectId::new("s"),
            timestamp: ts,
            fmi: v[0],
            bmi: v[1],
            bmr: v[2],
            body_water_pct: v[3],
        };
        let a = mk([7.0, 22.0, 1200.0, 50.0]);
        let b = mk([8.0, 23.0, 1260.0, 48.0]);
        let c = mk([9.0, 21.0, 1230.0, 49.0]);
        assert_eq!(aggregate_body_week(&[&a]), Some(a.values()));
        assert_eq!(aggregate_body_week(&[]), None);
        assert_eq!(aggregate_body_week(&[&a, &b, &c]), Some([8.0, 22.0, 1230.0, 49.0]));
    }

    #[test]
    fn imputation_rules() {
        assert_eq!(
            impute_missing_week(&[Some(10.0), None, Some(14.0)]),
            vec![Some(10.0), Some(12.0), Some(14.0)]
        );
        assert_eq!(
            impute_missing_week(&[None, Some(8.0), Some(9.0)]),
            vec![Some(8.0), Some(8.0), Some(9.0)]
        );
        assert_eq!(impute_missing_week::<f64>(&[None, None]), vec![None, None]);
    }

    fn brute_force_impute(s: &[Option<f64>]) -> Vec<Option<f64>> {
        (0..s.len())
            .map(|i| {
                if s[i].is_some() {
                    return s[i];
                }
                let before = (0..i).rev().find_map(|j| s[j]);
                let after = (i + 1..s.len()).find_map(|j| s[j]);
                match (before, after) {
                    (Some(a), Some(b)) => Some((a + b) / 2.0),
                    (Some(a), None) | (None, Some(a)) => Some(a),
                    _ => None,
                }
            })
            .collect()
    }

    #[test]
    fn multi_gap_imputation_matches_nearest_search() {
        let s = [None, None, Some(3.0), None, None, None, Some(9.0), Some(1.0), None, Some(5.0), None];
        assert_eq!(impute_missing_week(&s), brute_force_impute(&s));
    }

    proptest::proptest! {
        #[test]
        fn imputed_values_stay_within_observed_range(
            s in proptest::collection::vec(proptest::option::of(-50.0f64..50.0), 1..30)
        ) {
            let out = impute_missing_week(&s);
            proptest::prop_assert_eq!(&out, &brute_force_impute(&s));
            let obs: Vec<f64> = s.iter().flatten().copied().collect();
            if let (Some(lo), Some(hi)) = (
                obs.iter().copied().reduce(f64::min),
                obs.iter().copied().reduce(f64::max),
            ) {
                for v in out.iter().flatten() {
                    proptest::prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn week_mean_is_order_invariant(
            mut days in proptest::collection::vec(proptest::array::uniform4(0.0f64..300.0), 0..8),
            k in 1u32..=7,
        ) {
            let a = aggregate_week(&days, k);
            proptest::prop_assert_eq!(matches!(a, WeekAggregate::Invalid), days.len() < k as usize);
            days.reverse();
            let b = aggregate_week(&days, k);
            match (a, b) {
                (WeekAggregate::Valid(x), WeekAggregate::Valid(y)) => {
                    for (u, v) in x.iter().zip(y) {
                        proptest::prop_assert!((u - v).abs() < 1e-9);
                    }
                }
                (WeekAggregate::Invalid, WeekAggregate::Invalid) => {}
                _ => proptest::prop_assert!(false),
            }
        }
    }
}
